//! Scenario files and the end-to-end pipeline:
//! sources -> coupling network -> front end -> spectrum -> attribution -> bands.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bands::{self, extended_f64, BandPlan};
use crate::circuit::{coupling_ratio, CouplingGeometry, DeviceTermination};
use crate::error::{Error, Result};
use crate::explain::{self, ExplanationReport};
use crate::formats;
use crate::frontend::{self, CaptureRecord, FrontendConfig};
use crate::rng;
use crate::sources::{self, Coupling, SourceSpec};
use crate::spectral::{self, Peak, SpectrumFrame, SpectrumMode, WindowKind};
use crate::waveform::DenseWaveform;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureSettings {
    pub duration_s: f64,
    pub dense_rate_hz: f64,
    pub seed: u64,
}

impl Default for CaptureSettings {
    fn default() -> Self {
        Self {
            duration_s: 0.2,
            dense_rate_hz: 5e6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub n: usize,
    pub window: WindowKind,
    pub mode: SpectrumMode,
    pub margin_db: f64,
    /// Attribution tolerance in FFT bins.
    pub tol_bins: f64,
    /// Linear amplitude correction applied to every spectrum.
    pub calibration: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            n: 8192,
            window: WindowKind::Chebyshev { sidelobe_db: 120.0 },
            mode: SpectrumMode::Welch,
            margin_db: spectral::DEFAULT_MARGIN_DB,
            tol_bins: explain::DEFAULT_TOL_BINS,
            calibration: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandSettings {
    pub signal_level_dbv: f64,
    pub band_width_hz: f64,
    #[serde(with = "extended_f64")]
    pub sir_min_db: f64,
    #[serde(with = "extended_f64")]
    pub snr_min_db: f64,
    pub include_spurs: bool,
}

impl Default for BandSettings {
    fn default() -> Self {
        Self {
            signal_level_dbv: bands::DEFAULT_SIGNAL_LEVEL_DBV,
            band_width_hz: bands::DEFAULT_BAND_WIDTH_HZ,
            sir_min_db: bands::DEFAULT_SIR_MIN_DB,
            snr_min_db: bands::DEFAULT_SNR_MIN_DB,
            include_spurs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub geometry: CouplingGeometry,
    #[serde(default)]
    pub device: DeviceTermination,
    #[serde(default)]
    pub frontend: FrontendConfig,
    #[serde(default)]
    pub capture: CaptureSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub bands: BandSettings,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            sources: Vec::new(),
            geometry: CouplingGeometry::default(),
            device: DeviceTermination::default(),
            frontend: FrontendConfig::default(),
            capture: CaptureSettings::default(),
            analysis: AnalysisSettings::default(),
            bands: BandSettings::default(),
        }
    }
}

fn schema_err(path: &str, e: impl std::fmt::Display) -> Error {
    Error::schema(format!("{path}: {e}"))
}

impl Scenario {
    /// Every catalog emitter, default geometry, floating wearable.
    pub fn default_catalog() -> Self {
        Self {
            sources: sources::catalog_default().entries,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        if let Err(e) = text.parse::<toml::Table>() {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(1);
            return Err(Error::parse(line, e.message().to_string()));
        }
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| format!(" (line {})", text[..s.start].lines().count().max(1)))
                .unwrap_or_default();
            Error::schema(format!("{}{at}", e.message()))
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::schema(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        for (i, s) in self.sources.iter().enumerate() {
            let path = format!("sources[{i}] ({})", s.name);
            s.validate().map_err(|e| schema_err(&path, e))?;
            s.c_intf().map_err(|e| schema_err(&path, e))?;
        }
        self.geometry.validate().map_err(|e| schema_err("geometry", e))?;
        self.device.validate().map_err(|e| schema_err("device", e))?;
        self.frontend.validate().map_err(|e| schema_err("frontend", e))?;
        let c = &self.capture;
        if !(c.duration_s.is_finite() && c.duration_s > 0.0) {
            return Err(schema_err("capture.duration_s", "must be > 0"));
        }
        frontend::decimation_factor(c.dense_rate_hz, self.frontend.adc.fs_hz)
            .map_err(|e| schema_err("capture.dense_rate_hz", e))?;
        let a = &self.analysis;
        if a.n < spectral::MIN_N || !a.n.is_power_of_two() {
            return Err(schema_err("analysis.n", format!("{} is not a power of two >= 128", a.n)));
        }
        a.window.validate().map_err(|e| schema_err("analysis.window", e))?;
        if !(a.margin_db.is_finite() && a.margin_db > 0.0) {
            return Err(schema_err("analysis.margin_db", "must be > 0"));
        }
        if !(a.tol_bins.is_finite() && a.tol_bins >= 1.0) {
            return Err(schema_err("analysis.tol_bins", "must be >= 1"));
        }
        if !(a.calibration.is_finite() && a.calibration > 0.0) {
            return Err(schema_err("analysis.calibration", "must be > 0"));
        }
        let b = &self.bands;
        if !b.signal_level_dbv.is_finite() {
            return Err(schema_err("bands.signal_level_dbv", "must be finite"));
        }
        if !(b.band_width_hz.is_finite() && b.band_width_hz > 0.0) {
            return Err(schema_err("bands.band_width_hz", "must be > 0"));
        }
        if b.sir_min_db.is_nan() || b.snr_min_db.is_nan() {
            return Err(schema_err("bands", "thresholds must not be NaN"));
        }
        Ok(())
    }

    /// Number of ADC samples the capture will hold.
    pub fn capture_len(&self) -> usize {
        (self.capture.duration_s * self.frontend.adc.fs_hz).round() as usize
    }

    /// Changes the ADC rate, moving the dense rate up to the next multiple.
    pub fn set_fs(&mut self, fs: f64) {
        self.frontend.adc.fs_hz = fs;
        let m = (self.capture.dense_rate_hz / fs - 1e-9).ceil().max(1.0);
        self.capture.dense_rate_hz = m * fs;
    }
}

/// Coupling geometry as seen by one source.
pub fn geometry_for(base: &CouplingGeometry, src: &SourceSpec) -> Result<Option<CouplingGeometry>> {
    let c_intf = src.c_intf().map_err(Error::from)?;
    Ok(c_intf.map(|c| CouplingGeometry {
        c_intf: c,
        c_intf_gnd: src.grounding.c_intf_gnd(),
        ..*base
    }))
}

/// Summed device-input waveform of all sources.
pub fn device_input(scenario: &Scenario) -> Result<DenseWaveform> {
    let m = frontend::decimation_factor(scenario.capture.dense_rate_hz, scenario.frontend.adc.fs_hz)?;
    let rate = scenario.capture.dense_rate_hz;
    let dense_len = scenario.capture_len() * m;
    let duration = dense_len as f64 / rate;
    let mut total = DenseWaveform::zeros(rate, dense_len);
    for (i, src) in scenario.sources.iter().enumerate() {
        let ctx = || format!("sources[{i}] ({})", src.name);
        let seed = rng::derive_seed(scenario.capture.seed, rng::SOURCE_STREAM_BASE + i as u64);
        let geometry = geometry_for(&scenario.geometry, src).map_err(|e| e.context(ctx()))?;
        let device = scenario.device;
        let wave = match (geometry, src.coupling) {
            (Some(g), _) => sources::synthesize_coupled(src, duration, rate, seed, &|f| coupling_ratio(&g, &device, f)),
            (None, Coupling::Direct) => {
                sources::synthesize_coupled(src, duration, rate, seed, &|_| Ok(Complex64::new(1.0, 0.0)))
            }
            (None, _) => unreachable!("only direct coupling lacks a capacitance"),
        }
        .map_err(|e| Error::from(e).context(ctx()))?;
        total.accumulate(&wave);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub frame: SpectrumFrame,
    pub peaks: Vec<Peak>,
    pub report: ExplanationReport,
    pub plan: BandPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub capture: CaptureRecord,
    pub analysis: AnalysisOutput,
}

pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutput> {
    scenario.validate()?;
    let input = device_input(scenario)?;
    let capture =
        frontend::run_chain(&input, &scenario.frontend, scenario.capture.seed).map_err(|e| Error::from(e).context("frontend"))?;
    let analysis = analyze(&capture, &scenario.analysis, &scenario.bands)?;
    Ok(ScenarioOutput { capture, analysis })
}

/// Spectrum, attribution and band plan for an existing capture.
pub fn analyze(capture: &CaptureRecord, analysis: &AnalysisSettings, band: &BandSettings) -> Result<AnalysisOutput> {
    let mut frame = spectral::compute_spectrum(capture, analysis.n, analysis.window, analysis.mode)
        .map_err(|e| Error::from(e).context("analysis"))?;
    if analysis.calibration != 1.0 {
        frame.apply_calibration(analysis.calibration);
    }
    analyze_frame(frame, analysis, band)
}

/// Peaks, attribution and band plan for an existing spectrum.
pub fn analyze_frame(frame: SpectrumFrame, analysis: &AnalysisSettings, band: &BandSettings) -> Result<AnalysisOutput> {
    let peaks = spectral::detect_peaks(&frame, analysis.margin_db).map_err(|e| Error::from(e).context("analysis"))?;
    let bw = frame.bin_width();
    let report = explain::classify_peaks(&peaks, frame.fs, analysis.tol_bins * bw, bw)
        .map_err(|e| Error::from(e).context("explain"))?;
    let scored = bands::score_bands(&frame, &report, band.signal_level_dbv, band.band_width_hz, band.include_spurs)
        .map_err(|e| Error::from(e).context("bands"))?;
    let plan = bands::recommend(&scored, band.sir_min_db, band.snr_min_db).map_err(|e| Error::from(e).context("bands"))?;
    Ok(AnalysisOutput {
        frame,
        peaks,
        report,
        plan,
    })
}

/// Reads a capture CSV and analyzes it.
pub fn analyze_capture(path: &Path, analysis: &AnalysisSettings, band: &BandSettings) -> Result<AnalysisOutput> {
    let capture = load_capture(path)?;
    analyze(&capture, analysis, band)
}

pub fn load_capture(path: &Path) -> Result<CaptureRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    formats::capture_from_csv(&text).map_err(|e| e.context(path.display().to_string()))
}

/// Returns a copy of `scenario` with the numeric field at dotted `path`
/// (e.g. `geometry.c_g`, `sources.0.fundamental_hz`) set to `value`.
pub fn with_field(scenario: &Scenario, path: &str, value: f64) -> Result<Scenario> {
    let mut root = toml::Value::try_from(scenario).map_err(|e| Error::schema(e.to_string()))?;
    let mut node = &mut root;
    for key in path.split('.') {
        node = match node {
            toml::Value::Table(t) => t
                .get_mut(key)
                .ok_or_else(|| Error::schema(format!("sweep path '{path}': no field '{key}'")))?,
            toml::Value::Array(a) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| Error::schema(format!("sweep path '{path}': '{key}' is not an index")))?;
                a.get_mut(idx)
                    .ok_or_else(|| Error::schema(format!("sweep path '{path}': index {idx} out of range")))?
            }
            _ => return Err(Error::schema(format!("sweep path '{path}': '{key}' is below a scalar"))),
        };
    }
    *node = match node {
        toml::Value::Integer(_) if value.fract() == 0.0 && value.abs() < 9.0e15 => toml::Value::Integer(value as i64),
        toml::Value::Integer(_) => {
            return Err(Error::schema(format!("sweep path '{path}' is an integer field, got {value}")))
        }
        toml::Value::Float(_) => toml::Value::Float(value),
        _ => return Err(Error::schema(format!("sweep path '{path}' is not a numeric field"))),
    };
    let out: Scenario = root.try_into().map_err(|e: toml::de::Error| Error::schema(e.message().to_string()))?;
    out.validate()?;
    Ok(out)
}

/// One row of a long-format sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub metric: &'static str,
    pub result: f64,
}

fn sweep_metrics(value: f64, out: &ScenarioOutput) -> Vec<SweepRow> {
    let a = &out.analysis;
    let worst_sir = a
        .plan
        .bands
        .iter()
        .map(|b| b.sir_db)
        .fold(f64::INFINITY, f64::min);
    let strongest = a.peaks.first().map_or(f64::NAN, |p| p.mag);
    let row = |metric, result| SweepRow { value, metric, result };
    vec![
        row("nf_dbv", a.frame.nf),
        row("peak_count", a.peaks.len() as f64),
        row("strongest_peak_dbv", strongest),
        row("fundamental_count", a.report.fundamentals_hz.len() as f64),
        row("unexplained_count", a.report.unexplained_count as f64),
        row("worst_sir_db", worst_sir),
        row("lowest_recommended_edge_hz", a.plan.lowest_recommended_edge_hz.unwrap_or(f64::NAN)),
        row("operating_edge_hz", a.plan.operating_edge_hz.unwrap_or(f64::NAN)),
    ]
}

/// Runs the scenario once per value, in parallel, keeping value order.
pub fn sweep(scenario: &Scenario, path: &str, values: &[f64], threads: usize) -> Result<Vec<SweepRow>> {
    let variants: Vec<Scenario> = values
        .iter()
        .map(|&v| with_field(scenario, path, v))
        .collect::<Result<_>>()?;
    let threads = threads.clamp(1, variants.len().max(1));
    let mut results: Vec<Option<Result<ScenarioOutput>>> = (0..variants.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_idx, chunk) in results.chunks_mut(variants.len().div_ceil(threads).max(1)).enumerate() {
            let start = chunk_idx * variants.len().div_ceil(threads).max(1);
            let variants = &variants;
            scope.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run_scenario(&variants[start + j]));
                }
            });
        }
    });
    let mut rows = Vec::new();
    for (v, res) in values.iter().zip(results) {
        let out = res.expect("every sweep point runs").map_err(|e| e.context(format!("{path} = {v}")))?;
        rows.extend(sweep_metrics(*v, &out));
    }
    Ok(rows)
}

pub fn sweep_to_csv(path: &str, rows: &[SweepRow]) -> String {
    let mut out = String::from("parameter,value,metric,result\n");
    for r in rows {
        out.push_str(&format!(
            "{path},{},{},{}\n",
            r.value,
            r.metric,
            extended_f64::format_value(r.result)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorClass;

    #[test]
    fn minimal_file_takes_defaults() {
        let s = Scenario::from_toml_str("schema = 1\n").unwrap();
        assert_eq!(s, Scenario::default());
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::default_catalog();
        let text = s.to_toml_string();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn unknown_keys_and_versions_are_schema_errors() {
        let e = Scenario::from_toml_str("schema = 1\n[geometry]\nc_gg = 1e-12\n").unwrap_err();
        assert_eq!(e.class(), ErrorClass::Schema);
        assert!(e.to_string().contains("c_gg"), "{e}");
        let e = Scenario::from_toml_str("schema = 2\n").unwrap_err();
        assert_eq!(e.class(), ErrorClass::Schema);
        let e = Scenario::from_toml_str("schema = 1\n[capture]\ndense_rate_hz = 4.9e6\n").unwrap_err();
        assert_eq!(e.class(), ErrorClass::Schema);
    }

    #[test]
    fn syntax_errors_are_parse_errors_with_line() {
        let e = Scenario::from_toml_str("schema = 1\n\n[geometry\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
    }

    #[test]
    fn with_field_edits_nested_values() {
        let s = Scenario::default_catalog();
        let t = with_field(&s, "geometry.c_g", 2.4e-12).unwrap();
        assert_eq!(t.geometry.c_g, 2.4e-12);
        let t = with_field(&s, "sources.0.fundamental_hz", 45e3).unwrap();
        assert_eq!(t.sources[0].fundamental_hz, 45e3);
        let t = with_field(&s, "capture.seed", 9.0).unwrap();
        assert_eq!(t.capture.seed, 9);
        assert!(with_field(&s, "geometry.nope", 1.0).is_err());
        assert!(with_field(&s, "device.kind", 1.0).is_err());
    }

    #[test]
    fn set_fs_keeps_integer_ratio() {
        let mut s = Scenario::default();
        s.set_fs(450e3);
        assert_eq!(s.capture.dense_rate_hz, 12.0 * 450e3);
        assert!(s.validate().is_ok());
    }
}
