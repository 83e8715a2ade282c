//! Environmental interference emitters: a default catalog, distance-calibrated
//! coupling and dense time-domain synthesis.

use std::f64::consts::{SQRT_2, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{CircuitError, SourceError};
use crate::rng;
use crate::waveform::DenseWaveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceClass {
    Cfl,
    FluorescentTube,
    DimmableFluorescent,
    Led,
    Laptop,
    LaptopAdaptor,
    DigitalDisplay,
    MainsAppliance,
    /// Bench signal generator used for injected test tones.
    SignalGenerator,
}

impl SourceClass {
    pub const ALL: [SourceClass; 9] = [
        SourceClass::Cfl,
        SourceClass::FluorescentTube,
        SourceClass::DimmableFluorescent,
        SourceClass::Led,
        SourceClass::Laptop,
        SourceClass::LaptopAdaptor,
        SourceClass::DigitalDisplay,
        SourceClass::MainsAppliance,
        SourceClass::SignalGenerator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SourceClass::Cfl => "cfl",
            SourceClass::FluorescentTube => "fluorescent_tube",
            SourceClass::DimmableFluorescent => "dimmable_fluorescent",
            SourceClass::Led => "led",
            SourceClass::Laptop => "laptop",
            SourceClass::LaptopAdaptor => "laptop_adaptor",
            SourceClass::DigitalDisplay => "digital_display",
            SourceClass::MainsAppliance => "mains_appliance",
            SourceClass::SignalGenerator => "signal_generator",
        }
    }

    /// Coupling relative to a CFL bulb at the same distance (radiating surface area).
    fn coupling_scale(self) -> f64 {
        match self {
            SourceClass::Cfl | SourceClass::Led | SourceClass::Laptop | SourceClass::SignalGenerator => 1.0,
            SourceClass::FluorescentTube | SourceClass::DimmableFluorescent => 1.5,
            SourceClass::LaptopAdaptor => 0.5,
            SourceClass::DigitalDisplay => 0.2,
            SourceClass::MainsAppliance => 2.0,
        }
    }
}

/// Light-level settings of a frequency-controlled dimmable ballast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimmerSetting {
    Low,
    High,
}

impl DimmerSetting {
    pub fn fundamental_hz(self) -> f64 {
        match self {
            DimmerSetting::Low => 40e3,
            DimmerSetting::High => 53e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicLevel {
    pub order: u32,
    /// Level relative to the fundamental, dBc.
    pub rel_db: f64,
}

/// Band-limited noise: `density_dbv_per_rthz` inside `[lo_hz, hi_hz]`,
/// `rejection_db` lower everywhere else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Broadband {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub density_dbv_per_rthz: f64,
    pub rejection_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Grounding {
    Grounded,
    Floating { c_intf_gnd: f64 },
}

impl Grounding {
    pub fn c_intf_gnd(&self) -> Option<f64> {
        match *self {
            Grounding::Grounded => None,
            Grounding::Floating { c_intf_gnd } => Some(c_intf_gnd),
        }
    }
}

/// How the emitter reaches the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coupling {
    /// Explicit body coupling capacitance.
    Capacitance { c_intf: f64 },
    /// Capacitance looked up from the class's distance table.
    Distance { distance_m: f64 },
    /// Wired straight to the receiver electrode (signal-generator tests).
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub class: SourceClass,
    pub fundamental_hz: f64,
    /// Peak amplitude at the source terminal, volts.
    pub amplitude_v: f64,
    #[serde(default)]
    pub harmonics: Vec<HarmonicLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broadband: Option<Broadband>,
    pub grounding: Grounding,
    pub coupling: Coupling,
}

/// One sinusoidal component of a source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneLine {
    pub freq_hz: f64,
    pub amplitude_v: f64,
    pub phase_rad: f64,
}

impl SourceSpec {
    /// A pure tone wired directly to the electrode, as from a signal generator.
    pub fn test_tone(name: &str, freq_hz: f64, amplitude_v: f64) -> Self {
        Self {
            name: name.to_string(),
            class: SourceClass::SignalGenerator,
            fundamental_hz: freq_hz,
            amplitude_v,
            harmonics: Vec::new(),
            broadband: None,
            grounding: Grounding::Grounded,
            coupling: Coupling::Direct,
        }
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        let bad = |m: String| Err(SourceError::Invalid(format!("{}: {m}", self.name)));
        if !(self.fundamental_hz.is_finite() && self.fundamental_hz >= 0.0) {
            return bad(format!("fundamental must be >= 0, got {}", self.fundamental_hz));
        }
        if !(self.amplitude_v.is_finite() && self.amplitude_v >= 0.0) {
            return bad(format!("amplitude must be >= 0, got {}", self.amplitude_v));
        }
        let mut orders: Vec<u32> = self.harmonics.iter().map(|h| h.order).collect();
        orders.sort_unstable();
        if orders.iter().any(|&o| o < 2) || orders.windows(2).any(|w| w[0] == w[1]) {
            return bad("harmonic orders must be distinct and >= 2".into());
        }
        if self.harmonics.iter().any(|h| !h.rel_db.is_finite()) {
            return bad("harmonic levels must be finite".into());
        }
        if let Some(bb) = &self.broadband {
            if !(bb.lo_hz >= 0.0 && bb.hi_hz > bb.lo_hz && bb.density_dbv_per_rthz.is_finite() && bb.rejection_db >= 0.0) {
                return bad("broadband needs 0 <= lo < hi, finite density, rejection >= 0".into());
            }
        }
        if let Grounding::Floating { c_intf_gnd } = self.grounding {
            if !(c_intf_gnd.is_finite() && c_intf_gnd > 0.0) {
                return bad("c_intf_gnd must be > 0".into());
            }
        }
        match self.coupling {
            Coupling::Capacitance { c_intf } if !(c_intf.is_finite() && c_intf > 0.0) => {
                bad("c_intf must be > 0".into())
            }
            Coupling::Distance { distance_m } => c_intf_from_distance(self.class, distance_m).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Body coupling capacitance, or `None` for a direct connection.
    pub fn c_intf(&self) -> Result<Option<f64>, SourceError> {
        match self.coupling {
            Coupling::Capacitance { c_intf } => Ok(Some(c_intf)),
            Coupling::Distance { distance_m } => c_intf_from_distance(self.class, distance_m).map(Some),
            Coupling::Direct => Ok(None),
        }
    }

    /// Highest frequency with synthesized content.
    pub fn max_frequency(&self) -> f64 {
        let harmonic = self
            .harmonics
            .iter()
            .map(|h| h.order as f64 * self.fundamental_hz)
            .fold(self.fundamental_hz, f64::max);
        self.broadband.map_or(harmonic, |bb| harmonic.max(bb.hi_hz))
    }

    /// Fundamental plus profiled harmonics with seeded starting phases.
    pub fn lines(&self, rng: &mut impl Rng) -> Vec<ToneLine> {
        let mut out = vec![ToneLine {
            freq_hz: self.fundamental_hz,
            amplitude_v: self.amplitude_v,
            phase_rad: rng.random::<f64>() * TAU,
        }];
        for h in &self.harmonics {
            out.push(ToneLine {
                freq_hz: h.order as f64 * self.fundamental_hz,
                amplitude_v: self.amplitude_v * 10f64.powf(h.rel_db / 20.0),
                phase_rad: rng.random::<f64>() * TAU,
            });
        }
        out
    }
}

/// Distances of the CFL calibration anchors: about 2 inches, 3 feet and 6 feet.
pub const CFL_ANCHOR_DISTANCES_M: [f64; 3] = [0.05, 0.9144, 1.8288];

/// CFL coupling capacitances at [`CFL_ANCHOR_DISTANCES_M`]. Chosen so the
/// default wearable pipeline reads -33, -47 and -61 dBV for the catalog CFL.
pub const CFL_ANCHOR_CAPACITANCES_F: [f64; 3] = [9.836e-12, 1.7355e-12, 0.33846e-12];

/// Extrapolation beyond the far anchor never drops below this.
pub const MIN_EXTRAPOLATED_C_INTF: f64 = 1e-16;

pub const DISTANCE_RANGE_M: (f64, f64) = (0.01, 100.0);

/// Coupling capacitance for `class` at `distance_m`: log-linear
/// interpolation (ln C linear in distance) through the anchor table, end
/// segments extended outside it.
pub fn c_intf_from_distance(class: SourceClass, distance_m: f64) -> Result<f64, SourceError> {
    let (lo, hi) = DISTANCE_RANGE_M;
    if !(distance_m.is_finite() && (lo..=hi).contains(&distance_m)) {
        return Err(SourceError::DistanceOutOfRange(distance_m));
    }
    let d = &CFL_ANCHOR_DISTANCES_M;
    let c = &CFL_ANCHOR_CAPACITANCES_F;
    let seg = if distance_m <= d[1] { 0 } else { 1 };
    let t = (distance_m - d[seg]) / (d[seg + 1] - d[seg]);
    let ln_c = c[seg].ln() + t * (c[seg + 1].ln() - c[seg].ln());
    Ok((ln_c.exp() * class.coupling_scale()).max(MIN_EXTRAPOLATED_C_INTF))
}

fn light(name: &str, class: SourceClass, fundamental_hz: f64, distance_m: f64) -> SourceSpec {
    SourceSpec {
        name: name.to_string(),
        class,
        fundamental_hz,
        amplitude_v: 10.0,
        harmonics: vec![
            HarmonicLevel { order: 2, rel_db: -20.0 },
            HarmonicLevel { order: 3, rel_db: -30.0 },
        ],
        broadband: None,
        grounding: Grounding::Floating { c_intf_gnd: 100e-12 },
        coupling: Coupling::Distance { distance_m },
    }
}

fn plain(name: &str, class: SourceClass, fundamental_hz: f64, amplitude_v: f64, distance_m: f64) -> SourceSpec {
    SourceSpec {
        name: name.to_string(),
        class,
        fundamental_hz,
        amplitude_v,
        harmonics: Vec::new(),
        broadband: None,
        grounding: Grounding::Floating { c_intf_gnd: 100e-12 },
        coupling: Coupling::Distance { distance_m },
    }
}

/// Named default emitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCatalog {
    pub entries: Vec<SourceSpec>,
}

impl SourceCatalog {
    pub fn get(&self, name: &str) -> Option<&SourceSpec> {
        self.entries.iter().find(|s| s.name == name)
    }

    pub fn by_class(&self, class: SourceClass) -> impl Iterator<Item = &SourceSpec> {
        self.entries.iter().filter(move |s| s.class == class)
    }
}

pub fn catalog_default() -> SourceCatalog {
    let mut laptop = plain("laptop", SourceClass::Laptop, 92.5e3, 5.0, 0.73);
    laptop.broadband = Some(Broadband {
        lo_hz: 90e3,
        hi_hz: 95e3,
        density_dbv_per_rthz: -60.0,
        rejection_db: 30.0,
    });
    SourceCatalog {
        entries: vec![
            light("cfl", SourceClass::Cfl, 44e3, 0.48),
            light("fluorescent_tube", SourceClass::FluorescentTube, 48e3, 0.82),
            light(
                "dimmable_fluorescent_low",
                SourceClass::DimmableFluorescent,
                DimmerSetting::Low.fundamental_hz(),
                1.0,
            ),
            light(
                "dimmable_fluorescent_high",
                SourceClass::DimmableFluorescent,
                DimmerSetting::High.fundamental_hz(),
                1.0,
            ),
            plain("led", SourceClass::Led, 300.0, 10.0, 1.8),
            laptop,
            plain("laptop_adaptor", SourceClass::LaptopAdaptor, 105e3, 5.0, 1.37),
            plain("digital_display", SourceClass::DigitalDisplay, 120e3, 1.0, 1.0),
            plain("mains_appliance", SourceClass::MainsAppliance, 60.0, 170.0, 3.8),
        ],
    }
}

/// Source-terminal waveform with unit coupling.
pub fn synthesize(src: &SourceSpec, duration: f64, dense_rate: f64, seed: u64) -> Result<DenseWaveform, SourceError> {
    synthesize_coupled(src, duration, dense_rate, seed, &|_| Ok(Complex64::new(1.0, 0.0)))
}

/// Synthesizes `src` as seen through the complex gain `gain(f)`: each tone
/// line is scaled by its own gain, the broadband part bin by bin.
pub fn synthesize_coupled(
    src: &SourceSpec,
    duration: f64,
    dense_rate: f64,
    seed: u64,
    gain: &dyn Fn(f64) -> Result<Complex64, CircuitError>,
) -> Result<DenseWaveform, SourceError> {
    src.validate()?;
    if !(duration.is_finite() && duration > 0.0) {
        return Err(SourceError::Invalid(format!("duration must be > 0, got {duration}")));
    }
    let max_freq = src.max_frequency();
    if !(dense_rate.is_finite() && dense_rate >= 10.0 * max_freq && dense_rate > 0.0) {
        return Err(SourceError::AliasingRisk { dense_rate, max_freq });
    }
    let len = (duration * dense_rate).round() as usize;
    let mut wave = DenseWaveform::zeros(dense_rate, len);
    let mut rng = rng::stream(seed, 0);

    for line in src.lines(&mut rng) {
        if line.amplitude_v == 0.0 {
            continue;
        }
        let g = if line.freq_hz > 0.0 { gain(line.freq_hz)? } else { gain_at_dc(src) };
        wave.add_tone(line.freq_hz, line.amplitude_v * g.norm(), line.phase_rad + g.arg());
    }
    if let Some(bb) = &src.broadband {
        if src.amplitude_v > 0.0 {
            let noise = broadband_noise(bb, len, dense_rate, &mut rng, gain)?;
            for (w, n) in wave.samples.iter_mut().zip(noise) {
                *w += n;
            }
        }
    }
    Ok(wave)
}

fn gain_at_dc(src: &SourceSpec) -> Complex64 {
    // a capacitive path blocks DC; a wired connection does not
    match src.coupling {
        Coupling::Direct => Complex64::new(1.0, 0.0),
        _ => Complex64::new(0.0, 0.0),
    }
}

/// Gaussian noise with a one-sided PSD shaped per [`Broadband`], built in
/// the frequency domain so the coupling gain can be applied per bin.
fn broadband_noise(
    bb: &Broadband,
    len: usize,
    rate: f64,
    rng: &mut impl Rng,
    gain: &dyn Fn(f64) -> Result<Complex64, CircuitError>,
) -> Result<Vec<f64>, SourceError> {
    if len < 2 {
        return Ok(vec![0.0; len]);
    }
    let in_band = 10f64.powf(bb.density_dbv_per_rthz / 10.0);
    let out_band = in_band * 10f64.powf(-bb.rejection_db / 10.0);
    let half = len / 2;
    let mut spec = vec![Complex64::new(0.0, 0.0); len];
    for (k, slot) in spec.iter_mut().enumerate().take(half + 1).skip(1) {
        let f = k as f64 * rate / len as f64;
        let psd = if (bb.lo_hz..=bb.hi_hz).contains(&f) { in_band } else { out_band };
        // E|X_k|^2 = psd * rate * len / 2 gives the requested one-sided density
        let scale = (psd * rate * len as f64 / 2.0).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let mut x = Complex64::new(re, im) * (scale / SQRT_2);
        if k == half && len.is_multiple_of(2) {
            x = Complex64::new(x.re * SQRT_2, 0.0);
        }
        *slot = x * gain(f)?;
    }
    for k in 1..len - half {
        spec[len - k] = spec[k].conj();
    }
    if len.is_multiple_of(2) {
        spec[half].im = 0.0;
    }
    FftPlanner::new().plan_fft_inverse(len).process(&mut spec);
    Ok(spec.iter().map(|c| c.re / len as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dft_line(x: &[f64], rate: f64, freq: f64) -> f64 {
        // single-bin DFT, RMS amplitude of the component at `freq`
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let p = TAU * freq * i as f64 / rate;
            re += v * p.cos();
            im -= v * p.sin();
        }
        (re * re + im * im).sqrt() * 2.0 / n / SQRT_2
    }

    #[test]
    fn catalog_invariants() {
        let cat = catalog_default();
        for s in &cat.entries {
            s.validate().unwrap();
        }
        let f = |n: &str| cat.get(n).unwrap().fundamental_hz;
        assert_eq!(f("cfl"), 44e3);
        assert!((40e3..=60e3).contains(&f("fluorescent_tube")));
        assert_eq!(f("dimmable_fluorescent_low"), 40e3);
        assert_eq!(f("dimmable_fluorescent_high"), 53e3);
        assert!((90e3..=110e3).contains(&f("laptop_adaptor")));
        assert!((90e3..=95e3).contains(&f("laptop")));
        assert!(cat.get("laptop").unwrap().broadband.is_some());
        assert_eq!(f("mains_appliance"), 60.0);
        let led = cat.get("led").unwrap();
        assert!(led.max_frequency() < 1e3);
    }

    #[test]
    fn single_tone_line_has_rms_amplitude() {
        let src = SourceSpec::test_tone("t", 44e3, 0.8);
        let w = synthesize(&src, 0.01, 1e6, 1).unwrap();
        let rms = dft_line(&w.samples, w.rate, 44e3);
        assert!((rms - 0.8 / SQRT_2).abs() < 1e-9, "{rms}");
        assert!(dft_line(&w.samples, w.rate, 45e3) < 1e-9);
    }

    #[test]
    fn zero_amplitude_is_silent() {
        let src = SourceSpec::test_tone("t", 44e3, 0.0);
        let w = synthesize(&src, 0.001, 1e6, 1).unwrap();
        assert!(w.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_rate_must_cover_harmonics() {
        let cat = catalog_default();
        let cfl = cat.get("cfl").unwrap();
        // third harmonic at 132 kHz needs 1.32 MHz
        assert!(matches!(
            synthesize(cfl, 0.001, 1.0e6, 0),
            Err(SourceError::AliasingRisk { .. })
        ));
        assert!(synthesize(cfl, 0.001, 1.32e6, 0).is_ok());
    }

    #[test]
    fn deterministic_per_seed() {
        let cat = catalog_default();
        let laptop = cat.get("laptop").unwrap();
        let a = synthesize(laptop, 0.002, 1e6, 9).unwrap();
        let b = synthesize(laptop, 0.002, 1e6, 9).unwrap();
        let c = synthesize(laptop, 0.002, 1e6, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn distance_table_anchors_and_ordering() {
        let c0 = c_intf_from_distance(SourceClass::Cfl, 0.05).unwrap();
        assert!((c0 / CFL_ANCHOR_CAPACITANCES_F[0] - 1.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for d in [0.01, 0.05, 0.2, 0.5, 0.9144, 1.2, 1.8288, 3.0, 10.0, 100.0] {
            let c = c_intf_from_distance(SourceClass::Cfl, d).unwrap();
            assert!(c <= prev && c > 0.0);
            prev = c;
        }
        assert!(c_intf_from_distance(SourceClass::Cfl, 0.005).is_err());
        assert!(c_intf_from_distance(SourceClass::Cfl, 150.0).is_err());
    }

    #[test]
    fn distance_midpoint_is_geometric_mean() {
        let (d0, d1) = (CFL_ANCHOR_DISTANCES_M[1], CFL_ANCHOR_DISTANCES_M[2]);
        let (c0, c1) = (CFL_ANCHOR_CAPACITANCES_F[1], CFL_ANCHOR_CAPACITANCES_F[2]);
        let mid = c_intf_from_distance(SourceClass::Cfl, 0.5 * (d0 + d1)).unwrap();
        assert!((mid - (c0 * c1).sqrt()).abs() < 1e-24);
    }
}
