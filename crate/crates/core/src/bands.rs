//! Per-band SIR/SNR scoring and band recommendation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::BandsError;
use crate::explain::{ExplanationReport, PeakClass};
use crate::spectral::SpectrumFrame;

pub const DEFAULT_BAND_WIDTH_HZ: f64 = 10e3;
pub const DEFAULT_SIGNAL_LEVEL_DBV: f64 = -60.0;
pub const DEFAULT_SIR_MIN_DB: f64 = 0.0;
pub const DEFAULT_SNR_MIN_DB: f64 = 10.0;
pub const MIN_BAND_BINS: f64 = 4.0;

/// JSON has no infinity; non-finite values travel as the strings `inf`,
/// `-inf` and `nan`.
pub mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&format_value(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => parse_value(&t).ok_or_else(|| de::Error::custom(format!("bad number '{t}'"))),
        }
    }

    pub fn format_value(v: f64) -> String {
        if v.is_nan() {
            "nan".into()
        } else if v == f64::INFINITY {
            "inf".into()
        } else if v == f64::NEG_INFINITY {
            "-inf".into()
        } else {
            v.to_string()
        }
    }

    pub fn parse_value(t: &str) -> Option<f64> {
        match t.trim() {
            "inf" | "+inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            other => other.parse().ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
    /// Signal over the strongest interference line in the band; `+inf` if none.
    #[serde(with = "extended_f64")]
    pub sir_db: f64,
    #[serde(with = "extended_f64")]
    pub snr_db: f64,
    pub recommended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandPlan {
    pub bands: Vec<Band>,
    pub signal_level_dbv: f64,
    pub band_width_hz: f64,
    pub nf_dbv: f64,
    pub include_spurs: bool,
    /// Thresholds used by [`recommend`]; NaN before it runs.
    #[serde(with = "extended_f64")]
    pub sir_min_db: f64,
    #[serde(with = "extended_f64")]
    pub snr_min_db: f64,
    /// Lower edge of the lowest recommended band.
    pub lowest_recommended_edge_hz: Option<f64>,
    /// Lower edge of the widest contiguous run of recommended bands (the
    /// lowest such run on ties).
    pub operating_edge_hz: Option<f64>,
    pub notes: Vec<String>,
}

impl BandPlan {
    pub fn band_containing(&self, f: f64) -> Option<&Band> {
        self.bands.iter().find(|b| f > b.lo_hz && f <= b.hi_hz)
    }

    /// CSV with columns `band_lo_hz,band_hi_hz,sir_db,snr_db,recommended`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("band_lo_hz,band_hi_hz,sir_db,snr_db,recommended\n");
        for b in &self.bands {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                b.lo_hz,
                b.hi_hz,
                extended_f64::format_value(b.sir_db),
                extended_f64::format_value(b.snr_db),
                b.recommended
            );
        }
        out
    }
}

/// Splits `(0, fs/2]` into `(lo, hi]` bands and scores each against the
/// strongest interference line it contains.
pub fn score_bands(
    frame: &SpectrumFrame,
    report: &ExplanationReport,
    signal_level_dbv: f64,
    band_width_hz: f64,
    include_spurs: bool,
) -> Result<BandPlan, BandsError> {
    if !signal_level_dbv.is_finite() {
        return Err(BandsError::Invalid(format!("signal level must be finite, got {signal_level_dbv}")));
    }
    let min_width = MIN_BAND_BINS * frame.bin_width();
    if !(band_width_hz.is_finite() && band_width_hz >= min_width) {
        return Err(BandsError::Invalid(format!(
            "band width {band_width_hz} Hz is below {MIN_BAND_BINS} bins ({min_width} Hz)"
        )));
    }
    let nyquist = frame.fs / 2.0;
    let count = (nyquist / band_width_hz - 1e-9).ceil() as usize;
    let snr = signal_level_dbv - frame.nf;
    let lines: Vec<(f64, f64)> = report
        .peaks
        .iter()
        .filter(|e| include_spurs || !matches!(e.class, PeakClass::DeviceSpur { .. }))
        .map(|e| (e.peak.freq, e.peak.mag))
        .collect();

    let bands = (0..count)
        .map(|i| {
            let lo = i as f64 * band_width_hz;
            let hi = ((i + 1) as f64 * band_width_hz).min(nyquist);
            let worst = lines
                .iter()
                .filter(|(f, _)| *f > lo && *f <= hi)
                .map(|&(_, m)| m)
                .fold(f64::NEG_INFINITY, f64::max);
            Band {
                lo_hz: lo,
                hi_hz: hi,
                sir_db: signal_level_dbv - worst,
                snr_db: snr,
                recommended: false,
            }
        })
        .collect();

    Ok(BandPlan {
        bands,
        signal_level_dbv,
        band_width_hz,
        nf_dbv: frame.nf,
        include_spurs,
        sir_min_db: f64::NAN,
        snr_min_db: f64::NAN,
        lowest_recommended_edge_hz: None,
        operating_edge_hz: None,
        notes: vec![format!(
            "signal level {signal_level_dbv} dBV; device spurs {}",
            if include_spurs { "counted" } else { "excluded" }
        )],
    })
}

/// Flags bands with `sir >= sir_min` and `snr >= snr_min`.
pub fn recommend(plan: &BandPlan, sir_min_db: f64, snr_min_db: f64) -> Result<BandPlan, BandsError> {
    if sir_min_db.is_nan() || snr_min_db.is_nan() {
        return Err(BandsError::Invalid("thresholds must not be NaN".into()));
    }
    let mut out = plan.clone();
    out.sir_min_db = sir_min_db;
    out.snr_min_db = snr_min_db;
    // an infinite threshold is never met, even by an interference-free band
    let meets = |v: f64, min: f64| min != f64::INFINITY && v >= min;
    for b in &mut out.bands {
        b.recommended = meets(b.sir_db, sir_min_db) && meets(b.snr_db, snr_min_db);
    }
    out.lowest_recommended_edge_hz = out.bands.iter().find(|b| b.recommended).map(|b| b.lo_hz);

    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < out.bands.len() {
        if !out.bands[i].recommended {
            i += 1;
            continue;
        }
        let start = i;
        while i < out.bands.len() && out.bands[i].recommended {
            i += 1;
        }
        if best.is_none_or(|(s, e)| i - start > e - s) {
            best = Some((start, i));
        }
    }
    out.operating_edge_hz = best.map(|(s, _)| out.bands[s].lo_hz);

    out.notes.retain(|n| !n.starts_with("no band"));
    if best.is_none() {
        out.notes.push(format!(
            "no band meets sir >= {sir_min_db} dB and snr >= {snr_min_db} dB"
        ));
    }
    Ok(out)
}
