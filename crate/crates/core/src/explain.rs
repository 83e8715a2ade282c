//! Peak attribution: device spurs, environmental fundamentals, their
//! harmonics and their mixing products with the device spurs, including
//! products that folded back from above Nyquist.
//!
//! Procedure: peaks near `k fs/10` are device spurs. Then, repeatedly, the
//! strongest unexplained peak at least [`FUNDAMENTAL_THRESHOLD_DB`] above the
//! floor becomes a fundamental `f0`, and unexplained peaks matching
//! `alias(n f0)` (n = 2..5) or `alias(f0 +- k fs/10)` (k = 1..4) are
//! attributed to it. A harmonic match wins over a mix match. Whatever is
//! left is unknown.
//!
//! A fundamental's frequency is only known to half a bin, so the match
//! window for its n-th harmonic widens by `n * bin / 2`.

use serde::{Deserialize, Serialize};

use crate::error::ExplainError;
use crate::frontend::{alias_frequency, SpurConfig};
use crate::sources::SourceClass;
use crate::spectral::Peak;

/// A peak must stand this far above the noise floor to seed a fundamental.
pub const FUNDAMENTAL_THRESHOLD_DB: f64 = 10.0;
pub const DEFAULT_TOL_BINS: f64 = 2.0;
pub const MAX_HARMONIC: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum PeakClass {
    DeviceSpur {
        k: u32,
    },
    Harmonic {
        order: u32,
        fundamental_hz: f64,
        /// Pre-fold frequency when the harmonic lies above Nyquist.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        aliased_from_hz: Option<f64>,
    },
    MixProduct {
        fundamental_hz: f64,
        spur_k: u32,
        /// +1 for f0 + k fs/10, -1 for f0 - k fs/10.
        sign: i8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        aliased_from_hz: Option<f64>,
    },
    Fundamental {
        candidates: Vec<SourceClass>,
    },
    Unknown,
}

impl PeakClass {
    /// Frequency before sampling, before folding into `[0, fs/2]`.
    pub fn pre_fold_hz(&self, fs: f64) -> Option<f64> {
        match *self {
            PeakClass::Harmonic {
                order, fundamental_hz, ..
            } => Some(order as f64 * fundamental_hz),
            PeakClass::MixProduct {
                fundamental_hz,
                spur_k,
                sign,
                ..
            } => Some(fundamental_hz + sign as f64 * spur_k as f64 * fs / 10.0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    #[serde(flatten)]
    pub peak: Peak,
    #[serde(flatten)]
    pub class: PeakClass,
    pub provenance: String,
    /// Folded frequency the classification predicts for this peak.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanationReport {
    pub fs: f64,
    pub tol_hz: f64,
    pub peaks: Vec<Explanation>,
    pub unexplained_count: usize,
    pub fundamentals_hz: Vec<f64>,
}

impl ExplanationReport {
    pub fn entry_at(&self, freq: f64, tol: f64) -> Option<&Explanation> {
        self.peaks.iter().find(|e| (e.peak.freq - freq).abs() <= tol)
    }
}

const SOURCE_BANDS: [(f64, f64, &[SourceClass]); 3] = [
    (
        40e3,
        70e3,
        &[
            SourceClass::Cfl,
            SourceClass::FluorescentTube,
            SourceClass::DimmableFluorescent,
        ],
    ),
    (90e3, 110e3, &[SourceClass::Laptop, SourceClass::LaptopAdaptor]),
    (0.0, 1e3, &[SourceClass::MainsAppliance]),
];

/// Source classes whose switching frequencies cover `f`.
pub fn source_class_for(f: f64) -> Vec<SourceClass> {
    source_class_near(f, 0.0)
}

/// Source classes whose band comes within `tol` of `f`.
pub fn source_class_near(f: f64, tol: f64) -> Vec<SourceClass> {
    SOURCE_BANDS
        .iter()
        .find(|(lo, hi, _)| f + tol >= *lo && f - tol <= *hi)
        .map(|(_, _, classes)| classes.to_vec())
        .unwrap_or_default()
}

struct Prediction {
    class: PeakClass,
    folded: f64,
    /// Extra slack for the fundamental's own bin quantization, which a
    /// harmonic multiplies by its order.
    slack: f64,
    text: String,
}

fn predictions(f0: f64, fs: f64, bin_width: f64) -> Vec<Prediction> {
    let nyq = fs / 2.0;
    let fold_note = |pre: f64, folded: f64| {
        if pre.abs() > nyq {
            (Some(pre), format!(", folded to {folded} Hz"))
        } else {
            (None, String::new())
        }
    };
    let mut out = Vec::new();
    for order in 2..=MAX_HARMONIC {
        let pre = order as f64 * f0;
        let folded = alias_frequency(pre, fs);
        let (aliased_from_hz, note) = fold_note(pre, folded);
        out.push(Prediction {
            class: PeakClass::Harmonic {
                order,
                fundamental_hz: f0,
                aliased_from_hz,
            },
            folded,
            slack: order as f64 * bin_width / 2.0,
            text: format!("harmonic {order} of {f0} Hz: {order} x {f0} = {pre} Hz{note}"),
        });
    }
    for (i, spur) in SpurConfig::frequencies(fs).iter().enumerate() {
        let k = i as u32 + 1;
        for sign in [1i8, -1] {
            let pre = f0 + sign as f64 * spur;
            let folded = alias_frequency(pre, fs);
            let (aliased_from_hz, note) = fold_note(pre, folded);
            let op = if sign > 0 { '+' } else { '-' };
            out.push(Prediction {
                class: PeakClass::MixProduct {
                    fundamental_hz: f0,
                    spur_k: k,
                    sign,
                    aliased_from_hz,
                },
                folded,
                slack: bin_width / 2.0,
                text: format!("mix of {f0} Hz with spur k={k}: {f0} {op} {spur} = {pre} Hz{note}"),
            });
        }
    }
    out
}

/// Classifies every peak, in input order. `tol` is
/// the match tolerance in Hz and must be at least one bin.
pub fn classify_peaks(peaks: &[Peak], fs: f64, tol: f64, bin_width: f64) -> Result<ExplanationReport, ExplainError> {
    if !(tol >= bin_width) {
        return Err(ExplainError::ToleranceTooFine {
            tol_hz: tol,
            bin_hz: bin_width,
        });
    }
    if let Some(p) = peaks.iter().find(|p| !(0.0..=fs / 2.0).contains(&p.freq)) {
        return Err(ExplainError::PeakOutOfRange { freq_hz: p.freq });
    }

    let mut classes: Vec<Option<(PeakClass, String, Option<f64>)>> = vec![None; peaks.len()];

    for (slot, p) in classes.iter_mut().zip(peaks) {
        for (i, spur) in SpurConfig::frequencies(fs).iter().enumerate() {
            if (p.freq - spur).abs() <= tol {
                let k = i as u32 + 1;
                *slot = Some((
                    PeakClass::DeviceSpur { k },
                    format!("device clock spur k={k}: {k} x fs/10 = {spur} Hz"),
                    Some(*spur),
                ));
                break;
            }
        }
    }

    let mut order: Vec<usize> = (0..peaks.len()).collect();
    order.sort_by(|&a, &b| peaks[b].mag.total_cmp(&peaks[a].mag).then(a.cmp(&b)));

    let mut fundamentals = Vec::new();
    while let Some(&idx) = order
        .iter()
        .find(|&&i| classes[i].is_none() && peaks[i].prominence >= FUNDAMENTAL_THRESHOLD_DB)
    {
        let f0 = peaks[idx].freq;
        let candidates = source_class_near(f0, tol);
        let names: Vec<&str> = candidates.iter().map(|c| c.name()).collect();
        classes[idx] = Some((
            PeakClass::Fundamental { candidates },
            format!(
                "strongest unexplained peak ({:.1} dB above floor); candidates: [{}]",
                peaks[idx].prominence,
                names.join(", ")
            ),
            None,
        ));
        fundamentals.push(f0);

        let preds = predictions(f0, fs, bin_width);
        for (i, p) in peaks.iter().enumerate() {
            if classes[i].is_some() {
                continue;
            }
            let mut hits = preds.iter().filter(|pr| (p.freq - pr.folded).abs() <= tol + pr.slack);
            if let Some(best) = hits.next() {
                let mut text = best.text.clone();
                let others: Vec<&str> = hits.map(|h| h.text.as_str()).collect();
                if !others.is_empty() {
                    text.push_str("; also matches ");
                    text.push_str(&others.join("; "));
                }
                classes[i] = Some((best.class.clone(), text, Some(best.folded)));
            }
        }
    }

    let entries: Vec<Explanation> = peaks
        .iter()
        .zip(classes)
        .map(|(p, c)| {
            let (class, provenance, predicted_hz) =
                c.unwrap_or((PeakClass::Unknown, "no spur, harmonic or mix prediction matches".into(), None));
            Explanation {
                peak: *p,
                class,
                provenance,
                predicted_hz,
            }
        })
        .collect();
    let unexplained_count = entries.iter().filter(|e| e.class == PeakClass::Unknown).count();
    Ok(ExplanationReport {
        fs,
        tol_hz: tol,
        peaks: entries,
        unexplained_count,
        fundamentals_hz: fundamentals,
    })
}
