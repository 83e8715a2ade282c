//! Windowed spectra in dBV (RMS per line), noise-floor estimation, peak
//! detection and single-tone calibration.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::SpectralError;
use crate::frontend::CaptureRecord;

/// Lowest magnitude a bin can report, dBV.
pub const DBV_FLOOR: f64 = -300.0;
pub const MIN_N: usize = 128;
pub const MIN_NF_BINS: usize = 64;
/// Fraction of strongest bins dropped before taking the median.
pub const NF_PEAK_EXCLUSION: f64 = 0.05;
pub const DEFAULT_MARGIN_DB: f64 = 6.0;
pub const CALIBRATION_MIN_PROMINENCE_DB: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WindowKind {
    Rectangular,
    Hann,
    Blackman,
    /// Dolph-Chebyshev with the given sidelobe attenuation in dB.
    Chebyshev { sidelobe_db: f64 },
}

impl WindowKind {
    pub fn validate(&self) -> Result<(), SpectralError> {
        match *self {
            WindowKind::Chebyshev { sidelobe_db } if !(40.0..=140.0).contains(&sidelobe_db) => Err(
                SpectralError::InvalidWindow(format!("chebyshev sidelobe {sidelobe_db} dB outside [40, 140]")),
            ),
            _ => Ok(()),
        }
    }

    /// Window coefficients of length `n`. Hann and Blackman are periodic
    /// (DFT-even); Chebyshev is the symmetric Dolph design.
    pub fn coefficients(&self, n: usize) -> Result<Vec<f64>, SpectralError> {
        self.validate()?;
        let phase = |i: usize| 2.0 * PI * i as f64 / n as f64;
        Ok(match *self {
            WindowKind::Rectangular => vec![1.0; n],
            WindowKind::Hann => (0..n).map(|i| 0.5 - 0.5 * phase(i).cos()).collect(),
            WindowKind::Blackman => (0..n)
                .map(|i| 0.42 - 0.5 * phase(i).cos() + 0.08 * (2.0 * phase(i)).cos())
                .collect(),
            WindowKind::Chebyshev { sidelobe_db } => chebyshev(n, sidelobe_db),
        })
    }

    /// Bins from a line to the first null of its main lobe.
    pub fn mainlobe_half_width_bins(&self) -> usize {
        match *self {
            WindowKind::Rectangular => 1,
            WindowKind::Hann => 2,
            WindowKind::Blackman => 3,
            WindowKind::Chebyshev { sidelobe_db } => {
                (10f64.powf(sidelobe_db / 20.0).acosh() / PI).ceil() as usize
            }
        }
    }
}

fn chebyshev(m: usize, sidelobe_db: f64) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    let order = (m - 1) as f64;
    let beta = ((10f64.powf(sidelobe_db / 20.0)).acosh() / order).cosh();
    let odd = m % 2 == 1;
    let mut p: Vec<Complex64> = (0..m)
        .map(|k| {
            let x = beta * (PI * k as f64 / m as f64).cos();
            let t = if x > 1.0 {
                (order * x.acosh()).cosh()
            } else if x < -1.0 {
                let sign = if odd { 1.0 } else { -1.0 };
                sign * (order * (-x).acosh()).cosh()
            } else {
                (order * x.acos()).cos()
            };
            let shift = if odd {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, PI * k as f64 / m as f64)
            };
            shift * t
        })
        .collect();
    FftPlanner::<f64>::new().plan_fft_forward(m).process(&mut p);
    let re: Vec<f64> = p.iter().map(|c| c.re).collect();
    let mut w = Vec::with_capacity(m);
    if odd {
        let h = m.div_ceil(2);
        w.extend(re[1..h].iter().rev());
        w.extend(&re[..h]);
    } else {
        let h = m / 2 + 1;
        w.extend(re[1..h].iter().rev());
        w.extend(&re[1..h]);
    }
    let max = w.iter().cloned().fold(f64::MIN, f64::max);
    w.iter().map(|v| v / max).collect()
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowKind::Rectangular => f.write_str("rectangular"),
            WindowKind::Hann => f.write_str("hann"),
            WindowKind::Blackman => f.write_str("blackman"),
            WindowKind::Chebyshev { sidelobe_db } => write!(f, "chebyshev:{sidelobe_db}"),
        }
    }
}

impl FromStr for WindowKind {
    type Err = SpectralError;

    /// Accepts `rectangular` (or `rect`), `hann`, `blackman`, and
    /// `chebyshev[:<sidelobe dB>]` (default 100 dB).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, arg) = match lower.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (lower.as_str(), None),
        };
        let kind = match (name, arg) {
            ("rectangular" | "rect", None) => WindowKind::Rectangular,
            ("hann", None) => WindowKind::Hann,
            ("blackman", None) => WindowKind::Blackman,
            ("chebyshev" | "chebwin", arg) => {
                let sidelobe_db = match arg {
                    None => 100.0,
                    Some(a) => a
                        .parse()
                        .map_err(|_| SpectralError::InvalidWindow(format!("bad sidelobe level '{a}'")))?,
                };
                WindowKind::Chebyshev { sidelobe_db }
            }
            _ => return Err(SpectralError::InvalidWindow(format!("unknown window '{s}'"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl TryFrom<String> for WindowKind {
    type Error = SpectralError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<WindowKind> for String {
    fn from(w: WindowKind) -> String {
        w.to_string()
    }
}

/// How captures longer than the FFT size are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumMode {
    /// First `n` samples only.
    Truncate,
    /// Mean periodogram of `floor(L / n)` disjoint segments.
    #[default]
    Welch,
}

impl FromStr for SpectrumMode {
    type Err = SpectralError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "truncate" => Ok(SpectrumMode::Truncate),
            "welch" | "welch-average" => Ok(SpectrumMode::Welch),
            other => Err(SpectralError::InvalidParameter(format!("unknown spectrum mode '{other}'"))),
        }
    }
}

impl fmt::Display for SpectrumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpectrumMode::Truncate => "truncate",
            SpectrumMode::Welch => "welch",
        })
    }
}

/// One-sided magnitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFrame {
    pub freqs: Vec<f64>,
    /// dBV RMS per line.
    pub mags: Vec<f64>,
    pub fs: f64,
    pub n: usize,
    pub window: WindowKind,
    pub nf: f64,
    /// Linear amplitude factor already applied to `mags` and `nf`.
    pub calibration: f64,
}

impl SpectrumFrame {
    pub fn bin_width(&self) -> f64 {
        self.fs / self.n as f64
    }

    pub fn bin_of(&self, freq: f64) -> usize {
        ((freq / self.bin_width()).round() as usize).min(self.mags.len() - 1)
    }

    /// Rescales magnitudes by a further linear amplitude factor.
    pub fn apply_calibration(&mut self, factor: f64) {
        let db = 20.0 * factor.log10();
        for m in &mut self.mags {
            *m = (*m + db).max(DBV_FLOOR);
        }
        self.nf = (self.nf + db).max(DBV_FLOOR);
        self.calibration *= factor;
    }

    /// Builds a frame from raw magnitudes and re-estimates the noise floor.
    pub fn from_mags(mags: Vec<f64>, fs: f64, window: WindowKind) -> Result<Self, SpectralError> {
        let n = 2 * (mags.len().max(1) - 1);
        let mut frame = SpectrumFrame {
            freqs: (0..mags.len()).map(|k| k as f64 * fs / n as f64).collect(),
            mags,
            fs,
            n,
            window,
            nf: DBV_FLOOR,
            calibration: 1.0,
        };
        frame.nf = estimate_noise_floor(&frame)?;
        Ok(frame)
    }
}

fn to_dbv(power: f64) -> f64 {
    if power > 0.0 {
        (10.0 * power.log10()).max(DBV_FLOOR)
    } else {
        DBV_FLOOR
    }
}

pub fn compute_spectrum(
    capture: &CaptureRecord,
    n: usize,
    window: WindowKind,
    mode: SpectrumMode,
) -> Result<SpectrumFrame, SpectralError> {
    if n < MIN_N || !n.is_power_of_two() {
        return Err(SpectralError::InvalidN(n));
    }
    if capture.len() < n {
        return Err(SpectralError::InsufficientData {
            have: capture.len(),
            need: n,
        });
    }
    if !(capture.fs.is_finite() && capture.fs > 0.0) {
        return Err(SpectralError::InvalidParameter(format!("fs must be > 0, got {}", capture.fs)));
    }
    let w = window.coefficients(n)?;
    let coherent: f64 = w.iter().sum();
    let segments = match mode {
        SpectrumMode::Truncate => 1,
        SpectrumMode::Welch => capture.len() / n,
    };

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut power = vec![0.0; n / 2 + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for seg in capture.samples.chunks_exact(n).take(segments) {
        for ((b, x), wi) in buf.iter_mut().zip(seg).zip(&w) {
            *b = Complex64::new(x * wi, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            let c = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            *p += c * buf[k].norm_sqr();
        }
    }
    let scale = 1.0 / (segments as f64 * coherent * coherent);
    let mags: Vec<f64> = power.iter().map(|p| to_dbv(p * scale)).collect();
    SpectrumFrame::from_mags(mags, capture.fs, window)
}

/// Median bin magnitude after dropping the strongest 5% of bins.
pub fn estimate_noise_floor(frame: &SpectrumFrame) -> Result<f64, SpectralError> {
    noise_floor_of(&frame.mags)
}

pub fn noise_floor_of(mags: &[f64]) -> Result<f64, SpectralError> {
    if mags.len() < MIN_NF_BINS {
        return Err(SpectralError::TooFewBins(mags.len()));
    }
    let mut sorted = mags.to_vec();
    sorted.sort_by(f64::total_cmp);
    let keep = sorted.len() - (sorted.len() as f64 * NF_PEAK_EXCLUSION).floor() as usize;
    let kept = &sorted[..keep];
    let mid = kept.len() / 2;
    Ok(if kept.len() % 2 == 1 {
        kept[mid]
    } else {
        0.5 * (kept[mid - 1] + kept[mid])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    #[serde(rename = "freq_hz")]
    pub freq: f64,
    #[serde(rename = "mag_dbv")]
    pub mag: f64,
    pub bin: usize,
    /// dB above the frame's noise floor.
    #[serde(rename = "prominence_db")]
    pub prominence: f64,
}

/// Local maxima at least `margin` dB above the noise floor, strongest first.
/// Bins inside the DC main lobe are never reported.
pub fn detect_peaks(frame: &SpectrumFrame, margin: f64) -> Result<Vec<Peak>, SpectralError> {
    if !(margin.is_finite() && margin > 0.0) {
        return Err(SpectralError::InvalidParameter(format!("margin must be > 0, got {margin}")));
    }
    let m = &frame.mags;
    let threshold = frame.nf + margin;
    let mut found: Vec<Peak> = Vec::new();
    // the DC main lobe is not a tone
    let first = frame.window.mainlobe_half_width_bins().max(1);
    for k in first..m.len() {
        let left_ok = m[k] > m[k - 1];
        let right_ok = k + 1 == m.len() || m[k] >= m[k + 1];
        if !(left_ok && right_ok && m[k] >= threshold) {
            continue;
        }
        let peak = Peak {
            freq: frame.freqs[k],
            mag: m[k],
            bin: k,
            prominence: m[k] - frame.nf,
        };
        match found.last_mut() {
            Some(prev) if k - prev.bin <= 1 => {
                if peak.mag > prev.mag {
                    *prev = peak;
                }
            }
            _ => found.push(peak),
        }
    }
    found.sort_by(|a, b| b.mag.total_cmp(&a.mag).then(a.bin.cmp(&b.bin)));
    Ok(found)
}

/// Largest power-of-two FFT size the capture supports, capped at 2^16.
pub fn default_n_for(len: usize) -> Option<usize> {
    if len < MIN_N {
        return None;
    }
    let n = 1usize << (usize::BITS - 1 - len.leading_zeros());
    Some(n.min(1 << 16))
}

/// Scale factor that makes the capture's dominant tone read as
/// `known_amplitude` (peak volts).
pub fn calibrate(reference: &CaptureRecord, known_amplitude: f64) -> Result<f64, SpectralError> {
    if !(known_amplitude.is_finite() && known_amplitude > 0.0) {
        return Err(SpectralError::InvalidParameter("known amplitude must be > 0".into()));
    }
    let n = default_n_for(reference.len()).ok_or(SpectralError::InsufficientData {
        have: reference.len(),
        need: MIN_N,
    })?;
    let window = WindowKind::Hann;
    let frame = compute_spectrum(reference, n, window, SpectrumMode::Welch)?;
    let first = window.mainlobe_half_width_bins() + 1;
    let (k, top) = frame
        .mags
        .iter()
        .enumerate()
        .skip(first)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, m)| (k, *m))
        .ok_or(SpectralError::TooFewBins(frame.mags.len()))?;
    let prominence = top - frame.nf;
    if prominence < CALIBRATION_MIN_PROMINENCE_DB {
        return Err(SpectralError::CalibrationFailed {
            prominence_db: prominence,
        });
    }
    let w = window.coefficients(n)?;
    let enbw = n as f64 * w.iter().map(|v| v * v).sum::<f64>() / w.iter().sum::<f64>().powi(2);
    let lo = k.saturating_sub(3).max(first);
    let hi = (k + 3).min(frame.mags.len() - 1);
    let lobe: f64 = frame.mags[lo..=hi].iter().map(|m| 10f64.powf(m / 10.0)).sum();
    let measured_rms = (lobe / enbw).sqrt();
    Ok(known_amplitude / SQRT_2 / measured_rms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::CaptureRecord;

    fn tone_capture(freq: f64, amp: f64, fs: f64, len: usize) -> CaptureRecord {
        let samples = (0..len)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / fs).cos())
            .collect();
        CaptureRecord::from_samples(samples, fs)
    }

    #[test]
    fn bin_centred_tone_reads_rms() {
        let (fs, n) = (500e3, 4096);
        let f: f64 = 100e3 / (fs / n as f64);
        let f = f.round() * fs / n as f64;
        for w in [WindowKind::Rectangular, WindowKind::Hann, WindowKind::Blackman] {
            let frame = compute_spectrum(&tone_capture(f, 1.0, fs, n), n, w, SpectrumMode::Truncate).unwrap();
            let got = frame.mags[frame.bin_of(f)];
            assert!((got + 3.0103).abs() < 0.01, "{w}: {got}");
        }
    }

    #[test]
    fn zero_capture_sits_at_floor() {
        let cap = CaptureRecord::from_samples(vec![0.0; 1024], 500e3);
        let frame = compute_spectrum(&cap, 1024, WindowKind::Hann, SpectrumMode::Welch).unwrap();
        assert!(frame.mags.iter().all(|&m| m == DBV_FLOOR));
        assert_eq!(frame.nf, DBV_FLOOR);
        assert!(detect_peaks(&frame, 6.0).unwrap().is_empty());
    }

    #[test]
    fn size_and_length_errors() {
        let cap = CaptureRecord::from_samples(vec![0.0; 1000], 500e3);
        assert_eq!(
            compute_spectrum(&cap, 1000, WindowKind::Hann, SpectrumMode::Welch),
            Err(SpectralError::InvalidN(1000))
        );
        assert_eq!(
            compute_spectrum(&cap, 64, WindowKind::Hann, SpectrumMode::Welch),
            Err(SpectralError::InvalidN(64))
        );
        assert_eq!(
            compute_spectrum(&cap, 1024, WindowKind::Hann, SpectrumMode::Welch),
            Err(SpectralError::InsufficientData { have: 1000, need: 1024 })
        );
    }

    #[test]
    fn noise_floor_of_flat_and_peaky_spectra() {
        let flat = vec![-100.0; 513];
        assert_eq!(noise_floor_of(&flat).unwrap(), -100.0);
        let mut peaky = flat.clone();
        for k in [50, 200, 400] {
            peaky[k] = -40.0;
        }
        assert!((noise_floor_of(&peaky).unwrap() + 100.0).abs() < 0.5);
        assert!(matches!(noise_floor_of(&[0.0; 10]), Err(SpectralError::TooFewBins(10))));
    }

    fn frame_with(mags: Vec<f64>) -> SpectrumFrame {
        SpectrumFrame::from_mags(mags, 500e3, WindowKind::Hann).unwrap()
    }

    #[test]
    fn peaks_found_and_sorted() {
        let mut mags = vec![-110.0; 2049];
        let bw: f64 = 500e3 / 4096.0;
        let b64 = (64e3 / bw).round() as usize;
        let b95 = (95e3 / bw).round() as usize;
        mags[b64] = -38.0;
        mags[b64 + 1] = -45.0;
        mags[b95] = -55.0;
        let peaks = detect_peaks(&frame_with(mags), 6.0).unwrap();
        assert_eq!(peaks.len(), 2);
        assert_eq!((peaks[0].bin, peaks[1].bin), (b64, b95));
        assert!((peaks[0].prominence - 72.0).abs() < 1e-9);
    }

    #[test]
    fn sub_margin_and_flat_frames_have_no_peaks() {
        let mut mags = vec![-110.0; 2049];
        assert!(detect_peaks(&frame_with(mags.clone()), 6.0).unwrap().is_empty());
        mags[300] = -107.0;
        assert!(detect_peaks(&frame_with(mags), 6.0).unwrap().is_empty());
        assert!(detect_peaks(&frame_with(vec![-110.0; 129]), 0.0).is_err());
    }

    #[test]
    fn chebyshev_window_shape() {
        let w = WindowKind::Chebyshev { sidelobe_db: 100.0 }.coefficients(256).unwrap();
        assert_eq!(w.len(), 256);
        assert!((w[127] - 1.0).abs() < 1e-12 || (w[128] - 1.0).abs() < 1e-12);
        for i in 0..128 {
            assert!((w[i] - w[255 - i]).abs() < 1e-9);
        }
        // sidelobes of the window transform sit at the design level
        let n = 256;
        let pad = 16 * n;
        let mut buf: Vec<Complex64> = (0..pad)
            .map(|i| Complex64::new(if i < n { w[i] } else { 0.0 }, 0.0))
            .collect();
        FftPlanner::<f64>::new().plan_fft_forward(pad).process(&mut buf);
        let mag: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
        let main = mag[0];
        let first_null = (1..pad / 2).find(|&k| mag[k + 1] > mag[k]).unwrap();
        let side = mag[first_null..pad / 2].iter().cloned().fold(0.0, f64::max);
        let level = 20.0 * (side / main).log10();
        assert!((level + 100.0).abs() < 1.0, "{level}");
    }

    #[test]
    fn window_parsing() {
        assert_eq!("hann".parse::<WindowKind>().unwrap(), WindowKind::Hann);
        assert_eq!("RECT".parse::<WindowKind>().unwrap(), WindowKind::Rectangular);
        assert_eq!(
            "chebyshev:120".parse::<WindowKind>().unwrap(),
            WindowKind::Chebyshev { sidelobe_db: 120.0 }
        );
        assert!("chebyshev:200".parse::<WindowKind>().is_err());
        assert!("kaiser".parse::<WindowKind>().is_err());
        for w in ["hann", "blackman", "rectangular", "chebyshev:80"] {
            assert_eq!(w.parse::<WindowKind>().unwrap().to_string(), w);
        }
    }

    #[test]
    fn calibration_recovers_gain() {
        let fs = 500e3;
        let g = 0.37;
        let cap = tone_capture(12_345.6, 0.5 * g, fs, 20_000);
        let factor = calibrate(&cap, 0.5).unwrap();
        assert!((factor * g - 1.0).abs() < 0.01, "{factor}");
        let unity = calibrate(&tone_capture(33e3, 0.5, fs, 20_000), 0.5).unwrap();
        assert!((unity - 1.0).abs() < 0.01);
    }

    #[test]
    fn calibration_fails_without_tone() {
        use rand::Rng;
        let mut rng = crate::rng::stream(5, 0);
        let samples = (0..8192).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cap = CaptureRecord::from_samples(samples, 500e3);
        assert!(matches!(calibrate(&cap, 1.0), Err(SpectralError::CalibrationFailed { .. })));
    }

    #[test]
    fn applied_calibration_shifts_levels() {
        let cap = tone_capture(50e3, 0.1, 500e3, 4096);
        let mut frame = compute_spectrum(&cap, 4096, WindowKind::Hann, SpectrumMode::Truncate).unwrap();
        let before = frame.mags[frame.bin_of(50e3)];
        frame.apply_calibration(10.0);
        assert!((frame.mags[frame.bin_of(50e3)] - before - 20.0).abs() < 1e-9);
        assert_eq!(frame.calibration, 10.0);
    }
}
