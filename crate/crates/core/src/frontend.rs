//! Wearable acquisition chain: clock spurs, buffer nonlinearity,
//! anti-aliasing filter, sampling and quantization.
//!
//! Signal order inside [`run_chain`]: device input, spur injection, buffer
//! nonlinearity, anti-alias filter, ADC. Spurs enter ahead of the buffer so
//! its square term produces tone-by-spur mixing products.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::FrontendError;
use crate::rng;
use crate::waveform::DenseWaveform;

/// Second-order low-pass ahead of the ADC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AafConfig {
    pub enabled: bool,
    pub cutoff_hz: f64,
    /// Pole quality factor; 1/sqrt(2) is maximally flat.
    pub q: f64,
}

impl Default for AafConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            cutoff_hz: 250e3,
            q: FRAC_1_SQRT_2,
        }
    }
}

impl AafConfig {
    /// Analytic magnitude of the continuous-time prototype.
    pub fn analytic_gain(&self, freq: f64) -> f64 {
        let x = freq / self.cutoff_hz;
        1.0 / ((1.0 - x * x).powi(2) + (x / self.q).powi(2)).sqrt()
    }
}

/// Memoryless buffer polynomial `y = a1 x + a2 x^2 + a3 x^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferNl {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl Default for BufferNl {
    fn default() -> Self {
        Self {
            a1: 1.0,
            a2: 1.0,
            a3: 1.0,
        }
    }
}

impl BufferNl {
    pub fn linear() -> Self {
        Self {
            a1: 1.0,
            a2: 0.0,
            a3: 0.0,
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        x * (self.a1 + x * (self.a2 + x * self.a3))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcConfig {
    pub bits: u32,
    pub fs_hz: f64,
    pub full_scale_v: f64,
    /// Input-referred white noise, V/sqrt(Hz).
    pub noise_density: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            bits: 12,
            fs_hz: 500e3,
            full_scale_v: 3.3,
            noise_density: 1.0e-6,
        }
    }
}

impl AdcConfig {
    pub fn lsb(&self) -> f64 {
        self.full_scale_v / (1u64 << self.bits) as f64
    }

    /// Midrise quantizer saturating at +-full_scale/2.
    pub fn quantize(&self, x: f64) -> f64 {
        let lsb = self.lsb();
        let top = self.full_scale_v / 2.0 - lsb / 2.0;
        ((x / lsb).floor() * lsb + lsb / 2.0).clamp(-top, top)
    }
}

/// Peak amplitudes of the clock spurs at `k * fs / 10`, k = 1, 2, ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpurConfig {
    pub amplitudes_v: Vec<f64>,
}

impl Default for SpurConfig {
    fn default() -> Self {
        Self {
            amplitudes_v: vec![2.0e-4, 5.0e-3, 2.0e-4, 5.0e-3],
        }
    }
}

impl SpurConfig {
    pub fn silent() -> Self {
        Self {
            amplitudes_v: vec![0.0; 4],
        }
    }

    /// Spur frequencies below Nyquist for sampling rate `fs`.
    pub fn frequencies(fs: f64) -> Vec<f64> {
        (1..)
            .map(|k| k as f64 * fs / 10.0)
            .take_while(|&f| f < fs / 2.0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub aaf: AafConfig,
    pub buffer_nl: BufferNl,
    pub adc: AdcConfig,
    pub spurs: SpurConfig,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self::wearable()
    }
}

impl FrontendConfig {
    /// Default wearable profile: 12-bit ADC at 500 kHz, 250 kHz AAF, strong
    /// even-k clock spurs and weak odd-k ones.
    pub fn wearable() -> Self {
        Self {
            aaf: AafConfig::default(),
            buffer_nl: BufferNl::default(),
            adc: AdcConfig::default(),
            spurs: SpurConfig::default(),
        }
    }

    /// Linear, spur-free, noiseless chain.
    pub fn ideal() -> Self {
        Self {
            aaf: AafConfig::default(),
            buffer_nl: BufferNl::linear(),
            adc: AdcConfig {
                noise_density: 0.0,
                ..AdcConfig::default()
            },
            spurs: SpurConfig::silent(),
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "wearable" => Some(Self::wearable()),
            "ideal" => Some(Self::ideal()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), FrontendError> {
        let bad = |m: String| Err(FrontendError::InvalidConfig(m));
        let adc = &self.adc;
        if !(8..=16).contains(&adc.bits) {
            return bad(format!("bits must be in [8, 16], got {}", adc.bits));
        }
        if !(adc.fs_hz.is_finite() && adc.fs_hz > 0.0) {
            return bad(format!("fs must be > 0, got {}", adc.fs_hz));
        }
        if !(adc.full_scale_v.is_finite() && adc.full_scale_v > 0.0) {
            return bad("full scale must be > 0".into());
        }
        if !(adc.noise_density.is_finite() && adc.noise_density >= 0.0) {
            return bad("noise density must be >= 0".into());
        }
        if !(self.aaf.cutoff_hz.is_finite() && self.aaf.cutoff_hz > 0.0 && self.aaf.q > 0.0) {
            return bad("filter cutoff and q must be > 0".into());
        }
        let expected = SpurConfig::frequencies(adc.fs_hz).len();
        if self.spurs.amplitudes_v.len() != expected {
            return bad(format!(
                "expected {expected} spur amplitudes for fs = {} Hz, got {}",
                adc.fs_hz,
                self.spurs.amplitudes_v.len()
            ));
        }
        if self.spurs.amplitudes_v.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("spur amplitudes must be >= 0".into());
        }
        let nl = &self.buffer_nl;
        if ![nl.a1, nl.a2, nl.a3].iter().all(|c| c.is_finite()) {
            return bad("buffer coefficients must be finite".into());
        }
        Ok(())
    }
}

/// A sampled, quantized capture.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRecord {
    pub samples: Vec<f64>,
    pub fs: f64,
    pub bits: u32,
    pub full_scale_v: f64,
    pub seed: u64,
    /// Chain configuration that produced the capture, when known.
    pub config: Option<FrontendConfig>,
}

impl CaptureRecord {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Wraps externally produced samples (no quantization applied).
    pub fn from_samples(samples: Vec<f64>, fs: f64) -> Self {
        Self {
            samples,
            fs,
            bits: 16,
            full_scale_v: f64::INFINITY,
            seed: 0,
            config: None,
        }
    }
}

/// Bilinear-transform biquad of the 2nd-order low-pass, prewarped so the
/// -3 dB point lands exactly on the cutoff.
fn aaf_coefficients(aaf: &AafConfig, rate: f64) -> ([f64; 3], [f64; 2]) {
    let k = (PI * aaf.cutoff_hz / rate).tan();
    let k2 = k * k;
    let norm = 1.0 / (1.0 + k / aaf.q + k2);
    let b0 = k2 * norm;
    let b = [b0, 2.0 * b0, b0];
    let a = [2.0 * (k2 - 1.0) * norm, (1.0 - k / aaf.q + k2) * norm];
    (b, a)
}

pub fn apply_aaf(wave: &DenseWaveform, aaf: &AafConfig) -> Result<DenseWaveform, FrontendError> {
    if !aaf.enabled {
        return Ok(wave.clone());
    }
    if wave.rate < 10.0 * aaf.cutoff_hz {
        return Err(FrontendError::DenseRateTooLow {
            dense_rate: wave.rate,
            cutoff: aaf.cutoff_hz,
        });
    }
    let (b, a) = aaf_coefficients(aaf, wave.rate);
    let (mut z1, mut z2) = (0.0, 0.0);
    let samples = wave
        .samples
        .iter()
        .map(|&x| {
            // transposed direct form II
            let y = b[0] * x + z1;
            z1 = b[1] * x - a[0] * y + z2;
            z2 = b[2] * x - a[1] * y;
            y
        })
        .collect();
    Ok(DenseWaveform {
        rate: wave.rate,
        samples,
    })
}

pub fn apply_buffer_nl(wave: &DenseWaveform, nl: &BufferNl) -> DenseWaveform {
    DenseWaveform {
        rate: wave.rate,
        samples: wave.samples.iter().map(|&x| nl.apply(x)).collect(),
    }
}

/// Adds device clock spurs at `k * fs / 10` (zero phase).
pub fn inject_spurs(wave: &DenseWaveform, fs: f64, spurs: &SpurConfig) -> Result<DenseWaveform, FrontendError> {
    let freqs = SpurConfig::frequencies(fs);
    if spurs.amplitudes_v.len() != freqs.len() {
        return Err(FrontendError::InvalidConfig(format!(
            "expected {} spur amplitudes, got {}",
            freqs.len(),
            spurs.amplitudes_v.len()
        )));
    }
    let mut out = wave.clone();
    for (f, &a) in freqs.iter().zip(&spurs.amplitudes_v) {
        out.add_tone(*f, a, 0.0);
    }
    Ok(out)
}

/// Integer ratio between the dense rate and `fs`, if there is one.
pub fn decimation_factor(dense_rate: f64, fs: f64) -> Result<usize, FrontendError> {
    let ratio = dense_rate / fs;
    let m = ratio.round();
    if !(m >= 1.0 && (ratio - m).abs() <= 1e-9 * m) {
        return Err(FrontendError::ResampleContract { dense_rate, fs });
    }
    Ok(m as usize)
}

/// Point decimation to `fs`, seeded white noise, midrise quantization.
pub fn sample_and_quantize(wave: &DenseWaveform, adc: &AdcConfig, seed: u64) -> Result<CaptureRecord, FrontendError> {
    let m = decimation_factor(wave.rate, adc.fs_hz)?;
    let sigma = adc.noise_density * (adc.fs_hz / 2.0).sqrt();
    let mut rng = rng::stream(seed, rng::ADC_STREAM);
    let samples = wave
        .samples
        .iter()
        .step_by(m)
        .map(|&x| {
            let noise = if sigma > 0.0 {
                sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            adc.quantize(x + noise)
        })
        .collect();
    Ok(CaptureRecord {
        samples,
        fs: adc.fs_hz,
        bits: adc.bits,
        full_scale_v: adc.full_scale_v,
        seed,
        config: None,
    })
}

/// Frequency at which `f` appears after sampling at `fs`, in `[0, fs/2]`.
pub fn alias_frequency(f: f64, fs: f64) -> f64 {
    ((f + fs / 2.0).rem_euclid(fs) - fs / 2.0).abs()
}

/// Runs the complete chain on the device-input waveform.
pub fn run_chain(input: &DenseWaveform, config: &FrontendConfig, seed: u64) -> Result<CaptureRecord, FrontendError> {
    config.validate()?;
    decimation_factor(input.rate, config.adc.fs_hz)?;
    let spurred = inject_spurs(input, config.adc.fs_hz, &config.spurs)?;
    let buffered = apply_buffer_nl(&spurred, &config.buffer_nl);
    let filtered = apply_aaf(&buffered, &config.aaf)?;
    let mut capture = sample_and_quantize(&filtered, &config.adc, seed)?;
    capture.config = Some(config.clone());
    Ok(capture)
}

/// RMS amplitude of the `freq` component of `x` (single-bin DFT over a
/// whole number of periods is assumed by callers).
pub fn tone_rms(x: &[f64], rate: f64, freq: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let p = TAU * freq * i as f64 / rate;
        re += v * p.cos();
        im -= v * p.sin();
    }
    (re * re + im * im).sqrt() * 2.0 / x.len() as f64 * FRAC_1_SQRT_2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, rate: f64, len: usize) -> DenseWaveform {
        let mut w = DenseWaveform::zeros(rate, len);
        w.add_tone(freq, amp, 0.0);
        w
    }

    /// Steady-state gain of the filter at `freq`, skipping the start-up transient.
    fn measured_gain_db(freq: f64, rate: f64) -> f64 {
        let len = (rate * 0.004) as usize;
        let out = apply_aaf(&tone(freq, 1.0, rate, len), &AafConfig::default()).unwrap();
        let tail = &out.samples[len / 2..];
        20.0 * (tone_rms(tail, rate, freq) * 2f64.sqrt()).log10()
    }

    #[test]
    fn aaf_dc_cutoff_and_stopband() {
        let rate = 10e6;
        let w = DenseWaveform {
            rate,
            samples: vec![1.0; 20_000],
        };
        let dc = apply_aaf(&w, &AafConfig::default()).unwrap();
        assert!((dc.samples.last().unwrap() - 1.0).abs() < 0.01);

        let at_cutoff = measured_gain_db(250e3, rate);
        assert!((at_cutoff + 3.01).abs() < 0.5, "{at_cutoff}");

        let analytic = 20.0 * AafConfig::default().analytic_gain(740e3).log10();
        assert!((analytic + 40.0 * (740.0f64 / 250.0).log10()).abs() < 0.1);
        let at_740k = measured_gain_db(740e3, rate);
        assert!((at_740k - analytic).abs() < 1.0, "{at_740k} vs {analytic}");
        assert!((at_740k + 18.8).abs() < 1.0);
    }

    #[test]
    fn aaf_needs_oversampling() {
        let w = DenseWaveform::zeros(2e6, 10);
        assert!(matches!(
            apply_aaf(&w, &AafConfig::default()),
            Err(FrontendError::DenseRateTooLow { .. })
        ));
        let off = AafConfig {
            enabled: false,
            ..AafConfig::default()
        };
        assert_eq!(apply_aaf(&w, &off).unwrap(), w);
    }

    #[test]
    fn linear_buffer_is_identity() {
        let w = tone(10e3, 0.3, 1e6, 1000);
        assert_eq!(apply_buffer_nl(&w, &BufferNl::linear()), w);
    }

    #[test]
    fn square_term_second_harmonic_matches_identity() {
        // a2 * A^2 cos^2 = a2 A^2 / 2 (1 + cos 2wt): line at 2f of peak a2 A^2 / 2
        let (a, a2, rate) = (0.2, 0.7, 1e6);
        let nl = BufferNl { a1: 1.0, a2, a3: 0.0 };
        let out = apply_buffer_nl(&tone(10e3, a, rate, 10_000), &nl);
        let got = tone_rms(&out.samples, rate, 20e3);
        let want = a2 * a * a / 2.0 * FRAC_1_SQRT_2;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn spur_frequencies_follow_fs() {
        assert_eq!(SpurConfig::frequencies(500e3), vec![50e3, 100e3, 150e3, 200e3]);
        assert_eq!(SpurConfig::frequencies(450e3), vec![45e3, 90e3, 135e3, 180e3]);
        let w = tone(1e3, 1.0, 5e6, 500);
        assert_eq!(inject_spurs(&w, 500e3, &SpurConfig::silent()).unwrap(), w);
        assert!(inject_spurs(&w, 500e3, &SpurConfig { amplitudes_v: vec![1.0] }).is_err());
    }

    #[test]
    fn alias_examples() {
        assert_eq!(alias_frequency(740e3, 500e3), 240e3);
        assert_eq!(alias_frequency(264e3, 500e3), 236e3);
        assert_eq!(alias_frequency(100e3, 500e3), 100e3);
        assert_eq!(alias_frequency(250e3, 500e3), 250e3);
        assert_eq!(alias_frequency(0.0, 500e3), 0.0);
    }

    #[test]
    fn resample_contract() {
        let w = DenseWaveform::zeros(4.9e6, 100);
        assert!(matches!(
            sample_and_quantize(&w, &AdcConfig::default(), 0),
            Err(FrontendError::ResampleContract { .. })
        ));
    }

    #[test]
    fn capture_length_and_bounds() {
        let adc = AdcConfig::default();
        let w = tone(10e3, 5.0, 5e6, 50_000);
        let cap = sample_and_quantize(&w, &adc, 3).unwrap();
        assert_eq!(cap.len(), 5_000);
        assert!(cap.samples.iter().all(|s| s.abs() <= adc.full_scale_v / 2.0));
    }

    #[test]
    fn quantizer_is_midrise() {
        let adc = AdcConfig::default();
        let lsb = adc.lsb();
        assert_eq!(adc.quantize(0.0), lsb / 2.0);
        assert_eq!(adc.quantize(-1e-9), -lsb / 2.0);
        assert_eq!(adc.quantize(100.0), adc.full_scale_v / 2.0 - lsb / 2.0);
    }

    #[test]
    fn quantization_snr_of_full_scale_sine() {
        // oracle: subtract the unquantized sine from the quantized one
        let adc = AdcConfig {
            noise_density: 0.0,
            ..AdcConfig::default()
        };
        let rate = 500e3;
        let len = 1 << 16;
        let f = 997.0 * rate / len as f64;
        let w = tone(f, adc.full_scale_v / 2.0, rate, len);
        let cap = sample_and_quantize(&w, &adc, 0).unwrap();
        let signal: f64 = w.samples.iter().map(|x| x * x).sum();
        let error: f64 = w.samples.iter().zip(&cap.samples).map(|(x, q)| (x - q).powi(2)).sum();
        let snr = 10.0 * (signal / error).log10();
        assert!((snr - (6.02 * 12.0 + 1.76)).abs() < 1.0, "{snr}");
    }

    #[test]
    fn config_validation() {
        assert!(FrontendConfig::wearable().validate().is_ok());
        let mut c = FrontendConfig::wearable();
        c.adc.bits = 20;
        assert!(c.validate().is_err());
        let mut c = FrontendConfig::wearable();
        c.spurs.amplitudes_v.push(0.0);
        assert!(c.validate().is_err());
        let mut c = FrontendConfig::wearable();
        c.adc.fs_hz = 0.0;
        assert!(c.validate().is_err());
    }
}
