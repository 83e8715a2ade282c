/// A densely sampled analog waveform (volts), standing in for continuous time.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWaveform {
    pub rate: f64,
    pub samples: Vec<f64>,
}

impl DenseWaveform {
    pub fn zeros(rate: f64, len: usize) -> Self {
        Self {
            rate,
            samples: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    /// Adds `other` sample by sample. Rates must match.
    pub fn accumulate(&mut self, other: &DenseWaveform) {
        debug_assert_eq!(self.rate, other.rate);
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += b;
        }
    }

    /// Adds `amplitude * cos(2*pi*freq*t + phase)`.
    pub fn add_tone(&mut self, freq: f64, amplitude: f64, phase: f64) {
        if amplitude == 0.0 {
            return;
        }
        let w = std::f64::consts::TAU * freq / self.rate;
        for (i, s) in self.samples.iter_mut().enumerate() {
            *s += amplitude * (w * i as f64 + phase).cos();
        }
    }
}
