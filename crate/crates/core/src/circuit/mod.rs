//! Small-signal coupling of an interference source into the body and its
//! pickup by a terminated receiver.
//!
//! Network (phasors, one frequency at a time):
//!
//! ```text
//! V_INTF --C_INTF--+ body --Z_BODY--+--(C_BAND || R_BAND)-- in --termination-- dgnd --C_G-- earth
//!    |             |                                                        (dgnd = earth when grounded)
//!  [C_INTF_GND]  C_BODY
//!    |             |
//!  earth         earth
//! ```
//!
//! [`solve_exact`] runs full nodal analysis of this ladder;
//! [`transfer_approx`] is the two-divider closed form that neglects the body
//! impedance, the source capacitance in the body divider and `C_G` against
//! `C_RX`.

mod nodal;

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::CircuitError;

pub use nodal::{NodalSystem, Node, PIVOT_FLOOR};

fn positive(name: &str, value: f64) -> Result<(), CircuitError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(CircuitError::InvalidInput(format!(
            "{name} must be finite and > 0, got {value}"
        )))
    }
}

fn cap_admittance(c: f64, freq: f64) -> Complex64 {
    Complex64::new(0.0, 2.0 * PI * freq * c)
}

/// Tissue resistance in series with the skin's parallel R-C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyImpedance {
    pub r_tissue: f64,
    pub r_skin: f64,
    pub c_skin: f64,
}

impl Default for BodyImpedance {
    fn default() -> Self {
        Self {
            r_tissue: 1.0e3,
            r_skin: 10.0e3,
            c_skin: 10.0e-9,
        }
    }
}

impl BodyImpedance {
    pub fn validate(&self) -> Result<(), CircuitError> {
        positive("r_tissue", self.r_tissue)?;
        positive("r_skin", self.r_skin)?;
        positive("c_skin", self.c_skin)
    }

    pub fn impedance(&self, freq: f64) -> Complex64 {
        let skin = (Complex64::new(1.0 / self.r_skin, 0.0) + cap_admittance(self.c_skin, freq)).inv();
        Complex64::new(self.r_tissue, 0.0) + skin
    }
}

/// Capacitances and impedances of the body-interferer-receiver network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingGeometry {
    pub c_intf: f64,
    /// Return capacitance of a floating source; `None` means the source is grounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_intf_gnd: Option<f64>,
    pub c_body: f64,
    pub c_g: f64,
    pub c_band: f64,
    pub r_band: f64,
    #[serde(default)]
    pub z_body: BodyImpedance,
}

impl Default for CouplingGeometry {
    fn default() -> Self {
        Self {
            c_intf: 30e-12,
            c_intf_gnd: None,
            c_body: 150e-12,
            c_g: 1.2e-12,
            c_band: 200e-12,
            r_band: 100.0,
            z_body: BodyImpedance::default(),
        }
    }
}

impl CouplingGeometry {
    pub fn validate(&self) -> Result<(), CircuitError> {
        positive("c_intf", self.c_intf)?;
        if let Some(c) = self.c_intf_gnd {
            positive("c_intf_gnd", c)?;
        }
        positive("c_body", self.c_body)?;
        positive("c_g", self.c_g)?;
        positive("c_band", self.c_band)?;
        positive("r_band", self.r_band)?;
        self.z_body.validate()
    }

    /// Electrode contact: `C_BAND || R_BAND`.
    pub fn band_impedance(&self, freq: f64) -> Complex64 {
        (Complex64::new(1.0 / self.r_band, 0.0) + cap_admittance(self.c_band, freq)).inv()
    }
}

/// Receiver input termination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviceTermination {
    SpectrumAnalyzer { r_sa: f64 },
    Oscilloscope { c_o: f64, r_o: f64 },
    WearableGrounded { c_rx: f64 },
    WearableFloating { c_rx: f64 },
}

impl Default for DeviceTermination {
    fn default() -> Self {
        Self::wearable_floating()
    }
}

impl DeviceTermination {
    pub fn spectrum_analyzer() -> Self {
        Self::SpectrumAnalyzer { r_sa: 50.0 }
    }

    pub fn oscilloscope() -> Self {
        Self::Oscilloscope {
            c_o: 80e-12,
            r_o: 1e6,
        }
    }

    pub fn wearable_grounded() -> Self {
        Self::WearableGrounded { c_rx: 20e-12 }
    }

    pub fn wearable_floating() -> Self {
        Self::WearableFloating { c_rx: 20e-12 }
    }

    /// Parses the short labels `sa`, `osc`, `wrg` and `wr` into default terminations.
    pub fn from_label(label: &str) -> Option<Self> {
        match label.to_ascii_lowercase().as_str() {
            "sa" => Some(Self::spectrum_analyzer()),
            "osc" => Some(Self::oscilloscope()),
            "wrg" => Some(Self::wearable_grounded()),
            "wr" => Some(Self::wearable_floating()),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::SpectrumAnalyzer { .. } => "sa",
            Self::Oscilloscope { .. } => "osc",
            Self::WearableGrounded { .. } => "wrg",
            Self::WearableFloating { .. } => "wr",
        }
    }

    /// Grounded terminations short `C_G`.
    pub fn is_grounded(&self) -> bool {
        !matches!(self, Self::WearableFloating { .. })
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        match *self {
            Self::SpectrumAnalyzer { r_sa } => positive("r_sa", r_sa),
            Self::Oscilloscope { c_o, r_o } => {
                positive("c_o", c_o)?;
                positive("r_o", r_o)
            }
            Self::WearableGrounded { c_rx } | Self::WearableFloating { c_rx } => positive("c_rx", c_rx),
        }
    }

    pub fn admittance(&self, freq: f64) -> Complex64 {
        match *self {
            Self::SpectrumAnalyzer { r_sa } => Complex64::new(1.0 / r_sa, 0.0),
            Self::Oscilloscope { c_o, r_o } => Complex64::new(1.0 / r_o, 0.0) + cap_admittance(c_o, freq),
            Self::WearableGrounded { c_rx } | Self::WearableFloating { c_rx } => cap_admittance(c_rx, freq),
        }
    }
}

/// Geometry of an intentional body-channel link (transmitter to receiver).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TxGeometry {
    pub c_gtx: f64,
    pub c_grx: f64,
    pub c_body: f64,
    pub c_rx: f64,
    #[serde(default)]
    pub z_body: BodyImpedance,
}

impl Default for TxGeometry {
    fn default() -> Self {
        Self {
            c_gtx: 1.2e-12,
            c_grx: 1.2e-12,
            c_body: 150e-12,
            c_rx: 20e-12,
            z_body: BodyImpedance::default(),
        }
    }
}

impl TxGeometry {
    pub fn validate(&self) -> Result<(), CircuitError> {
        positive("c_gtx", self.c_gtx)?;
        positive("c_grx", self.c_grx)?;
        positive("c_body", self.c_body)?;
        positive("c_rx", self.c_rx)?;
        self.z_body.validate()
    }
}

/// Complex gain sampled over frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCurve {
    pub frequencies: Vec<f64>,
    pub ratios: Vec<Complex64>,
}

impl TransferCurve {
    pub fn magnitude_db(&self) -> Vec<f64> {
        self.ratios.iter().map(|r| 20.0 * r.norm().log10()).collect()
    }

    pub fn phase_deg(&self) -> Vec<f64> {
        self.ratios.iter().map(|r| r.arg().to_degrees()).collect()
    }

    /// CSV with columns `freq_hz,mag_db,phase_deg`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,mag_db,phase_deg\n");
        for ((f, m), p) in self.frequencies.iter().zip(self.magnitude_db()).zip(self.phase_deg()) {
            let _ = writeln!(out, "{f},{m},{p}");
        }
        out
    }
}

fn check_freqs(freqs: &[f64]) -> Result<(), CircuitError> {
    for &f in freqs {
        if !(f.is_finite() && f > 0.0) {
            return Err(CircuitError::InvalidInput(format!(
                "frequency must be finite and > 0, got {f}"
            )));
        }
    }
    if freqs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CircuitError::InvalidInput(
            "frequencies must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `V_received / V_INTF` of the coupling ladder at a single frequency.
pub fn coupling_ratio(
    geometry: &CouplingGeometry,
    device: &DeviceTermination,
    freq: f64,
) -> Result<Complex64, CircuitError> {
    // nodes: 0 body, 1 tissue/contact junction, 2 device input, 3 source
    // high terminal, then the optional source return and device ground
    let mut next = 4;
    let src_lo = geometry.c_intf_gnd.map(|_| {
        next += 1;
        next - 1
    });
    let dev_gnd = (!device.is_grounded()).then(|| {
        next += 1;
        next - 1
    });

    let mut sys = NodalSystem::new(next);
    sys.voltage_source(Some(3), src_lo, Complex64::new(1.0, 0.0))
        .admittance(Some(3), Some(0), cap_admittance(geometry.c_intf, freq))
        .admittance(Some(0), None, cap_admittance(geometry.c_body, freq))
        .impedance(Some(0), Some(1), geometry.z_body.impedance(freq))
        .impedance(Some(1), Some(2), geometry.band_impedance(freq))
        .admittance(Some(2), dev_gnd, device.admittance(freq));
    if let (Some(lo), Some(c)) = (src_lo, geometry.c_intf_gnd) {
        sys.admittance(Some(lo), None, cap_admittance(c, freq));
    }
    if let Some(g) = dev_gnd {
        sys.admittance(Some(g), None, cap_admittance(geometry.c_g, freq));
    }

    let v = sys.solve(freq)?;
    let ground = dev_gnd.map_or(Complex64::new(0.0, 0.0), |g| v[g]);
    Ok(v[2] - ground)
}

/// Exact nodal solution of the interference pickup ladder over `freqs`.
pub fn solve_exact(
    geometry: &CouplingGeometry,
    device: &DeviceTermination,
    freqs: &[f64],
) -> Result<TransferCurve, CircuitError> {
    geometry.validate()?;
    device.validate()?;
    check_freqs(freqs)?;
    let ratios = freqs
        .iter()
        .map(|&f| coupling_ratio(geometry, device, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TransferCurve {
        frequencies: freqs.to_vec(),
        ratios,
    })
}

/// Series combination of the source coupling and return capacitances.
pub fn effective_cintf(c_intf: f64, c_intf_gnd: Option<f64>) -> Result<f64, CircuitError> {
    positive("c_intf", c_intf)?;
    match c_intf_gnd {
        None => Ok(c_intf),
        Some(cg) => {
            positive("c_intf_gnd", cg)?;
            Ok(c_intf * cg / (c_intf + cg))
        }
    }
}

/// Frequency-independent closed form `(C'_INTF / C_BODY) * (C_G / C_RX)`, in dB.
pub fn transfer_approx(geometry: &CouplingGeometry, device: &DeviceTermination) -> Result<f64, CircuitError> {
    geometry.validate()?;
    device.validate()?;
    let c_rx = match *device {
        DeviceTermination::WearableFloating { c_rx } => c_rx,
        other => return Err(CircuitError::UnsupportedClosedForm(other.label())),
    };
    let c_eff = effective_cintf(geometry.c_intf, geometry.c_intf_gnd)?;
    let ratio = (c_eff / geometry.c_body) * (geometry.c_g / c_rx);
    Ok(20.0 * ratio.log10())
}

/// Transmitter-electrode to receiver gain of an intentional body link.
pub fn channel_gain(tx: &TxGeometry, freqs: &[f64]) -> Result<TransferCurve, CircuitError> {
    tx.validate()?;
    check_freqs(freqs)?;
    let ratios = freqs
        .iter()
        .map(|&f| {
            // nodes: 0 body (TX electrode), 1 TX ground, 2 RX electrode, 3 RX ground
            let mut sys = NodalSystem::new(4);
            sys.voltage_source(Some(0), Some(1), Complex64::new(1.0, 0.0))
                .admittance(Some(1), None, cap_admittance(tx.c_gtx, f))
                .admittance(Some(0), None, cap_admittance(tx.c_body, f))
                .impedance(Some(0), Some(2), tx.z_body.impedance(f))
                .admittance(Some(2), Some(3), cap_admittance(tx.c_rx, f))
                .admittance(Some(3), None, cap_admittance(tx.c_grx, f));
            let v = sys.solve(f)?;
            Ok(v[2] - v[3])
        })
        .collect::<Result<Vec<_>, CircuitError>>()?;
    Ok(TransferCurve {
        frequencies: freqs.to_vec(),
        ratios,
    })
}

/// Logarithmically spaced frequencies, both ends included.
pub fn log_space(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![start];
    }
    let (a, b) = (start.ln(), stop.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db_at(geometry: &CouplingGeometry, device: &DeviceTermination, f: f64) -> f64 {
        solve_exact(geometry, device, &[f]).unwrap().magnitude_db()[0]
    }

    #[test]
    fn effective_cintf_examples() {
        assert_eq!(effective_cintf(30e-12, None).unwrap(), 30e-12);
        assert!((effective_cintf(30e-12, Some(30e-12)).unwrap() - 15e-12).abs() < 1e-24);
        assert!((effective_cintf(30e-12, Some(10e-12)).unwrap() - 7.5e-12).abs() < 1e-24);
        assert!(effective_cintf(0.0, None).is_err());
        assert!(effective_cintf(30e-12, Some(-1.0)).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let wr = DeviceTermination::wearable_floating();
        let g = CouplingGeometry::default();
        // 0.2 * 0.06 = 0.012
        assert!((transfer_approx(&g, &wr).unwrap() - 20.0 * 0.012f64.log10()).abs() < 1e-9);

        let sym = CouplingGeometry {
            c_intf_gnd: Some(30e-12),
            ..g
        };
        let drop = transfer_approx(&g, &wr).unwrap() - transfer_approx(&sym, &wr).unwrap();
        assert!((drop - 20.0 * 2f64.log10()).abs() < 1e-9);

        let floating = CouplingGeometry {
            c_intf_gnd: Some(10e-12),
            ..g
        };
        let expected = 20.0 * (0.05f64 * 0.06).log10();
        assert!((transfer_approx(&floating, &wr).unwrap() - expected).abs() < 1e-9);
        assert!((expected + 50.46).abs() < 0.01);
    }

    #[test]
    fn closed_form_rejects_grounded_devices() {
        let g = CouplingGeometry::default();
        for dev in [
            DeviceTermination::spectrum_analyzer(),
            DeviceTermination::oscilloscope(),
            DeviceTermination::wearable_grounded(),
        ] {
            assert!(matches!(
                transfer_approx(&g, &dev),
                Err(CircuitError::UnsupportedClosedForm(_))
            ));
        }
    }

    #[test]
    fn rejects_bad_frequencies() {
        let g = CouplingGeometry::default();
        let d = DeviceTermination::default();
        assert!(solve_exact(&g, &d, &[0.0]).is_err());
        assert!(solve_exact(&g, &d, &[-5.0]).is_err());
        assert!(solve_exact(&g, &d, &[2e3, 1e3]).is_err());
        let bad = CouplingGeometry { c_body: 0.0, ..g };
        assert!(matches!(
            solve_exact(&bad, &d, &[1e3]),
            Err(CircuitError::InvalidInput(_))
        ));
    }

    #[test]
    fn huge_source_return_matches_grounded_source() {
        let g = CouplingGeometry::default();
        let big = CouplingGeometry {
            c_intf_gnd: Some(1.0),
            ..g
        };
        for dev in [
            DeviceTermination::spectrum_analyzer(),
            DeviceTermination::wearable_floating(),
        ] {
            for f in [1e3, 1e4, 1e5, 2.5e5] {
                assert!((db_at(&g, &dev, f) - db_at(&big, &dev, f)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn spectrum_analyzer_rises_twenty_db_per_decade() {
        let g = CouplingGeometry::default();
        let sa = DeviceTermination::spectrum_analyzer();
        let slope = (db_at(&g, &sa, 1e5) - db_at(&g, &sa, 1e3)) / 2.0;
        assert!((slope - 20.0).abs() <= 1.0, "slope {slope}");
    }

    #[test]
    fn grounded_devices_ignore_c_g() {
        let g = CouplingGeometry::default();
        let g2 = CouplingGeometry { c_g: 50e-12, ..g };
        for dev in [DeviceTermination::oscilloscope(), DeviceTermination::wearable_grounded()] {
            assert_eq!(db_at(&g, &dev, 1e5), db_at(&g2, &dev, 1e5));
        }
    }

    #[test]
    fn channel_gain_prefers_small_receiver_capacitance() {
        let base = TxGeometry::default();
        let gains: Vec<f64> = [5e-12, 10e-12, 20e-12, 40e-12, 80e-12]
            .iter()
            .map(|&c_rx| {
                channel_gain(&TxGeometry { c_rx, ..base }, &[2e5]).unwrap().magnitude_db()[0]
            })
            .collect();
        assert!(gains.windows(2).all(|w| w[1] <= w[0]), "{gains:?}");

        let grounded = TxGeometry { c_grx: 1.0, ..base };
        let g0 = channel_gain(&base, &[2e5]).unwrap().magnitude_db()[0];
        let g1 = channel_gain(&grounded, &[2e5]).unwrap().magnitude_db()[0];
        assert!(g1 > g0);
    }

    #[test]
    fn transfer_csv_header_and_rows() {
        let curve = solve_exact(
            &CouplingGeometry::default(),
            &DeviceTermination::default(),
            &[1e3, 1e4],
        )
        .unwrap();
        let csv = curve.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "freq_hz,mag_db,phase_deg");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1000,"));
    }

    #[test]
    fn device_labels_round_trip() {
        for label in ["sa", "osc", "wrg", "wr"] {
            assert_eq!(DeviceTermination::from_label(label).unwrap().label(), label);
        }
        assert!(DeviceTermination::from_label("x").is_none());
    }
}
