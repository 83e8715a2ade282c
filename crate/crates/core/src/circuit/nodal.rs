//! Dense complex modified-nodal-analysis system for small phasor networks.
//!
//! Node `None` is earth. Voltage sources add one branch-current unknown each.

use num_complex::Complex64;

use crate::error::CircuitError;

/// Pivots smaller than this (in siemens) mark the network as singular.
pub const PIVOT_FLOOR: f64 = 1e-18;

pub type Node = Option<usize>;

#[derive(Debug, Clone)]
pub struct NodalSystem {
    nodes: usize,
    admittances: Vec<(Node, Node, Complex64)>,
    sources: Vec<(Node, Node, Complex64)>,
}

impl NodalSystem {
    pub fn new(nodes: usize) -> Self {
        Self {
            nodes,
            admittances: Vec::new(),
            sources: Vec::new(),
        }
    }

    /// Two-terminal element with admittance `y` between `a` and `b`.
    pub fn admittance(&mut self, a: Node, b: Node, y: Complex64) -> &mut Self {
        self.admittances.push((a, b, y));
        self
    }

    /// Two-terminal element given by its impedance.
    pub fn impedance(&mut self, a: Node, b: Node, z: Complex64) -> &mut Self {
        self.admittance(a, b, z.inv())
    }

    /// Ideal voltage source, `V(plus) - V(minus) = volts`.
    pub fn voltage_source(&mut self, plus: Node, minus: Node, volts: Complex64) -> &mut Self {
        self.sources.push((plus, minus, volts));
        self
    }

    /// Solves for node voltages. `freq_hz` only labels the error.
    pub fn solve(&self, freq_hz: f64) -> Result<Vec<Complex64>, CircuitError> {
        let dim = self.nodes + self.sources.len();
        let mut a = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
        let mut rhs = vec![Complex64::new(0.0, 0.0); dim];

        for &(p, q, y) in &self.admittances {
            if let Some(i) = p {
                a[i][i] += y;
            }
            if let Some(j) = q {
                a[j][j] += y;
            }
            if let (Some(i), Some(j)) = (p, q) {
                a[i][j] -= y;
                a[j][i] -= y;
            }
        }
        for (k, &(p, q, v)) in self.sources.iter().enumerate() {
            let row = self.nodes + k;
            if let Some(i) = p {
                a[i][row] += 1.0;
                a[row][i] += 1.0;
            }
            if let Some(j) = q {
                a[j][row] -= 1.0;
                a[row][j] -= 1.0;
            }
            rhs[row] = v;
        }

        let x = gauss_solve(a, rhs).map_err(|pivot| CircuitError::Singular { freq_hz, pivot })?;
        Ok(x[..self.nodes].to_vec())
    }
}

/// Gaussian elimination with partial pivoting. On failure returns the
/// offending pivot magnitude.
fn gauss_solve(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Result<Vec<Complex64>, f64> {
    let n = b.len();
    for col in 0..n {
        let (piv, mag) = (col..n)
            .map(|r| (r, a[r][col].norm()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if mag < PIVOT_FLOOR {
            return Err(mag);
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor.norm() == 0.0 {
                continue;
            }
            for c in col..n {
                let v = a[col][c];
                a[r][c] -= factor * v;
            }
            let v = b[col];
            b[r] -= factor * v;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resistive_divider() {
        let mut sys = NodalSystem::new(2);
        sys.voltage_source(Some(0), None, Complex64::new(1.0, 0.0))
            .impedance(Some(0), Some(1), Complex64::new(1000.0, 0.0))
            .impedance(Some(1), None, Complex64::new(3000.0, 0.0));
        let v = sys.solve(1.0).unwrap();
        assert!((v[1].re - 0.75).abs() < 1e-12);
        assert!(v[1].im.abs() < 1e-12);
    }

    #[test]
    fn floating_node_is_singular() {
        let mut sys = NodalSystem::new(2);
        sys.voltage_source(Some(0), None, Complex64::new(1.0, 0.0));
        // node 1 has no connections at all
        let err = sys.solve(10.0).unwrap_err();
        assert!(matches!(err, CircuitError::Singular { .. }));
    }
}
