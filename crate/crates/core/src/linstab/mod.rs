//! Linear stability of the closed loop at its equilibrium, with and without
//! feedback delay.

mod analysis;
mod delay;
mod locus;
mod pade;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dalgebra::{Algebra, TPoly};
use crate::gcnet::{NetError, NetSpec};
use crate::linalg::{self, LinalgError};
use crate::odeflow::{quad_rhs, QuadParams, State, CONTROL_DIM, STATE_DIM};

pub use analysis::{analyze, Analysis};
pub use delay::{critical_delay, delay_determinant, determinant_scale, CriticalDelay, DelayOptions, DelayStatus};
pub use locus::{root_locus, write_root_locus_csv, RootLocus};
pub use pade::{pade_augment, pade_coefficients, pade_realization, PadeBlock, PADE_ORDER};

#[derive(Debug, Error)]
pub enum LinstabError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("delay must be positive, got {0}")]
    BadDelay(f64),
    #[error("the undelayed system is not stable (spectral abscissa {0:e})")]
    Unstable(f64),
    #[error("{0}")]
    Invalid(String),
}

/// `A = A_s + A_N`: the plant Jacobian at the equilibrium plus the part
/// closed through the network.
#[derive(Debug, Clone, PartialEq)]
pub struct LinModel {
    pub a_s: DMatrix<f64>,
    pub a_n: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

impl LinModel {
    pub fn new(a_s: DMatrix<f64>, a_n: DMatrix<f64>) -> Result<Self, LinstabError> {
        if !a_s.is_square() || a_s.shape() != a_n.shape() || a_s.nrows() == 0 {
            return Err(LinstabError::Invalid(format!(
                "A_s {:?} and A_N {:?} must be equal-sized square matrices",
                a_s.shape(),
                a_n.shape()
            )));
        }
        let a = &a_s + &a_n;
        Ok(LinModel { a_s, a_n, a })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Linearizes `x' = f(x, N(x))` at `x_e`: `A_s = ∂f/∂x`,
/// `A_N = ∂f/∂u · ∂N/∂x`, all from first-order expansions.
pub fn linearize(net: &NetSpec, p: &QuadParams, x_e: &State) -> Result<LinModel, LinstabError> {
    let u_e = net.forward(x_e)?;
    if u_e.len() != CONTROL_DIM {
        return Err(LinstabError::Invalid(format!(
            "controller returns {} values, expected {CONTROL_DIM}",
            u_e.len()
        )));
    }
    let n = STATE_DIM + CONTROL_DIM;
    let alg = Algebra::new(n, 1).expect("first-order algebra");
    let var = |i: usize, v: f64| TPoly::variable(&alg, i, v).expect("index in range");
    let x: Vec<TPoly> = (0..STATE_DIM).map(|i| var(i, x_e[i])).collect();
    let u: Vec<TPoly> = (0..CONTROL_DIM).map(|i| var(STATE_DIM + i, u_e[i])).collect();
    let f = quad_rhs(&x, &u, p);
    let grads: Vec<Vec<f64>> = f.iter().map(TPoly::gradient).collect();
    let a_s = DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| grads[i][j]);
    let b = DMatrix::from_fn(STATE_DIM, CONTROL_DIM, |i, j| grads[i][STATE_DIM + j]);
    let jn = net.input_jacobian(x_e)?;
    let jn = DMatrix::from_fn(CONTROL_DIM, STATE_DIM, |i, j| jn[i][j]);
    LinModel::new(a_s, b * jn)
}

/// Eigenvalues sorted by descending real part, then descending imaginary
/// part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
}

impl Spectrum {
    pub fn abscissa(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.abscissa() < 0.0
    }
}

pub fn eig(a: &DMatrix<f64>) -> Result<Spectrum, LinstabError> {
    let mut eigenvalues = linalg::eigenvalues(a)?;
    eigenvalues.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    Ok(Spectrum { eigenvalues })
}

/// Decay and oscillation time scales of a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalMargins {
    /// Slowest time for a mode envelope to fall to 10%, `max ln(0.1)/α`.
    /// `None` when some mode does not decay.
    pub zeta10: Option<f64>,
    /// Longest oscillation period `max 2π/|ω|`; `None` if all modes are real.
    pub period: Option<f64>,
    pub stable: bool,
}

/// Imaginary parts below this are treated as real modes.
const REAL_MODE_TOL: f64 = 1e-9;

pub fn margins_from_spectrum(s: &Spectrum) -> ModalMargins {
    let stable = s.is_stable();
    let zeta10 = stable.then(|| {
        s.eigenvalues
            .iter()
            .map(|l| 0.1f64.ln() / l.re)
            .fold(0.0, f64::max)
    });
    let period = s
        .eigenvalues
        .iter()
        .filter(|l| l.im.abs() > REAL_MODE_TOL * (1.0 + l.norm()))
        .map(|l| 2.0 * std::f64::consts::PI / l.im.abs())
        .reduce(f64::max);
    ModalMargins {
        zeta10,
        period,
        stable,
    }
}

/// The margins JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginsReport {
    pub zeta10: Option<f64>,
    #[serde(rename = "T")]
    pub period: Option<f64>,
    pub tau_star_pade: Option<f64>,
    pub tau_star_refined: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcnet::{saturated_linear, OutputMap};

    #[test]
    fn margins_of_simple_spectra() {
        let s = Spectrum {
            eigenvalues: vec![Complex64::new(-1.0, 0.0), Complex64::new(-3.0, 0.0)],
        };
        let m = margins_from_spectrum(&s);
        assert!((m.zeta10.unwrap() - 10f64.ln()).abs() < 1e-15);
        assert!((m.zeta10.unwrap() - 2.302585).abs() < 1e-6);
        assert_eq!(m.period, None);

        let s = Spectrum {
            eigenvalues: vec![
                Complex64::new(-0.5, 2.0 * std::f64::consts::PI),
                Complex64::new(-0.5, -2.0 * std::f64::consts::PI),
            ],
        };
        let m = margins_from_spectrum(&s);
        assert!((m.period.unwrap() - 1.0).abs() < 1e-15);

        let s = Spectrum {
            eigenvalues: vec![Complex64::new(0.1, 0.0), Complex64::new(-1.0, 0.0)],
        };
        let m = margins_from_spectrum(&s);
        assert!(!m.stable && m.zeta10.is_none());
    }

    #[test]
    fn constant_network_gives_plant_jacobian() {
        let p = QuadParams::default();
        let b1 = (2.0 * p.hover_control()[0] - 1.0).atanh();
        let net = saturated_linear(vec![vec![0.0; 5]; 2], vec![b1, 0.0], OutputMap::quad_controls())
            .unwrap();
        let lin = linearize(&net, &p, &[0.0; 5]).unwrap();
        assert!(lin.a_n.iter().all(|v| *v == 0.0));
        assert_eq!(lin.a, lin.a_s);
        let mut want = DMatrix::zeros(5, 5);
        want[(0, 1)] = 1.0;
        want[(1, 1)] = -0.5;
        want[(1, 4)] = 9.81;
        want[(2, 3)] = 1.0;
        want[(3, 3)] = -0.5;
        let err = (&lin.a_s - &want).amax();
        assert!(err < 1e-10, "{}", lin.a_s);
    }

    #[test]
    fn spectrum_sorted_and_conjugate_closed() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -2.0]);
        let s = eig(&a).unwrap();
        assert!((s.eigenvalues[0] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
        assert!((s.eigenvalues[1] - Complex64::new(0.0, -1.0)).norm() < 1e-12);
        assert!((s.eigenvalues[2] + 2.0).norm() < 1e-12);
    }
}
