use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{pade_augment, LinModel, LinstabError};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayOptions {
    /// First delay of the geometric bracket scan, s.
    pub tau_min: f64,
    /// Largest delay examined, s.
    pub tau_max: f64,
    /// Ratio between consecutive scan points.
    pub ratio: f64,
    /// Relative width at which bisection stops.
    pub bisection_rtol: f64,
    pub newton_max_iterations: usize,
    /// Accepted `|det|` at the refined crossing, relative to
    /// [`determinant_scale`].
    pub det_tol: f64,
}

impl Default for DelayOptions {
    fn default() -> Self {
        DelayOptions {
            tau_min: 1e-4,
            tau_max: 10.0,
            ratio: 1.3,
            bisection_rtol: 1e-12,
            newton_max_iterations: 50,
            det_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayStatus {
    /// Padé bracket found and the transcendental root located.
    Refined,
    /// Padé bracket found, Newton on the characteristic equation did not
    /// settle; only the Padé estimate is meaningful.
    RefinementFailed,
    /// No instability up to `tau_max`.
    NoCrossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalDelay {
    pub status: DelayStatus,
    pub tau_max: f64,
    pub pade: Option<f64>,
    pub refined: Option<f64>,
    /// Crossing frequency, rad/s.
    pub omega: Option<f64>,
    /// `|det(A_s + A_N e^{-jωτ} - jωI)|` at the reported crossing.
    pub det_residual: Option<f64>,
}

impl CriticalDelay {
    /// The refined value when available, otherwise the Padé estimate.
    pub fn best(&self) -> Option<f64> {
        self.refined.or(self.pade)
    }
}

fn char_matrix(lin: &LinModel, omega: f64, tau: f64) -> DMatrix<Complex64> {
    let n = lin.dim();
    let e = Complex64::new(0.0, -omega * tau).exp();
    DMatrix::from_fn(n, n, |i, j| {
        let mut v = Complex64::from(lin.a_s[(i, j)]) + e * lin.a_n[(i, j)];
        if i == j {
            v -= Complex64::new(0.0, omega);
        }
        v
    })
}

/// `det(A_s + A_N e^{-jωτ} - jωI)`.
pub fn delay_determinant(lin: &LinModel, omega: f64, tau: f64) -> Complex64 {
    char_matrix(lin, omega, tau).lu().determinant()
}

/// `∏_i (‖row_i(A_s)‖ + ‖row_i(A_N)‖ + ω)`, a Hadamard-type bound on
/// `|det(A_s + A_N e^{-jωτ} - jωI)|` for any `τ`. Residuals are judged
/// against it because the raw determinant grows like `ω^n`.
pub fn determinant_scale(lin: &LinModel, omega: f64) -> f64 {
    let row = |m: &DMatrix<f64>, i: usize| m.row(i).norm();
    (0..lin.dim())
        .map(|i| row(&lin.a_s, i) + row(&lin.a_n, i) + omega.abs())
        .product()
}

// det and its partials in ω and τ, using d det = det · tr(M⁻¹ dM).
fn det_with_gradient(lin: &LinModel, omega: f64, tau: f64) -> Option<(Complex64, Complex64, Complex64)> {
    let n = lin.dim();
    let m = char_matrix(lin, omega, tau);
    let e = Complex64::new(0.0, -omega * tau).exp();
    let an = lin.a_n.map(Complex64::from);
    let j = Complex64::new(0.0, 1.0);
    let d_omega = &an * (-j * tau * e) - DMatrix::<Complex64>::identity(n, n) * j;
    let d_tau = &an * (-j * omega * e);
    let lu = m.lu();
    let det = lu.determinant();
    let x_w = lu.solve(&d_omega)?;
    let x_t = lu.solve(&d_tau)?;
    Some((det, det * x_w.trace(), det * x_t.trace()))
}

fn augmented_abscissa(lin: &LinModel, tau: f64) -> Result<f64, LinstabError> {
    Ok(linalg::spectral_abscissa(&pade_augment(lin, tau)?)?)
}

/// Smallest feedback delay that destabilizes the loop.
///
/// A geometric scan over the spectral abscissa of the Padé-augmented system
/// brackets the first crossing, bisection narrows it, and Newton on the
/// delayed characteristic equation restricted to `λ = jω` refines it from
/// the Padé crossing pair.
pub fn critical_delay(lin: &LinModel, opts: &DelayOptions) -> Result<CriticalDelay, LinstabError> {
    if !(opts.tau_min > 0.0 && opts.tau_max > opts.tau_min && opts.ratio > 1.0) {
        return Err(LinstabError::Invalid(
            "delay scan needs 0 < tau_min < tau_max and ratio > 1".into(),
        ));
    }
    let alpha0 = linalg::spectral_abscissa(&lin.a)?;
    if alpha0 >= 0.0 {
        return Err(LinstabError::Unstable(alpha0));
    }
    let none = CriticalDelay {
        status: DelayStatus::NoCrossing,
        tau_max: opts.tau_max,
        pade: None,
        refined: None,
        omega: None,
        det_residual: None,
    };
    if lin.a_n.iter().all(|v| *v == 0.0) {
        return Ok(none);
    }

    let mut lo = 0.0;
    let mut tau = opts.tau_min;
    let hi = loop {
        if augmented_abscissa(lin, tau)? >= 0.0 {
            break tau;
        }
        if tau >= opts.tau_max {
            return Ok(none);
        }
        lo = tau;
        tau = (tau * opts.ratio).min(opts.tau_max);
    };
    let mut hi = hi;
    while hi - lo > opts.bisection_rtol * hi {
        let mid = 0.5 * (lo + hi);
        if augmented_abscissa(lin, mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let tau_pade = hi;

    let spec = linalg::eigenvalues(&pade_augment(lin, tau_pade)?)?;
    let crossing = spec
        .iter()
        .copied()
        .max_by(|a, b| a.re.total_cmp(&b.re))
        .expect("nonempty spectrum");
    let omega_pade = crossing.im.abs();

    let mut out = CriticalDelay {
        status: DelayStatus::RefinementFailed,
        tau_max: opts.tau_max,
        pade: Some(tau_pade),
        refined: None,
        omega: Some(omega_pade),
        det_residual: Some(delay_determinant(lin, omega_pade, tau_pade).norm()),
    };
    if let Some((w, t, r)) = refine(lin, omega_pade, tau_pade, opts) {
        let close = (t - tau_pade).abs() <= 0.2 * tau_pade;
        if t > 0.0 && r < opts.det_tol * determinant_scale(lin, w) && close {
            out.status = DelayStatus::Refined;
            out.refined = Some(t);
            out.omega = Some(w);
            out.det_residual = Some(r);
        }
    }
    Ok(out)
}

// Damped Newton on (ω, τ) with the real and imaginary parts of the
// determinant as residual.
fn refine(lin: &LinModel, mut w: f64, mut t: f64, opts: &DelayOptions) -> Option<(f64, f64, f64)> {
    let mut f = delay_determinant(lin, w, t);
    for _ in 0..opts.newton_max_iterations {
        if f.norm() == 0.0 {
            break;
        }
        let (det, fw, ft) = det_with_gradient(lin, w, t)?;
        f = det;
        let jac_det = fw.re * ft.im - ft.re * fw.im;
        if jac_det == 0.0 || !jac_det.is_finite() {
            return None;
        }
        let dw = -(ft.im * f.re - ft.re * f.im) / jac_det;
        let dt = -(-fw.im * f.re + fw.re * f.im) / jac_det;
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..=10 {
            let (wn, tn) = (w + step * dw, t + step * dt);
            let fnew = delay_determinant(lin, wn, tn);
            if fnew.norm() < f.norm() {
                w = wn;
                t = tn;
                f = fnew;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        let small_step = (step * dw).abs() <= 1e-15 * w.abs().max(1.0)
            && (step * dt).abs() <= 1e-15 * t.abs().max(1e-300);
        if !improved || small_step {
            break;
        }
    }
    (w.is_finite() && t.is_finite()).then(|| (w.abs(), t, f.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn scalar() -> LinModel {
        LinModel::new(DMatrix::from_element(1, 1, 0.0), DMatrix::from_element(1, 1, -1.0)).unwrap()
    }

    #[test]
    fn scalar_benchmark_crosses_at_half_pi() {
        let cd = critical_delay(&scalar(), &DelayOptions::default()).unwrap();
        assert_eq!(cd.status, DelayStatus::Refined);
        let pade = cd.pade.unwrap();
        assert!((pade / FRAC_PI_2 - 1.0).abs() < 0.02, "{pade}");
        assert!((cd.refined.unwrap() - FRAC_PI_2).abs() < 1e-6);
        assert!((cd.omega.unwrap() - 1.0).abs() < 1e-6);
        assert!(cd.det_residual.unwrap() < 1e-8);
    }

    #[test]
    fn fast_loops_refine_despite_large_determinants() {
        // Decoupled x_i' = -k_i x_i(t - τ): the stiffest channel goes first,
        // at τ = π / (2 k_max) with ω = k_max.
        let gains = [50.0, 60.0, 70.0, 80.0, 90.0];
        let lin = LinModel::new(
            DMatrix::zeros(5, 5),
            DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(5, gains.iter().map(|k| -k))),
        )
        .unwrap();
        let cd = critical_delay(&lin, &DelayOptions::default()).unwrap();
        assert_eq!(cd.status, DelayStatus::Refined, "{cd:?}");
        assert!((cd.refined.unwrap() - FRAC_PI_2 / 90.0).abs() < 1e-10);
        assert!((cd.omega.unwrap() - 90.0).abs() < 1e-6);
    }

    #[test]
    fn no_feedback_never_destabilizes() {
        let lin = LinModel::new(DMatrix::from_element(1, 1, -1.0), DMatrix::zeros(1, 1)).unwrap();
        let cd = critical_delay(&lin, &DelayOptions::default()).unwrap();
        assert_eq!(cd.status, DelayStatus::NoCrossing);
        assert_eq!(cd.best(), None);
    }

    #[test]
    fn unstable_base_is_an_error() {
        let lin = LinModel::new(DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(
            critical_delay(&lin, &DelayOptions::default()),
            Err(LinstabError::Unstable(_))
        ));
    }

    #[test]
    fn small_delay_keeps_physical_abscissa() {
        let lin = scalar();
        let alpha = augmented_abscissa(&lin, 1e-5).unwrap();
        assert!((alpha - (-1.0)).abs() < 1e-4, "{alpha}");
    }
}
