use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dalgebra::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("step size fell below h_min at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxSteps { t: f64, max_steps: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::oracle()
    }
}

impl IntegratorConfig {
    /// Tight tolerances for reference solutions.
    pub fn oracle() -> Self {
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 0.5,
            max_steps: 200_000,
        }
    }

    /// Tolerances used when propagating Taylor maps. Step control sees only
    /// the constant parts, and at 1e-8 the order-6 and order-7 coefficients
    /// of the quadcopter maps were dominated by truncation error.
    pub fn map_propagation() -> Self {
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            ..Self::oracle()
        }
    }

    pub fn with_tol(self, tol: f64) -> Self {
        IntegratorConfig {
            rel_tol: tol,
            abs_tol: tol,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let bad = |m: &str| Err(IntegrateError::InvalidConfig(m.to_string()));
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return bad("need 0 < h_min <= h_init <= h_max");
        }
        if !self.h_max.is_finite() {
            return bad("h_max must be finite");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        Ok(())
    }
}

/// Accepted grid points of an integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<Vec<S>>,
    /// Scaled local error estimate of the step that produced each point
    /// (0 for the initial point). Always `<= 1` for accepted steps.
    pub error_estimates: Vec<f64>,
    pub rejected_steps: usize,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &[S] {
        self.states.last().expect("trajectory holds the initial point")
    }
}

// Fehlberg 4(5) tableau.
const C: [f64; 6] = [0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5];
const A: [[f64; 5]; 6] = [
    [0.0; 5],
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const B4: [f64; 6] = [
    25.0 / 216.0,
    0.0,
    1408.0 / 2565.0,
    2197.0 / 4104.0,
    -0.2,
    0.0,
];

/// Adaptive RKF4(5) stepper for `x' = f(t, x)`, advancing with the
/// fifth-order solution. Step control sees only constant parts, so over
/// [`TPoly`](crate::dalgebra::TPoly) the step sequence is that of the
/// nominal trajectory.
pub struct Rkf45<S, F> {
    rhs: F,
    cfg: IntegratorConfig,
    t: f64,
    x: Vec<S>,
    h: f64,
    /// Extra cap on the step, used by the delayed integrator.
    h_cap: f64,
    steps: usize,
    rejected: usize,
}

impl<S: Scalar, F: FnMut(f64, &[S]) -> Vec<S>> Rkf45<S, F> {
    pub fn new(rhs: F, t0: f64, x0: Vec<S>, cfg: IntegratorConfig) -> Result<Self, IntegrateError> {
        cfg.validate()?;
        if !t0.is_finite() || x0.iter().any(|v| !v.value().is_finite()) {
            return Err(IntegrateError::NonFinite { t: t0 });
        }
        Ok(Rkf45 {
            rhs,
            cfg,
            t: t0,
            x: x0,
            h: cfg.h_init,
            h_cap: f64::INFINITY,
            steps: 0,
            rejected: 0,
        })
    }

    pub fn set_step_cap(&mut self, cap: f64) {
        self.h_cap = cap;
        self.h = self.h.min(cap);
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[S] {
        &self.x
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    /// Advances to exactly `t_end`, calling `on_accept(t, x, err)` after
    /// every accepted step.
    pub fn advance_to(
        &mut self,
        t_end: f64,
        mut on_accept: impl FnMut(f64, &[S], f64),
    ) -> Result<(), IntegrateError> {
        let n = self.x.len();
        while self.t < t_end {
            if self.steps >= self.cfg.max_steps {
                return Err(IntegrateError::MaxSteps {
                    t: self.t,
                    max_steps: self.cfg.max_steps,
                });
            }
            self.steps += 1;
            let h_nominal = self.h.min(self.cfg.h_max).min(self.h_cap);
            let remaining = t_end - self.t;
            // Stretch the final step slightly rather than leave a sliver.
            let (h, last) = if h_nominal >= remaining * (1.0 - 1e-12) {
                (remaining, true)
            } else {
                (h_nominal, false)
            };

            let mut k: Vec<Vec<S>> = Vec::with_capacity(6);
            for s in 0..6 {
                let stage = if s == 0 {
                    self.x.clone()
                } else {
                    let mut xs = self.x.clone();
                    for (j, kj) in k.iter().enumerate().take(s) {
                        let a = A[s][j];
                        if a != 0.0 {
                            for i in 0..n {
                                xs[i].add_scaled(h * a, &kj[i]);
                            }
                        }
                    }
                    xs
                };
                let ks = (self.rhs)(self.t + C[s] * h, &stage);
                debug_assert_eq!(ks.len(), n);
                k.push(ks);
            }

            let mut err = 0.0f64;
            let mut x_new = self.x.clone();
            for i in 0..n {
                let mut e = 0.0;
                for s in 0..6 {
                    e += (B5[s] - B4[s]) * k[s][i].value();
                    if B5[s] != 0.0 {
                        x_new[i].add_scaled(h * B5[s], &k[s][i]);
                    }
                }
                let e = (h * e).abs();
                let scale = self.cfg.abs_tol
                    + self.cfg.rel_tol * self.x[i].value().abs().max(x_new[i].value().abs());
                err = err.max(e / scale);
            }

            if !err.is_finite() {
                // Treat as a failed step: shrink hard and retry.
                self.rejected += 1;
                self.h = h * 0.1;
                if self.h < self.cfg.h_min {
                    return Err(IntegrateError::NonFinite { t: self.t });
                }
                continue;
            }

            if err <= 1.0 {
                self.t = if last { t_end } else { self.t + h };
                self.x = x_new;
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // Do not let a shortened final step shrink the next one.
                self.h = if last { h_nominal.max(h) } else { h * factor };
                on_accept(self.t, &self.x, err);
            } else {
                self.rejected += 1;
                let factor = (0.9 * err.powf(-0.25)).clamp(0.1, 0.9);
                self.h = h * factor;
                if self.h < self.cfg.h_min {
                    return Err(IntegrateError::StepUnderflow { t: self.t });
                }
            }
        }
        Ok(())
    }
}

/// Integrates the autonomous system `x' = rhs(x)` over `[t0, t1]`, returning
/// every accepted grid point.
pub fn integrate<S: Scalar>(
    mut rhs: impl FnMut(&[S]) -> Vec<S>,
    x0: &[S],
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Trajectory<S>, IntegrateError> {
    let (t0, t1) = t_span;
    if !(t1 >= t0) {
        return Err(IntegrateError::InvalidConfig(format!(
            "t_span must be ascending, got ({t0}, {t1})"
        )));
    }
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![x0.to_vec()],
        error_estimates: vec![0.0],
        rejected_steps: 0,
    };
    let mut stepper = Rkf45::new(|_t, x: &[S]| rhs(x), t0, x0.to_vec(), *cfg)?;
    stepper.advance_to(t1, |t, x, e| {
        traj.times.push(t);
        traj.states.push(x.to_vec());
        traj.error_estimates.push(e);
    })?;
    traj.rejected_steps = stepper.rejected_steps();
    Ok(traj)
}

/// Integrates and returns the state at each of the ascending `times`
/// (the first of which is the start time).
pub fn integrate_at<S: Scalar>(
    mut rhs: impl FnMut(&[S]) -> Vec<S>,
    x0: &[S],
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<Vec<S>>, IntegrateError> {
    let Some(&t0) = times.first() else {
        return Ok(Vec::new());
    };
    if times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(IntegrateError::InvalidConfig(
            "output times must be ascending".into(),
        ));
    }
    let mut stepper = Rkf45::new(|_t, x: &[S]| rhs(x), t0, x0.to_vec(), *cfg)?;
    let mut out = Vec::with_capacity(times.len());
    out.push(x0.to_vec());
    for &t in &times[1..] {
        stepper.advance_to(t, |_, _, _| {})?;
        out.push(stepper.state().to_vec());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dalgebra::{Algebra, TPoly};

    #[test]
    fn exponential_decay() {
        let traj = integrate(|x: &[f64]| vec![-x[0]], &[1.0], (0.0, 1.0), &IntegratorConfig::oracle())
            .unwrap();
        assert!((traj.last_state()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(*traj.times.last().unwrap(), 1.0);
        assert!(traj.error_estimates.iter().all(|&e| e <= 1.0));
    }

    #[test]
    fn tableau_rows_are_consistent() {
        for s in 0..6 {
            let sum: f64 = A[s].iter().sum();
            assert!((sum - C[s]).abs() < 1e-14, "row {s}");
        }
        assert!((B5.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((B4.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn harmonic_oscillator_period() {
        let period = 2.0 * std::f64::consts::PI;
        let traj = integrate(
            |x: &[f64]| vec![x[1], -x[0]],
            &[1.0, 0.0],
            (0.0, period),
            &IntegratorConfig::oracle(),
        )
        .unwrap();
        let end = traj.last_state();
        assert!((end[0] - 1.0).abs() < 1e-6 && end[1].abs() < 1e-6, "{end:?}");
    }

    #[test]
    fn riccati_flow_map() {
        // x' = x², x(0) = 1 + δ: x(t) = (1 + δ) / (1 - (1 + δ) t).
        // At t = 1/2 this is 2 (1 + δ) / (1 - δ) = 2 + 4δ + 4δ² + 4δ³ + ...
        let alg = Algebra::new(1, 3).unwrap();
        let x0 = TPoly::variable(&alg, 0, 1.0).unwrap();
        let traj = integrate(
            |x: &[TPoly]| vec![&x[0] * &x[0]],
            &[x0],
            (0.0, 0.5),
            &IntegratorConfig::oracle(),
        )
        .unwrap();
        let map = &traj.last_state()[0];
        for (i, want) in [2.0, 4.0, 4.0, 4.0].into_iter().enumerate() {
            let got = map.coefficient(&[i as u32]).unwrap();
            assert!((got - want).abs() < 1e-7, "order {i}: {got}");
        }
    }

    #[test]
    fn output_times_are_hit_exactly() {
        let times = [0.0, 0.1, 0.35, 1.0];
        let xs = integrate_at(|x: &[f64]| vec![-x[0]], &[1.0], &times, &IntegratorConfig::oracle())
            .unwrap();
        for (t, x) in times.iter().zip(&xs) {
            assert!((x[0] - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = IntegratorConfig {
            h_min: 1.0,
            ..IntegratorConfig::oracle()
        };
        assert!(integrate(|x: &[f64]| x.to_vec(), &[1.0], (0.0, 1.0), &cfg).is_err());
    }

    #[test]
    fn failures_report_the_time_reached() {
        // The sign switch at x = 0 (reached at t = 1) forces ever smaller steps.
        let chatter = |x: &[f64]| vec![if x[0] > 0.0 { -1.0 } else { 1.0 }];
        let cfg = IntegratorConfig {
            h_min: 1e-6,
            ..IntegratorConfig::oracle()
        };
        match integrate(chatter, &[1.0], (0.0, 2.0), &cfg).unwrap_err() {
            IntegrateError::StepUnderflow { t } => assert!((t - 1.0).abs() < 1e-3, "{t}"),
            e => panic!("{e:?}"),
        }
        let cfg = IntegratorConfig {
            max_steps: 10,
            ..IntegratorConfig::oracle()
        };
        match integrate(|x: &[f64]| vec![-x[0]], &[1.0], (0.0, 100.0), &cfg).unwrap_err() {
            IntegrateError::MaxSteps { t, max_steps } => assert!(t > 0.0 && t < 100.0 && max_steps == 10),
            e => panic!("{e:?}"),
        }
    }
}
