//! Retarded systems `x'(t) = g(x(t), x(t - τ))` with constant pre-history.

use std::cell::RefCell;

use super::rkf45::{IntegrateError, IntegratorConfig, Rkf45, Trajectory};

/// Dense record of accepted points with their derivatives, interpolated by
/// cubic Hermite polynomials. Before the first point the history is
/// constant.
#[derive(Debug, Clone)]
pub struct History {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
}

impl History {
    pub fn new(t0: f64, x0: Vec<f64>, dx0: Vec<f64>) -> Self {
        History {
            times: vec![t0],
            states: vec![x0],
            derivs: vec![dx0],
        }
    }

    pub fn push(&mut self, t: f64, x: Vec<f64>, dx: Vec<f64>) {
        debug_assert!(t > *self.times.last().unwrap());
        self.times.push(t);
        self.states.push(x);
        self.derivs.push(dx);
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            // Only reached by round-off at the newest point.
            return self.states[n - 1].clone();
        }
        let i = self.times.partition_point(|&ti| ti <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        (0..self.states[i].len())
            .map(|j| {
                h00 * self.states[i][j]
                    + h10 * h * self.derivs[i][j]
                    + h01 * self.states[i + 1][j]
                    + h11 * h * self.derivs[i + 1][j]
            })
            .collect()
    }
}

/// Integrates `x' = g(x(t), x(t - tau))` from `x(t) = x0` for `t <= 0`.
///
/// Steps are capped at `tau`, so every delayed query falls inside the
/// already-accepted history. With `tau == 0` the delayed argument is the
/// stage state itself and the step sequence is that of
/// [`integrate`](super::integrate).
pub fn integrate_delayed(
    g: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    x0: &[f64],
    tau: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory<f64>, IntegrateError> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(IntegrateError::InvalidConfig(format!("delay must be >= 0, got {tau}")));
    }
    if !(t_end >= 0.0) {
        return Err(IntegrateError::InvalidConfig("t_end must be >= 0".into()));
    }
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        error_estimates: vec![0.0],
        rejected_steps: 0,
    };
    if tau == 0.0 {
        let mut stepper = Rkf45::new(|_t, x: &[f64]| g(x, x), 0.0, x0.to_vec(), *cfg)?;
        stepper.advance_to(t_end, |t, x, e| {
            traj.times.push(t);
            traj.states.push(x.to_vec());
            traj.error_estimates.push(e);
        })?;
        traj.rejected_steps = stepper.rejected_steps();
        return Ok(traj);
    }

    let history = RefCell::new(History::new(0.0, x0.to_vec(), g(x0, x0)));
    let rhs = |t: f64, x: &[f64]| {
        let xd = history.borrow().at(t - tau);
        g(x, &xd)
    };
    let mut stepper = Rkf45::new(rhs, 0.0, x0.to_vec(), *cfg)?;
    stepper.set_step_cap(tau);
    stepper.advance_to(t_end, |t, x, e| {
        let xd = history.borrow().at(t - tau);
        let dx = g(x, &xd);
        history.borrow_mut().push(t, x.to_vec(), dx);
        traj.times.push(t);
        traj.states.push(x.to_vec());
        traj.error_estimates.push(e);
    })?;
    traj.rejected_steps = stepper.rejected_steps();
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odeflow::integrate;

    fn envelope(traj: &Trajectory<f64>, from: f64, to: f64) -> f64 {
        traj.times
            .iter()
            .zip(&traj.states)
            .filter(|(t, _)| **t >= from && **t <= to)
            .map(|(_, x)| x[0].abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn method_of_steps_on_first_interval() {
        // x' = -x(t - 1), x = 1 for t <= 0  ⇒  x(t) = 1 - t on [0, 1],
        // and x(t) = 1 - t + (t - 1)² / 2 on [1, 2].
        let traj =
            integrate_delayed(|_x, xd| vec![-xd[0]], &[1.0], 1.0, 2.0, &IntegratorConfig::oracle())
                .unwrap();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let want = if *t <= 1.0 {
                1.0 - t
            } else {
                1.0 - t + (t - 1.0).powi(2) / 2.0
            };
            assert!((x[0] - want).abs() < 1e-8, "t={t}: {} vs {want}", x[0]);
        }
    }

    #[test]
    fn scalar_delay_stability_switches_at_half_pi() {
        let cfg = IntegratorConfig::oracle().with_tol(1e-9);
        let g = |_x: &[f64], xd: &[f64]| vec![-xd[0]];
        let stable = integrate_delayed(g, &[1.0], 1.4, 80.0, &cfg).unwrap();
        let unstable = integrate_delayed(g, &[1.0], 1.7, 80.0, &cfg).unwrap();
        assert!(envelope(&stable, 60.0, 80.0) < envelope(&stable, 0.0, 20.0) * 0.1);
        assert!(envelope(&unstable, 60.0, 80.0) > envelope(&unstable, 0.0, 20.0) * 2.0);
    }

    #[test]
    fn zero_delay_matches_ordinary_integration() {
        let g = |x: &[f64], xd: &[f64]| vec![x[1], -xd[0] - 0.3 * x[1]];
        let cfg = IntegratorConfig::oracle();
        let a = integrate_delayed(g, &[1.0, 0.0], 0.0, 5.0, &cfg).unwrap();
        let b = integrate(|x: &[f64]| g(x, x), &[1.0, 0.0], (0.0, 5.0), &cfg).unwrap();
        assert_eq!(a.times, b.times);
        for (xa, xb) in a.states.iter().zip(&b.states) {
            for (p, q) in xa.iter().zip(xb) {
                assert!((p - q).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let f = |t: f64| t * t * t - 2.0 * t + 1.0;
        let df = |t: f64| 3.0 * t * t - 2.0;
        let mut h = History::new(0.0, vec![f(0.0)], vec![df(0.0)]);
        h.push(0.7, vec![f(0.7)], vec![df(0.7)]);
        h.push(1.5, vec![f(1.5)], vec![df(1.5)]);
        for t in [0.1, 0.5, 0.7, 1.2] {
            assert!((h.at(t)[0] - f(t)).abs() < 1e-13);
        }
        assert_eq!(h.at(-3.0)[0], 1.0);
    }
}
