//! Indirect single shooting for the free-final-time transfer to the origin.
//!
//! Unknowns are the initial costate `λ0` and the final time `tf`. The
//! dynamics are integrated on the normalized interval `s ∈ [0, 1]`
//! (`dz/ds = tf · F(z)`), which makes `tf` an ordinary expansion variable,
//! so one first-order Taylor integration yields both the residual and its
//! Jacobian.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pmp::{augmented_rhs, hamiltonian, pmp_control, running_cost};
use crate::dalgebra::Jet;
use crate::odeflow::{integrate, integrate_at, IntegrateError, IntegratorConfig, QuadParams, State, STATE_DIM, THETA};

const UNKNOWNS: usize = STATE_DIM + 1;

#[derive(Debug, Error)]
pub enum ShootingError {
    #[error("shooting from {x0:?} did not converge (best residual {best_residual:e})")]
    NoConvergence { x0: State, best_residual: f64 },
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("invalid initial state {0:?}")]
    InvalidState(State),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingGuess {
    pub lambda0: [f64; STATE_DIM],
    pub tf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingOptions {
    /// Target Euclidean norm of `[x(tf); H(0)]`.
    pub tol: f64,
    /// Residual at which intermediate continuation solves stop.
    pub continuation_tol: f64,
    pub max_iterations: usize,
    /// Randomly perturbed restarts after the structured guesses fail.
    pub restarts: usize,
    pub seed: u64,
    pub min_tf: f64,
    pub max_tf: f64,
    /// Accuracy of the final solve and of the resampled trajectory.
    pub integrator: IntegratorConfig,
    /// Looser accuracy used for intermediate continuation solves.
    pub continuation_integrator: IntegratorConfig,
    pub continuation_iterations: usize,
    /// Smallest continuation step, as a fraction of the path.
    pub min_continuation_step: f64,
    /// Size of the initial short transfer for [`InitialGuess::Hover`].
    pub hover_radius: f64,
    /// Output grid points over `[0, tf]`.
    pub samples: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            tol: 1e-8,
            continuation_tol: 1e-3,
            max_iterations: 80,
            restarts: 6,
            seed: 0,
            min_tf: 0.05,
            max_tf: 30.0,
            integrator: IntegratorConfig {
                max_steps: 20_000,
                ..IntegratorConfig::oracle().with_tol(1e-11)
            },
            continuation_integrator: IntegratorConfig {
                max_steps: 5_000,
                ..IntegratorConfig::oracle().with_tol(1e-8)
            },
            continuation_iterations: 12,
            min_continuation_step: 1.0 / 512.0,
            hover_radius: 0.5,
            samples: 59,
        }
    }
}

/// A solved transfer, resampled on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalTrajectory {
    pub x0: State,
    pub lambda0: [f64; STATE_DIM],
    pub tf: f64,
    /// `∫ c1² u1² + c2² u2² dt`
    pub cost: f64,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub costates: Vec<[f64; STATE_DIM]>,
    pub controls: Vec<[f64; 2]>,
    /// Hamiltonian at each grid point; zero along an optimal free-time arc.
    pub hamiltonian: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl OptimalTrajectory {
    pub fn terminal_error(&self) -> f64 {
        norm(self.states.last().expect("nonempty"))
    }

    pub fn max_abs_hamiltonian(&self) -> f64 {
        self.hamiltonian.iter().fold(0.0, |m, h| m.max(h.abs()))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Residual `[x(tf); H(0)]` and its Jacobian with respect to `[λ0, tf]`.
pub fn shooting_residual(
    x0: &State,
    guess: &ShootingGuess,
    p: &QuadParams,
    cfg: &IntegratorConfig,
) -> Result<(Vec<f64>, DMatrix<f64>), IntegrateError> {
    type J = Jet<UNKNOWNS>;
    let mut z0: Vec<J> = x0.iter().map(|&v| J::constant(v)).collect();
    z0.extend((0..STATE_DIM).map(|i| J::variable(i, guess.lambda0[i])));
    let tf = J::variable(STATE_DIM, guess.tf);

    let (x, l) = z0.split_at(STATE_DIM);
    let u = pmp_control(l, &x[THETA], p);
    let h0 = hamiltonian(x, l, &u, p);

    let rhs = |z: &[J]| augmented_rhs(z, p).into_iter().map(|d| d * tf).collect::<Vec<_>>();
    let traj = integrate(rhs, &z0, (0.0, 1.0), cfg)?;
    let end = traj.last_state();
    let mut r: Vec<J> = end[..STATE_DIM].to_vec();
    r.push(h0);
    let value = r.iter().map(|v| v.value).collect();
    let jac = DMatrix::from_fn(UNKNOWNS, UNKNOWNS, |i, j| r[i].grad[j]);
    Ok((value, jac))
}

struct Solved {
    guess: ShootingGuess,
    residual: f64,
    iterations: usize,
}

// Levenberg–Marquardt on the shooting residual.
fn newton(
    x0: &State,
    start: ShootingGuess,
    p: &QuadParams,
    opts: &ShootingOptions,
    cfg: &IntegratorConfig,
    max_iterations: usize,
    tol: f64,
) -> Result<Solved, f64> {
    let eval = |g: &ShootingGuess| -> Option<(Vec<f64>, DMatrix<f64>)> {
        if !(g.tf >= opts.min_tf && g.tf <= opts.max_tf) || g.lambda0.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let (r, j) = shooting_residual(x0, g, p, cfg).ok()?;
        (r.iter().all(|v| v.is_finite()) && j.iter().all(|v| v.is_finite())).then_some((r, j))
    };
    let Some((mut r, mut jac)) = eval(&start) else {
        return Err(f64::INFINITY);
    };
    let mut g = start;
    let mut rn = norm(&r);
    let mut mu = 1e-3;
    for it in 0..max_iterations {
        if rn < tol {
            return Ok(Solved {
                guess: g,
                residual: rn,
                iterations: it,
            });
        }
        let jt = jac.transpose();
        let a = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);
        let mut accepted = false;
        // The undamped Newton step goes first: Marquardt scaling by diag(JᵀJ)
        // is dominated by the stiff costate directions and stalls the weak
        // ones.
        let newton_step = jac.clone().lu().solve(&-DVector::from_column_slice(&r));
        for attempt in 0..13 {
            let step = if attempt == 0 {
                match &newton_step {
                    Some(s) => s.clone(),
                    None => continue,
                }
            } else {
                let mut m = a.clone();
                for i in 0..UNKNOWNS {
                    m[(i, i)] += mu * a[(i, i)].max(1e-12);
                }
                match m.lu().solve(&(-&grad)) {
                    Some(s) => s,
                    None => {
                        mu *= 4.0;
                        continue;
                    }
                }
            };
            let mut step = step;
            let lam = norm(&g.lambda0).max(1.0);
            let cap = (norm(&step.as_slice()[..STATE_DIM]) / lam).max(2.0 * step[STATE_DIM].abs() / g.tf);
            if cap > 1.0 {
                step /= cap;
            }
            let mut trial = g;
            for i in 0..STATE_DIM {
                trial.lambda0[i] += step[i];
            }
            trial.tf += step[STATE_DIM];
            if let Some((r2, j2)) = eval(&trial) {
                let rn2 = norm(&r2);
                if rn2 < rn {
                    g = trial;
                    r = r2;
                    jac = j2;
                    rn = rn2;
                    if attempt > 0 {
                        mu = (mu / 3.0).max(1e-12);
                    }
                    accepted = true;
                    break;
                }
            }
            if attempt > 0 {
                mu *= 4.0;
            }
        }
        if !accepted {
            break;
        }
    }
    if rn < tol {
        Ok(Solved {
            guess: g,
            residual: rn,
            iterations: max_iterations,
        })
    } else {
        Err(rn)
    }
}

/// Costate of steady hover: thrust `m g / c1` with `λ_vz = -2 m² g`.
pub fn hover_guess(x0: &State, p: &QuadParams) -> ShootingGuess {
    let dist = (x0[0].powi(2) + x0[2].powi(2)).sqrt();
    let speed = (x0[1].powi(2) + x0[3].powi(2)).sqrt();
    let mut lambda0 = [0.0; STATE_DIM];
    lambda0[3] = -2.0 * p.m * p.m * p.g;
    ShootingGuess {
        lambda0,
        tf: 1.0 + 0.3 * dist + 0.2 * speed,
    }
}

/// Where the shooting iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialGuess {
    /// Near-hover costate on a short transfer toward the origin, followed
    /// by continuation out to `x0`.
    Hover,
    /// Start directly from the given unknowns.
    Given(ShootingGuess),
    /// Continue a known solution at `from` along the segment to `x0`.
    Continuation { from: State, guess: ShootingGuess },
}

fn lerp(a: &State, b: &State, s: f64) -> State {
    let mut out = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        out[i] = a[i] + s * (b[i] - a[i]);
    }
    out
}

fn extrapolate(g: &ShootingGuess, prev: &ShootingGuess, ratio: f64) -> ShootingGuess {
    let mut out = *g;
    for i in 0..STATE_DIM {
        out.lambda0[i] += ratio * (g.lambda0[i] - prev.lambda0[i]);
    }
    out.tf += ratio * (g.tf - prev.tf);
    out
}

/// Natural-parameter continuation of a solution at `from` to `to`, with a
/// secant predictor and step halving on failure. Returns the unknowns at
/// `to`, converged to the loose tolerance.
fn continue_along(
    from: &State,
    to: &State,
    start: ShootingGuess,
    p: &QuadParams,
    opts: &ShootingOptions,
) -> Result<ShootingGuess, f64> {
    let mut s = 0.0;
    let mut g = start;
    let mut prev: Option<(f64, ShootingGuess)> = None;
    let mut ds: f64 = 1.0;
    while s < 1.0 {
        ds = ds.min(1.0 - s);
        let pred = match prev {
            Some((s_prev, g_prev)) => extrapolate(&g, &g_prev, ds / (s - s_prev)),
            None => g,
        };
        let x = lerp(from, to, s + ds);
        match newton(&x, pred, p, opts, &opts.continuation_integrator, opts.continuation_iterations, opts.continuation_tol) {
            Ok(sol) => {
                prev = Some((s, g));
                g = sol.guess;
                s += ds;
                ds *= 2.0;
            }
            Err(r) => {
                ds *= 0.5;
                if ds < opts.min_continuation_step {
                    return Err(r);
                }
            }
        }
    }
    Ok(g)
}

/// Solves the transfer from `x0` to the origin.
///
/// Intermediate solves use the looser continuation tolerances; the final
/// unknowns are always polished to `opts.tol` with `opts.integrator`. The
/// degenerate case `x0 = 0` returns the single hover pair without solving.
pub fn solve_tpbvp(
    x0: &State,
    p: &QuadParams,
    init: &InitialGuess,
    opts: &ShootingOptions,
) -> Result<OptimalTrajectory, ShootingError> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(ShootingError::InvalidState(*x0));
    }
    if x0.iter().all(|v| *v == 0.0) {
        return Ok(OptimalTrajectory::trivial(p));
    }
    let fail = |best_residual: f64| ShootingError::NoConvergence {
        x0: *x0,
        best_residual,
    };
    let rough = match *init {
        InitialGuess::Given(g) => g,
        InitialGuess::Continuation { from, guess } => {
            continue_along(&from, x0, guess, p, opts).map_err(fail)?
        }
        InitialGuess::Hover => {
            // Short transfer first: scale x0 down until the hover costate is
            // a good guess, then walk back out.
            let size = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
            let shrink = (opts.hover_radius / size).min(1.0);
            let near = lerp(&[0.0; STATE_DIM], x0, shrink);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut best = f64::INFINITY;
            let mut found = None;
            for attempt in 0..=opts.restarts {
                let mut g = hover_guess(&near, p);
                if attempt > 0 {
                    for v in g.lambda0.iter_mut() {
                        *v += rng.gen_range(-1.0..1.0);
                    }
                    g.tf *= rng.gen_range(0.5..2.0);
                }
                match newton(&near, g, p, opts, &opts.continuation_integrator, opts.max_iterations, opts.continuation_tol) {
                    Ok(sol) => {
                        found = Some(sol.guess);
                        break;
                    }
                    Err(r) => best = best.min(r),
                }
            }
            let g = found.ok_or_else(|| fail(best))?;
            if shrink < 1.0 {
                continue_along(&near, x0, g, p, opts).map_err(fail)?
            } else {
                g
            }
        }
    };
    let sol = newton(x0, rough, p, opts, &opts.integrator, opts.max_iterations, opts.tol).map_err(fail)?;
    build_trajectory(x0, &sol, p, opts)
}

impl OptimalTrajectory {
    /// The degenerate transfer from the origin: a single hover pair.
    pub fn trivial(p: &QuadParams) -> Self {
        let mut lambda0 = [0.0; STATE_DIM];
        lambda0[3] = -2.0 * p.m * p.m * p.g;
        OptimalTrajectory {
            x0: [0.0; STATE_DIM],
            lambda0,
            tf: 0.0,
            cost: 0.0,
            times: vec![0.0],
            states: vec![[0.0; STATE_DIM]],
            costates: vec![lambda0],
            controls: vec![p.hover_control()],
            hamiltonian: vec![0.0],
            residual: 0.0,
            iterations: 0,
        }
    }

    /// Unknowns of this solution, for warm starts.
    pub fn guess(&self) -> ShootingGuess {
        ShootingGuess {
            lambda0: self.lambda0,
            tf: self.tf,
        }
    }
}

/// Re-integrates a converged solution on `samples` equally spaced times
/// over `[0, tf]`, including the cost integral.
fn build_trajectory(
    x0: &State,
    s: &Solved,
    p: &QuadParams,
    opts: &ShootingOptions,
) -> Result<OptimalTrajectory, ShootingError> {
    let tf = s.guess.tf;
    let samples = opts.samples.max(2);
    let mut z0: Vec<f64> = x0.to_vec();
    z0.extend(s.guess.lambda0);
    z0.push(0.0);
    let rhs = |z: &[f64]| {
        let (x, l) = z[..2 * STATE_DIM].split_at(STATE_DIM);
        let u = pmp_control(l, &x[THETA], p);
        let mut d = augmented_rhs(&z[..2 * STATE_DIM], p);
        d.push(running_cost(&u, p));
        d.into_iter().map(|v| v * tf).collect()
    };
    let grid: Vec<f64> = (0..samples).map(|i| i as f64 / (samples - 1) as f64).collect();
    let zs = integrate_at(rhs, &z0, &grid, &opts.integrator)?;
    let mut out = OptimalTrajectory {
        x0: *x0,
        lambda0: s.guess.lambda0,
        tf,
        cost: zs.last().expect("nonempty grid")[2 * STATE_DIM],
        times: grid.iter().map(|g| g * tf).collect(),
        states: Vec::with_capacity(samples),
        costates: Vec::with_capacity(samples),
        controls: Vec::with_capacity(samples),
        hamiltonian: Vec::with_capacity(samples),
        residual: s.residual,
        iterations: s.iterations,
    };
    for z in &zs {
        let mut x = [0.0; STATE_DIM];
        let mut l = [0.0; STATE_DIM];
        x.copy_from_slice(&z[..STATE_DIM]);
        l.copy_from_slice(&z[STATE_DIM..2 * STATE_DIM]);
        let u = pmp_control(&l, &x[THETA], p);
        out.hamiltonian.push(hamiltonian(&x, &l, &u, p));
        out.states.push(x);
        out.costates.push(l);
        out.controls.push(u);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_jacobian_matches_finite_differences() {
        let p = QuadParams::default();
        let x0 = [-1.0, 0.5, 0.3, 0.0, 0.1];
        let g = ShootingGuess {
            lambda0: [1.0, 0.5, -0.4, -2.5, 0.3],
            tf: 1.2,
        };
        let cfg = IntegratorConfig::oracle().with_tol(1e-12);
        let (r, j) = shooting_residual(&x0, &g, &p, &cfg).unwrap();
        let h = 1e-6;
        for k in 0..UNKNOWNS {
            let mut gp = g;
            let mut gm = g;
            if k < STATE_DIM {
                gp.lambda0[k] += h;
                gm.lambda0[k] -= h;
            } else {
                gp.tf += h;
                gm.tf -= h;
            }
            let (rp, _) = shooting_residual(&x0, &gp, &p, &cfg).unwrap();
            let (rm, _) = shooting_residual(&x0, &gm, &p, &cfg).unwrap();
            for i in 0..UNKNOWNS {
                let fd = (rp[i] - rm[i]) / (2.0 * h);
                // Central differences straddle the clamp kinks of the
                // control law and the step-size decisions of the integrator.
                assert!((fd - j[(i, k)]).abs() < 1e-3 * (1.0 + fd.abs()), "({i},{k}): {fd} vs {}", j[(i, k)]);
            }
        }
        assert_eq!(r.len(), UNKNOWNS);
    }
}
