use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{NetError, NetSpec};
use crate::dalgebra::{Algebra, TPoly};
use crate::odeflow::{closed_loop_rhs, QuadParams, State, STATE_DIM};

/// Closed-loop fixed point `f(x̂, N(x̂)) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub x_hat: State,
    pub u_e: [f64; 2],
    /// Euclidean norm of the closed-loop derivative at `x_hat`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            tol: 1e-12,
            max_iterations: 50,
            max_halvings: 10,
        }
    }
}

fn residual_and_jacobian(net: &NetSpec, p: &QuadParams, x: &State) -> (Vec<f64>, DMatrix<f64>) {
    let alg = Algebra::new(STATE_DIM, 1).expect("first-order algebra");
    let seeded: Vec<TPoly> = (0..STATE_DIM)
        .map(|i| TPoly::variable(&alg, i, x[i]).expect("index in range"))
        .collect();
    let f = closed_loop_rhs(&seeded, net, p).expect("dimensions validated");
    let value = f.iter().map(TPoly::constant_part).collect();
    let jac = DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| f[i].gradient()[j]);
    (value, jac)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_dims(net: &NetSpec) -> Result<(), NetError> {
    if net.input_dim() != STATE_DIM || net.output_dim() != 2 {
        return Err(NetError::Malformed(format!(
            "quadcopter controller must map 5 states to 2 controls, got {} -> {}",
            net.input_dim(),
            net.output_dim()
        )));
    }
    Ok(())
}

/// Damped Newton iteration on `F(x) = f(x, N(x))` from the origin.
pub fn find_equilibrium(
    net: &NetSpec,
    p: &QuadParams,
    opts: &EquilibriumOptions,
) -> Result<Equilibrium, NetError> {
    check_dims(net)?;
    let mut x = [0.0; STATE_DIM];
    let (mut fx, mut jac) = residual_and_jacobian(net, p, &x);
    let mut r = norm(&fx);
    let mut iterations = 0;
    while r >= opts.tol {
        if iterations == opts.max_iterations {
            return Err(NetError::NoConvergence {
                iterations,
                residual: r,
                last: x.to_vec(),
            });
        }
        iterations += 1;
        let rhs = -DVector::from_column_slice(&fx);
        let dx = jac
            .clone()
            .lu()
            .solve(&rhs)
            .filter(|d| d.iter().all(|v| v.is_finite()))
            .ok_or(NetError::SingularJacobian { iteration: iterations })?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut trial = x;
            for i in 0..STATE_DIM {
                trial[i] += alpha * dx[i];
            }
            let (ft, jt) = residual_and_jacobian(net, p, &trial);
            let rt = norm(&ft);
            if rt < r {
                accepted = Some((trial, ft, jt, rt));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((xt, ft, jt, rt)) => {
                x = xt;
                fx = ft;
                jac = jt;
                r = rt;
            }
            // No decrease along the Newton direction: we are at the
            // round-off floor or the iteration has stalled.
            None => {
                return Err(NetError::NoConvergence {
                    iterations,
                    residual: r,
                    last: x.to_vec(),
                })
            }
        }
    }
    let u = net.forward_unchecked(&x);
    Ok(Equilibrium {
        x_hat: x,
        u_e: [u[0], u[1]],
        residual: r,
        iterations,
    })
}

/// The network `x ↦ N(x + x̂)`, whose closed loop has its fixed point at the
/// origin. Valid for the quadcopter because the plant does not depend on
/// position and `x̂` carries zero velocity and pitch.
pub fn shift_axes(net: &NetSpec, x_hat: &State) -> NetSpec {
    let mut out = net.clone();
    for (s, xh) in out.pre.shift.iter_mut().zip(x_hat) {
        *s -= xh;
    }
    out
}
