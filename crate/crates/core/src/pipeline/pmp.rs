//! Necessary conditions of the minimum-energy transfer
//! `J = ∫ c1² u1² + c2² u2² dt` for the planar quadcopter.

use crate::dalgebra::Scalar;
use crate::odeflow::{quad_rhs, QuadParams, STATE_DIM, THETA, VY, VZ, Y, Z};

/// Minimizer of the Hamiltonian over the control box, given the costate
/// `λ = [λy, λvy, λz, λvz, λθ]` and pitch `θ`.
pub fn pmp_control<S: Scalar>(lambda: &[S], theta: &S, p: &QuadParams) -> [S; 2] {
    let proj = lambda[VY].clone() * theta.sin() + lambda[VZ].clone() * theta.cos();
    let u1 = (-proj / (2.0 * p.c1 * p.m)).clamp(0.0, 1.0);
    let u2 = (-lambda[THETA].clone() / (2.0 * p.c2)).clamp(-1.0, 1.0);
    [u1, u2]
}

/// `c1² u1² + c2² u2²`
pub fn running_cost<S: Scalar>(u: &[S], p: &QuadParams) -> S {
    u[0].clone() * u[0].clone() * (p.c1 * p.c1) + u[1].clone() * u[1].clone() * (p.c2 * p.c2)
}

/// `H = ℓ(u) + λ · f(x, u)`
pub fn hamiltonian<S: Scalar>(x: &[S], lambda: &[S], u: &[S], p: &QuadParams) -> S {
    let f = quad_rhs(x, u, p);
    let mut h = running_cost(u, p);
    for (l, fi) in lambda.iter().zip(f) {
        h = h + l.clone() * fi;
    }
    h
}

/// State and costate derivatives under the optimal control, packed as
/// `[x (5), λ (5)]`.
pub fn augmented_rhs<S: Scalar>(z: &[S], p: &QuadParams) -> Vec<S> {
    let (x, lambda) = z.split_at(STATE_DIM);
    let u = pmp_control(lambda, &x[THETA], p);
    let mut out = quad_rhs(x, &u, p);
    let zero = x[0].constant_like(0.0);
    let thrust = u[0].clone() * (p.c1 / p.m);
    let (s, c) = (x[THETA].sin(), x[THETA].cos());
    let mut dl = vec![zero.clone(); STATE_DIM];
    dl[Y] = zero.clone();
    dl[Z] = zero;
    dl[VY] = -lambda[Y].clone() + lambda[VY].clone() * p.drag;
    dl[VZ] = -lambda[Z].clone() + lambda[VZ].clone() * p.drag;
    dl[THETA] = -(thrust * (lambda[VY].clone() * c - lambda[VZ].clone() * s));
    out.extend(dl);
    out
}
