//! Planar quadcopter: position `(y, z)`, velocity `(vy, vz)`, pitch `theta`,
//! thrust fraction `u1 ∈ [0, 1]` and pitch-rate fraction `u2 ∈ [-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::dalgebra::Scalar;

pub const Y: usize = 0;
pub const VY: usize = 1;
pub const Z: usize = 2;
pub const VZ: usize = 3;
pub const THETA: usize = 4;

pub const STATE_DIM: usize = 5;
pub const CONTROL_DIM: usize = 2;

/// `[y, vy, z, vz, theta]`, the input order of the network.
pub type State = [f64; STATE_DIM];
/// `[u1, u2]`
pub type Control = [f64; CONTROL_DIM];

pub const STATE_NAMES: [&str; STATE_DIM] = ["y", "vy", "z", "vz", "theta"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadParams {
    /// mass, kg
    pub m: f64,
    /// gravity, m/s²
    pub g: f64,
    /// maximum thrust, N
    pub c1: f64,
    /// maximum pitch rate, rad/s
    pub c2: f64,
    /// linear drag coefficient
    pub drag: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        QuadParams {
            m: 0.38905,
            g: 9.81,
            c1: 9.1,
            c2: 35.0,
            drag: 0.5,
        }
    }
}

impl QuadParams {
    /// Control holding the vehicle level at rest: `[m g / c1, 0]`.
    pub fn hover_control(&self) -> Control {
        [self.m * self.g / self.c1, 0.0]
    }

    pub fn is_valid(&self) -> bool {
        [self.m, self.g, self.c1, self.c2, self.drag]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }
}

/// Clamps a control into its box.
pub fn clamp_control(u: Control) -> Control {
    [u[0].clamp(0.0, 1.0), u[1].clamp(-1.0, 1.0)]
}

/// State derivative `f(x, u)`.
pub fn quad_rhs<S: Scalar>(x: &[S], u: &[S], p: &QuadParams) -> Vec<S> {
    debug_assert_eq!(x.len(), STATE_DIM);
    debug_assert_eq!(u.len(), CONTROL_DIM);
    let thrust = u[0].clone() * (p.c1 / p.m);
    let (s, c) = (x[THETA].sin(), x[THETA].cos());
    vec![
        x[VY].clone(),
        thrust.clone() * s - x[VY].clone() * p.drag,
        x[VZ].clone(),
        thrust * c - x[VZ].clone() * p.drag - p.g,
        u[1].clone() * p.c2,
    ]
}
