//! High-order Taylor maps of closed-loop trajectories.
//!
//! A map at time `T` expresses each state component as a polynomial in the
//! initial perturbation `δx0`. The order-`i` part is a symmetric tensor; its
//! unfolding into an `n × n^i` matrix `A_i` gives the bound
//! `‖δx(T)‖ ≤ Σ_i ‖A_i‖ ‖δx0‖^i`, and the ratio of consecutive norms
//! estimates how far the series can be trusted.

mod norms;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dalgebra::{Algebra, DaError, Scalar, TPoly};
use crate::gcnet::NetSpec;
use crate::odeflow::{
    integrate, integrate_at, quad_rhs, IntegrateError, IntegratorConfig, QuadParams, SimulationError, State,
    STATE_DIM,
};

pub use norms::{gram_matrix, unfold_norms, unfold_norms_explicit, unfolded_matrix};

/// Highest supported expansion order.
pub const MAX_ORDER: usize = 8;

#[derive(Debug, Error)]
pub enum HotmError {
    #[error("expansion order must be in 1..={MAX_ORDER}, got {0}")]
    Order(usize),
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Algebra(#[from] DaError),
}

/// Polynomial flow map at one grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorMap {
    pub t: f64,
    pub components: Vec<TPoly>,
}

impl TaylorMap {
    pub fn order(&self) -> usize {
        self.components[0].algebra().order()
    }

    pub fn nominal(&self) -> Vec<f64> {
        self.components.iter().map(TPoly::constant_part).collect()
    }

    pub fn evaluate(&self, dx0: &[f64]) -> Result<Vec<f64>, DaError> {
        self.components.iter().map(|c| c.evaluate(dx0)).collect()
    }
}

fn seed(x0: &[f64], order: usize) -> Result<Vec<TPoly>, HotmError> {
    if order == 0 || order > MAX_ORDER {
        return Err(HotmError::Order(order));
    }
    let alg = Algebra::new(x0.len(), order)?;
    Ok(x0
        .iter()
        .enumerate()
        .map(|(i, &v)| TPoly::variable(&alg, i, v))
        .collect::<Result<_, _>>()?)
}

/// Maps of a general autonomous system at every accepted integrator step.
pub fn propagate_maps_with(
    rhs: impl FnMut(&[TPoly]) -> Vec<TPoly>,
    x0: &[f64],
    order: usize,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<TaylorMap>, HotmError> {
    if !(horizon > 0.0) {
        return Err(HotmError::Horizon(horizon));
    }
    let traj = integrate(rhs, &seed(x0, order)?, (0.0, horizon), cfg)?;
    Ok(traj
        .times
        .into_iter()
        .zip(traj.states)
        .map(|(t, components)| TaylorMap { t, components })
        .collect())
}

/// Maps of the neurocontrolled quadcopter around the nominal trajectory
/// from `x0`.
pub fn propagate_maps(
    net: &NetSpec,
    p: &QuadParams,
    x0: &State,
    order: usize,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<TaylorMap>, HotmError> {
    // Validates the network once; the hot loop then skips the checks.
    crate::odeflow::closed_loop_rhs(&x0[..], net, p).map_err(SimulationError::from)?;
    let rhs = |x: &[TPoly]| {
        let u = net.forward(x).expect("validated dimensions");
        quad_rhs(x, &u, p)
    };
    propagate_maps_with(rhs, x0, order, horizon, cfg)
}

/// Ratio-test estimate `ε = b_{k-1} / b_k` from the top pair of norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    /// `f64::INFINITY` when the top-order norm vanishes.
    pub epsilon: f64,
    pub orders: (usize, usize),
    pub infinite: bool,
    /// `b_{i} / b_{i+1}` for the lower pairs, for inspection only.
    pub lower_ratios: Vec<f64>,
}

/// `norms[i-1] = b_i` for `i = 1..=k`, `k >= 2`.
pub fn convergence_radius(norms: &[f64]) -> Option<RadiusEstimate> {
    let k = norms.len();
    if k < 2 {
        return None;
    }
    let (lo, hi) = (norms[k - 2].abs(), norms[k - 1].abs());
    let infinite = hi < 1e-300;
    let lower_ratios = norms
        .windows(2)
        .take(k - 2)
        .map(|w| w[0].abs() / w[1].abs())
        .collect();
    Some(RadiusEstimate {
        epsilon: if infinite { f64::INFINITY } else { lo / hi },
        orders: (k - 1, k),
        infinite,
        lower_ratios,
    })
}

/// Per-time norms `b_1..b_k` and distance of the nominal state from `x_e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormProfile {
    pub times: Vec<f64>,
    pub norms: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

pub fn norm_profile(maps: &[TaylorMap], x_e: &[f64]) -> NormProfile {
    NormProfile {
        times: maps.iter().map(|m| m.t).collect(),
        norms: maps.iter().map(|m| unfold_norms(&m.components)).collect(),
        offsets: maps.iter().map(|m| distance(&m.nominal(), x_e)).collect(),
    }
}

impl NormProfile {
    pub fn radii(&self) -> Vec<Option<RadiusEstimate>> {
        self.norms.iter().map(|b| convergence_radius(b)).collect()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCheck {
    pub acquired: bool,
    pub offset: f64,
    pub norms: Vec<f64>,
    pub tol: f64,
}

/// Holds when the nominal state sits within `tol` of `x_e` and every
/// unfolded norm has decayed below `tol`.
pub fn check_asymptotic(map: &TaylorMap, x_e: &[f64], tol: f64) -> AsymptoticCheck {
    let norms = unfold_norms(&map.components);
    let offset = distance(&map.nominal(), x_e);
    AsymptoticCheck {
        acquired: offset < tol && norms.iter().all(|b| *b < tol),
        offset,
        norms,
        tol,
    }
}

/// Map prediction against direct integration from the perturbed start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapError {
    pub t: f64,
    /// Euclidean distance between map prediction and integration.
    pub error: f64,
    pub predicted: Vec<f64>,
    pub truth: Vec<f64>,
}

/// Compares `evaluate(map, δx0)` with integration from `x0 + δx0` at every
/// map time, using `truth_rhs` for the real-valued dynamics.
pub fn map_vs_truth_with(
    truth_rhs: impl FnMut(&[f64]) -> Vec<f64>,
    maps: &[TaylorMap],
    dx0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<MapError>, HotmError> {
    if maps.is_empty() {
        return Ok(Vec::new());
    }
    let start: Vec<f64> = maps[0]
        .nominal()
        .iter()
        .zip(dx0)
        .map(|(x, d)| x + d)
        .collect();
    let times: Vec<f64> = maps.iter().map(|m| m.t).collect();
    let truth = integrate_at(truth_rhs, &start, &times, cfg)?;
    maps.iter()
        .zip(truth)
        .map(|(m, truth)| {
            let predicted = m.evaluate(dx0)?;
            Ok(MapError {
                t: m.t,
                error: distance(&predicted, &truth),
                predicted,
                truth,
            })
        })
        .collect()
}

pub fn map_vs_truth(
    net: &NetSpec,
    p: &QuadParams,
    maps: &[TaylorMap],
    dx0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<MapError>, HotmError> {
    crate::odeflow::closed_loop_rhs(&[0.0; STATE_DIM][..], net, p).map_err(SimulationError::from)?;
    let rhs = |x: &[f64]| quad_rhs(x, &net.forward(x).expect("validated dimensions"), p);
    map_vs_truth_with(rhs, maps, dx0, cfg)
}

/// `t,b_1..b_k,epsilon`
pub fn write_radius_csv(mut w: impl Write, profile: &NormProfile) -> std::io::Result<()> {
    let k = profile.norms.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|i| format!("b_{i}")));
    header.push("epsilon".into());
    writeln!(w, "{}", header.join(","))?;
    for (t, b) in profile.times.iter().zip(&profile.norms) {
        write!(w, "{t}")?;
        for v in b {
            write!(w, ",{v}")?;
        }
        match convergence_radius(b) {
            Some(r) if !r.infinite => writeln!(w, ",{}", r.epsilon)?,
            Some(_) => writeln!(w, ",inf")?,
            None => writeln!(w, ",")?,
        }
    }
    Ok(())
}

/// `t,error,pred_*,true_*`
pub fn write_map_error_csv(mut w: impl Write, errors: &[MapError]) -> std::io::Result<()> {
    let n = errors.first().map_or(0, |e| e.predicted.len());
    let mut header = vec!["t".to_string(), "error".to_string()];
    header.extend((0..n).map(|i| format!("pred_{i}")));
    header.extend((0..n).map(|i| format!("true_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for e in errors {
        write!(w, "{},{}", e.t, e.error)?;
        for v in e.predicted.iter().chain(&e.truth) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Constant parts of every map, for comparison with a real-valued run.
pub fn nominal_states(maps: &[TaylorMap]) -> Vec<Vec<f64>> {
    maps.iter().map(|m| m.components.iter().map(Scalar::value).collect()).collect()
}
