//! Plant models and time integration.

mod delayed;
mod quad;
mod rkf45;

use std::io::Write;

pub use delayed::{integrate_delayed, History};
pub use quad::*;
pub use rkf45::{integrate, integrate_at, IntegrateError, IntegratorConfig, Rkf45, Trajectory};

use crate::dalgebra::Scalar;
use crate::gcnet::{NetError, NetSpec};

fn check_controller(net: &NetSpec) -> Result<(), NetError> {
    if net.input_dim() != STATE_DIM {
        return Err(NetError::InputDimension {
            expected: net.input_dim(),
            got: STATE_DIM,
        });
    }
    if net.output_dim() != CONTROL_DIM {
        return Err(NetError::Malformed(format!(
            "controller has {} outputs, plant takes {CONTROL_DIM}",
            net.output_dim()
        )));
    }
    Ok(())
}

/// `f(x, N(x))`, with the network evaluated in the same algebra as `x`.
pub fn closed_loop_rhs<S: Scalar>(x: &[S], net: &NetSpec, p: &QuadParams) -> Result<Vec<S>, NetError> {
    check_controller(net)?;
    let u = net.forward(x)?;
    Ok(quad_rhs(x, &u, p))
}

#[derive(Debug, thiserror::Error)]
pub enum SimulationError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

/// Integrates the closed loop over `[0, t_end]` in any scalar algebra.
pub fn simulate<S: Scalar>(
    net: &NetSpec,
    p: &QuadParams,
    x0: &[S],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory<S>, SimulationError> {
    check_controller(net)?;
    if x0.len() != STATE_DIM {
        return Err(NetError::InputDimension {
            expected: STATE_DIM,
            got: x0.len(),
        }
        .into());
    }
    let rhs = |x: &[S]| quad_rhs(x, &net.forward_unchecked(x), p);
    Ok(integrate(rhs, x0, (0.0, t_end), cfg)?)
}

/// Integrates `x' = f(x(t), N(x(t - tau)))` with `x(t) = x0` for `t <= 0`.
pub fn simulate_delayed(
    net: &NetSpec,
    p: &QuadParams,
    x0: &State,
    tau: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory<f64>, SimulationError> {
    check_controller(net)?;
    let g = |x: &[f64], xd: &[f64]| quad_rhs(x, &net.forward_unchecked(xd), p);
    Ok(integrate_delayed(g, x0, tau, t_end, cfg)?)
}

/// Writes `t,y,vy,z,vz,theta,u1,u2` rows, recomputing the controls from
/// the network at each state.
pub fn write_trajectory_csv(
    mut w: impl Write,
    traj: &Trajectory<f64>,
    net: &NetSpec,
) -> std::io::Result<()> {
    writeln!(w, "t,y,vy,z,vz,theta,u1,u2")?;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let u = net.forward_unchecked(x);
        write!(w, "{t}")?;
        for v in x.iter().chain(&u) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dalgebra::{Algebra, TPoly};
    use crate::gcnet::{saturated_linear, OutputMap};

    fn constant_hover_net(p: &QuadParams) -> NetSpec {
        let b1 = (2.0 * p.hover_control()[0] - 1.0).atanh();
        saturated_linear(vec![vec![0.0; 5]; 2], vec![b1, 0.0], OutputMap::quad_controls()).unwrap()
    }

    #[test]
    fn constant_hover_controller_is_at_rest() {
        let p = QuadParams::default();
        let net = constant_hover_net(&p);
        let dx = closed_loop_rhs(&[0.0; 5], &net, &p).unwrap();
        assert!(dx.iter().all(|v| v.abs() < 1e-13), "{dx:?}");

        let alg = Algebra::new(5, 2).unwrap();
        let x: Vec<TPoly> = (0..5).map(|i| TPoly::variable(&alg, i, 0.0).unwrap()).collect();
        let dx = closed_loop_rhs(&x, &net, &p).unwrap();
        assert!(dx.iter().all(|v| v.constant_part().abs() < 1e-13));
    }

    #[test]
    fn closed_loop_is_composition() {
        let p = QuadParams::default();
        let net = crate::gcnet::NetSpec::random(
            5,
            &[6],
            2,
            crate::gcnet::InputMap::identity(5),
            OutputMap::quad_controls(),
            5,
        )
        .unwrap();
        let x = [0.3, -0.2, 1.0, 0.5, 0.1];
        let u = net.forward(&x).unwrap();
        assert_eq!(closed_loop_rhs(&x, &net, &p).unwrap(), quad_rhs(&x, &u, &p));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let p = QuadParams::default();
        let net = constant_hover_net(&p);
        let traj = simulate(&net, &p, &[0.0; 5], 1.0, &IntegratorConfig::oracle()).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj, &net).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,y,vy,z,vz,theta,u1,u2");
        assert_eq!(lines.len(), traj.len() + 1);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 8));
    }
}
