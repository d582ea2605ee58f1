use serde::{Deserialize, Serialize};

use super::{critical_delay, eig, linearize, margins_from_spectrum, CriticalDelay, DelayOptions, LinstabError};
use super::{MarginsReport, ModalMargins, Spectrum};
use crate::gcnet::{find_equilibrium, shift_axes, Equilibrium, EquilibriumOptions, NetSpec};
use crate::odeflow::{QuadParams, STATE_DIM};

/// Everything the hover analysis of one controller produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub equilibrium: Equilibrium,
    /// Norm of the equilibrium offset `‖x̂‖`.
    pub offset: f64,
    pub spectrum: Spectrum,
    pub modal: ModalMargins,
    pub stable: bool,
    /// Absent when the undelayed loop is already unstable.
    pub delay: Option<CriticalDelay>,
    pub margins: MarginsReport,
}

/// Equilibrium, axis shift, linearization, spectrum, modal margins and
/// critical delay, in that order. Returns the analysis together with the
/// shifted controller, whose equilibrium is the origin.
///
/// An unstable loop is a result, not an error: `stable` is false and the
/// delay search is skipped.
pub fn analyze(
    net: &NetSpec,
    p: &QuadParams,
    eq_opts: &EquilibriumOptions,
    delay_opts: &DelayOptions,
) -> Result<(Analysis, NetSpec), LinstabError> {
    let equilibrium = find_equilibrium(net, p, eq_opts)?;
    let shifted = shift_axes(net, &equilibrium.x_hat);
    let lin = linearize(&shifted, p, &[0.0; STATE_DIM])?;
    let spectrum = eig(&lin.a)?;
    let modal = margins_from_spectrum(&spectrum);
    let delay = if modal.stable {
        Some(critical_delay(&lin, delay_opts)?)
    } else {
        None
    };
    let margins = MarginsReport {
        zeta10: modal.zeta10,
        period: modal.period,
        tau_star_pade: delay.as_ref().and_then(|d| d.pade),
        tau_star_refined: delay.as_ref().and_then(|d| d.refined),
    };
    let offset = equilibrium.x_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((
        Analysis {
            equilibrium,
            offset,
            stable: modal.stable,
            spectrum,
            modal,
            delay,
            margins,
        },
        shifted,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcnet::{saturated_linear, OutputMap};

    fn pd_net(p: &QuadParams, gain_sign: f64) -> NetSpec {
        let b1 = (2.0 * p.hover_control()[0] - 1.0).atanh();
        saturated_linear(
            vec![vec![0.0, 0.0, -0.3, -0.4, 0.0], vec![gain_sign * 0.02, gain_sign * 0.05, 0.0, 0.0, -0.2]],
            vec![b1, 0.0],
            OutputMap::quad_controls(),
        )
        .unwrap()
    }

    #[test]
    fn stabilizing_feedback_has_finite_margins() {
        let p = QuadParams::default();
        let (a, shifted) = analyze(&pd_net(&p, -1.0), &p, &EquilibriumOptions::default(), &DelayOptions::default()).unwrap();
        assert!(a.stable, "{:?}", a.spectrum);
        assert!(a.offset < 1e-10);
        assert!(a.margins.zeta10.unwrap().is_finite());
        let tau = a.delay.unwrap().best().unwrap();
        assert!(tau > 0.0 && tau.is_finite());
        assert_eq!(shifted.pre.shift.len(), 5);
    }

    #[test]
    fn destabilizing_feedback_is_reported_not_raised() {
        let p = QuadParams::default();
        let (a, _) = analyze(&pd_net(&p, 1.0), &p, &EquilibriumOptions::default(), &DelayOptions::default()).unwrap();
        assert!(!a.stable);
        assert!(a.delay.is_none());
        assert_eq!(a.margins.zeta10, None);
    }
}
