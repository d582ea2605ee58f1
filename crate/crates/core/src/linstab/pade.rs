use nalgebra::DMatrix;

use super::{LinModel, LinstabError};
use crate::dalgebra::factorial;

pub const PADE_ORDER: usize = 5;

/// Denominator coefficients `p_j` of the diagonal `[m/m]` Padé approximant
/// of `e^{-x}`: `Σ (-1)^j p_j x^j / Σ p_j x^j`, with `p_0 = 1`.
pub fn pade_coefficients(m: usize) -> Vec<f64> {
    (0..=m)
        .map(|j| {
            factorial(2 * m - j) * factorial(m)
                / (factorial(2 * m) * factorial(j) * factorial(m - j))
        })
        .collect()
}

/// State-space form `(A, B, C, D)` of one delay channel, with transfer
/// function `D + C (sI - A)^{-1} B ≈ e^{-sτ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PadeBlock {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: f64,
}

/// Controllable canonical realization of the order-`m` approximant,
/// built in the scaled variable `x = sτ` and then rescaled by `1/τ`.
pub fn pade_realization(m: usize, tau: f64) -> Result<PadeBlock, LinstabError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LinstabError::BadDelay(tau));
    }
    if m == 0 {
        return Err(LinstabError::Invalid("Padé order must be positive".into()));
    }
    let p = pade_coefficients(m);
    // Monic denominator x^m + Σ a_j x^j.
    let a_coef: Vec<f64> = p[..m].iter().map(|pj| pj / p[m]).collect();
    let sign = |j: usize| if j % 2 == 0 { 1.0 } else { -1.0 };
    let d = sign(m);
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..m {
        a[(m - 1, j)] = -a_coef[j];
    }
    let mut b = DMatrix::zeros(m, 1);
    b[(m - 1, 0)] = 1.0;
    // Strictly proper remainder of N/D after removing the feedthrough d.
    let c = DMatrix::from_fn(1, m, |_, j| (sign(j) - d) * a_coef[j]);
    Ok(PadeBlock {
        a: a / tau,
        b: b / tau,
        c,
        d,
    })
}

/// The linear system in which every state is fed back through its own
/// order-5 Padé delay channel:
///
/// ```text
/// [ A_s + A_N D    A_N C ]
/// [ B              A_p   ]
/// ```
///
/// with block-diagonal replicas of the single-channel realization.
pub fn pade_augment(lin: &LinModel, tau: f64) -> Result<DMatrix<f64>, LinstabError> {
    let blk = pade_realization(PADE_ORDER, tau)?;
    let n = lin.dim();
    let m = PADE_ORDER;
    let size = n * (1 + m);
    let mut out = DMatrix::zeros(size, size);
    let top_left = &lin.a_s + &lin.a_n * blk.d;
    out.view_mut((0, 0), (n, n)).copy_from(&top_left);
    for ch in 0..n {
        let off = n + ch * m;
        // A_N C: column `ch` of A_N times the row vector C.
        for i in 0..n {
            for j in 0..m {
                out[(i, off + j)] = lin.a_n[(i, ch)] * blk.c[(0, j)];
            }
        }
        for i in 0..m {
            out[(off + i, ch)] = blk.b[(i, 0)];
            for j in 0..m {
                out[(off + i, off + j)] = blk.a[(i, j)];
            }
        }
    }
    Ok(out)
}
