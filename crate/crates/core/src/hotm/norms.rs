use nalgebra::DMatrix;

use crate::dalgebra::{factorial, TPoly};
use crate::linalg;

// Number of index tuples (j_1..j_i) that collapse onto the monomial with
// exponents `alpha`: i! / Π α_j!.
fn multiplicity(alpha: &[u8]) -> f64 {
    let i: usize = alpha.iter().map(|&a| a as usize).sum();
    factorial(i) / alpha.iter().map(|&a| factorial(a as usize)).product::<f64>()
}

/// The `n × n^i` unfolding of the order-`i` terms: column
/// `j_1 + j_2 n + … + j_i n^{i-1}` of row `r` holds the coefficient of
/// `δx_{j_1}…δx_{j_i}` in component `r`, shared evenly over all tuples
/// that name the same monomial, so that contracting with `δx ⊗ … ⊗ δx`
/// gives back the polynomial.
pub fn unfolded_matrix(components: &[TPoly], i: usize) -> DMatrix<f64> {
    let alg = components[0].algebra();
    let n = alg.nvars();
    let cols = n.pow(i as u32);
    let mut out = DMatrix::zeros(components.len(), cols);
    let mut alpha = vec![0u32; n];
    for col in 0..cols {
        alpha.iter_mut().for_each(|a| *a = 0);
        let mut rest = col;
        for _ in 0..i {
            alpha[rest % n] += 1;
            rest /= n;
        }
        let idx = alg.index_of(&alpha).expect("degree within order");
        let m = multiplicity(alg.monomial(idx));
        for (r, c) in components.iter().enumerate() {
            out[(r, col)] = c.coeffs()[idx] / m;
        }
    }
    out
}

/// `G = A_i A_iᵀ`, accumulated monomial by monomial without forming the
/// unfolding: each monomial contributes `c_r c_s / M_α`.
pub fn gram_matrix(components: &[TPoly], i: usize) -> DMatrix<f64> {
    let alg = components[0].algebra();
    let rows = components.len();
    let mut g = DMatrix::zeros(rows, rows);
    for idx in alg.degree_range(i) {
        let inv_m = 1.0 / multiplicity(alg.monomial(idx));
        for r in 0..rows {
            let cr = components[r].coeffs()[idx];
            if cr == 0.0 {
                continue;
            }
            for s in r..rows {
                g[(r, s)] += cr * components[s].coeffs()[idx] * inv_m;
            }
        }
    }
    for r in 0..rows {
        for s in 0..r {
            g[(r, s)] = g[(s, r)];
        }
    }
    g
}

/// Spectral norms `b_1..b_k` of the unfolded order blocks.
pub fn unfold_norms(components: &[TPoly]) -> Vec<f64> {
    let k = components[0].algebra().order();
    (1..=k)
        .map(|i| {
            let g = gram_matrix(components, i);
            let top = linalg::symmetric_eigenvalues(&g)
                .expect("symmetric eigenproblem")
                .last()
                .copied()
                .unwrap_or(0.0);
            top.max(0.0).sqrt()
        })
        .collect()
}

/// Same norms through the explicit unfolding and a full SVD. Exponential in
/// the order; meant for cross-checks.
pub fn unfold_norms_explicit(components: &[TPoly]) -> Vec<f64> {
    let k = components[0].algebra().order();
    (1..=k)
        .map(|i| {
            unfolded_matrix(components, i)
                .singular_values()
                .iter()
                .copied()
                .fold(0.0, f64::max)
        })
        .collect()
}
