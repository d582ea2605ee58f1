use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{pade_augment, LinModel, LinstabError};
use crate::linalg;

/// Physical eigenvalues of the Padé-augmented system along a delay grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootLocus {
    pub taus: Vec<f64>,
    /// `paths[g][i]`: tracked eigenvalue `i` at grid point `g`.
    pub paths: Vec<Vec<Complex64>>,
    /// Grid indices at which the nearest-neighbour match was not clear cut
    /// (runner-up candidate within twice the chosen distance).
    pub ambiguous: Vec<usize>,
}

// Greedy matching: repeatedly take the globally closest (track, candidate)
// pair. Returns the assignment and whether any choice was contested.
fn assign(prev: &[Complex64], candidates: &[Complex64]) -> (Vec<Complex64>, bool) {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(prev.len() * candidates.len());
    for (i, p) in prev.iter().enumerate() {
        for (j, c) in candidates.iter().enumerate() {
            pairs.push(((p - c).norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = vec![Complex64::new(f64::NAN, f64::NAN); prev.len()];
    let mut track_done = vec![false; prev.len()];
    let mut cand_used = vec![false; candidates.len()];
    let mut ambiguous = false;
    for &(d, i, j) in &pairs {
        if track_done[i] || cand_used[j] {
            continue;
        }
        // A conjugate partner at the same distance is not a real ambiguity.
        let runner_up = pairs.iter().find(|&&(_, i2, j2)| {
            i2 == i && j2 != j && !cand_used[j2] && (candidates[j2] - candidates[j].conj()).norm() > 1e-12
        });
        if let Some(&(d2, _, _)) = runner_up {
            if d > 0.0 && d2 < 2.0 * d {
                ambiguous = true;
            }
        }
        out[i] = candidates[j];
        track_done[i] = true;
        cand_used[j] = true;
    }
    (out, ambiguous)
}

/// Tracks the eigenvalues of `A` through the Padé-augmented spectra on an
/// ascending grid of positive delays.
pub fn root_locus(lin: &LinModel, taus: &[f64]) -> Result<RootLocus, LinstabError> {
    if taus.is_empty() || taus[0] <= 0.0 || taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LinstabError::Invalid(
            "delay grid must be positive and strictly ascending".into(),
        ));
    }
    let mut prev = linalg::eigenvalues(&lin.a)?;
    prev.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    let mut paths = Vec::with_capacity(taus.len());
    let mut ambiguous = Vec::new();
    for (g, &tau) in taus.iter().enumerate() {
        let spec = linalg::eigenvalues(&pade_augment(lin, tau)?)?;
        let (next, contested) = assign(&prev, &spec);
        if contested {
            ambiguous.push(g);
        }
        paths.push(next.clone());
        prev = next;
    }
    Ok(RootLocus {
        taus: taus.to_vec(),
        paths,
        ambiguous,
    })
}

/// `tau,re_1..re_n,im_1..im_n`
pub fn write_root_locus_csv(mut w: impl Write, locus: &RootLocus) -> std::io::Result<()> {
    let n = locus.paths.first().map_or(0, Vec::len);
    let mut header = vec!["tau".to_string()];
    header.extend((1..=n).map(|i| format!("re_{i}")));
    header.extend((1..=n).map(|i| format!("im_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for (tau, row) in locus.taus.iter().zip(&locus.paths) {
        write!(w, "{tau}")?;
        for l in row {
            write!(w, ",{}", l.re)?;
        }
        for l in row {
            write!(w, ",{}", l.im)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn scalar_locus_starts_at_minus_one_and_crosses_near_half_pi() {
        let lin = LinModel::new(DMatrix::from_element(1, 1, 0.0), DMatrix::from_element(1, 1, -1.0))
            .unwrap();
        let taus: Vec<f64> = (1..=200).map(|i| i as f64 * 0.01).collect();
        let locus = root_locus(&lin, &taus).unwrap();
        assert!((locus.paths[0][0] - Complex64::new(-1.0, 0.0)).norm() < 0.02);
        // The delayed scalar loop turns oscillatory and crosses the axis.
        let crossing = locus
            .paths
            .iter()
            .position(|p| p[0].re >= 0.0)
            .map(|g| taus[g])
            .unwrap();
        assert!((crossing - std::f64::consts::FRAC_PI_2).abs() < 0.02, "{crossing}");

        let mut buf = Vec::new();
        write_root_locus_csv(&mut buf, &locus).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tau,re_1,im_1\n"));
        assert_eq!(text.lines().count(), 201);
    }

    #[test]
    fn rejects_bad_grid() {
        let lin = LinModel::new(DMatrix::from_element(1, 1, 0.0), DMatrix::from_element(1, 1, -1.0))
            .unwrap();
        assert!(root_locus(&lin, &[0.1, 0.05]).is_err());
        assert!(root_locus(&lin, &[]).is_err());
        assert!(root_locus(&lin, &[0.0, 0.1]).is_err());
    }
}
