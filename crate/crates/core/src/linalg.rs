//! Small dense eigenvalue routines.
//!
//! General real matrices go through balancing, reduction to upper Hessenberg
//! form by stabilized elementary similarity transforms, and Francis
//! double-shift QR iteration. Symmetric matrices use cyclic Jacobi rotations.

use nalgebra::DMatrix;
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("QR iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("matrix is singular")]
    Singular,
}

const MAX_QR_ITERATIONS: usize = 60;

/// All eigenvalues of a real square matrix; complex conjugate pairs are
/// adjacent.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare(n, a.ncols()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based working copy keeps the classic index arithmetic readable.
    let mut h = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            h[i + 1][j + 1] = a[(i, j)];
        }
    }
    balance(&mut h, n);
    hessenberg(&mut h, n);
    let (wr, wi) = hqr(&mut h, n)?;
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}

/// Largest real part over the eigenvalues.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64, LinalgError> {
    Ok(eigenvalues(a)?
        .iter()
        .fold(f64::NEG_INFINITY, |m, l| m.max(l.re)))
}

fn balance(a: &mut [Vec<f64>], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 1..=n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 1..=n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 1..=n {
                        a[i][j] *= g;
                    }
                    for j in 1..=n {
                        a[j][i] *= f;
                    }
                }
            }
        }
    }
}

fn hessenberg(a: &mut [Vec<f64>], n: usize) {
    for m in 2..n {
        let mut x: f64 = 0.0;
        let mut i = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                i = j;
            }
        }
        if i != m {
            for j in (m - 1)..=n {
                let t = a[i][j];
                a[i][j] = a[m][j];
                a[m][j] = t;
            }
            for j in 1..=n {
                let t = a[j][i];
                a[j][i] = a[j][m];
                a[j][m] = t;
            }
        }
        if x != 0.0 {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        a[i][j] -= y * a[m][j];
                    }
                    for j in 1..=n {
                        a[j][m] += y * a[j][i];
                    }
                }
            }
        }
    }
    for i in 1..=n {
        for j in 1..i.saturating_sub(1) {
            a[i][j] = 0.0;
        }
    }
}

fn hqr(a: &mut [Vec<f64>], n: usize) -> Result<(Vec<f64>, Vec<f64>), LinalgError> {
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w);
    while nn >= 1 {
        let mut its = 0;
        loop {
            // Look for a single small subdiagonal element.
            let mut l = nn;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
                break;
            }
            y = a[nn - 1][nn - 1];
            w = a[nn][nn - 1] * a[nn - 1][nn];
            if l == nn - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    wr[nn - 1] = x + z;
                    wr[nn] = x + z;
                    if z != 0.0 {
                        wr[nn] = x - w / z;
                    }
                    wi[nn - 1] = 0.0;
                    wi[nn] = 0.0;
                } else {
                    wr[nn - 1] = x + p;
                    wr[nn] = x + p;
                    wi[nn - 1] = -z;
                    wi[nn] = z;
                }
                nn = nn.saturating_sub(2);
                break;
            }
            if its == MAX_QR_ITERATIONS {
                return Err(LinalgError::NoConvergence(its));
            }
            if its == 10 || its == 20 || its == 40 {
                // exceptional shift
                t += x;
                for i in 1..=nn {
                    a[i][i] -= x;
                }
                let s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            // Form shift and look for two consecutive small subdiagonals.
            let mut m = nn - 2;
            loop {
                z = a[m][m];
                r = x - z;
                let s = y - z;
                p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - r - s;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            // Double QR step on rows l..nn and columns m..nn.
            let mut k = m;
            while k + 1 <= nn {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = 0.0;
                    if k != nn - 1 {
                        r = a[k + 2][k - 1];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        p = a[k][j] + q * a[k + 1][j];
                        if k != nn - 1 {
                            p += r * a[k + 2][j];
                            a[k + 2][j] -= p * z;
                        }
                        a[k + 1][j] -= p * y;
                        a[k][j] -= p * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        p = x * a[i][k] + y * a[i][k + 1];
                        if k != nn - 1 {
                            p += z * a[i][k + 2];
                            a[i][k + 2] -= p * r;
                        }
                        a[i][k + 1] -= p * q;
                        a[i][k] -= p;
                    }
                }
                k += 1;
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok((wr, wi))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// Only the upper triangle is read.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare(n, a.ncols()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) || off == 0.0 {
            let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
            ev.sort_by(|x, y| x.total_cmp(y));
            return Ok(ev);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    Err(LinalgError::NoConvergence(100))
}

/// Unit eigenvector for a (computed) eigenvalue `lambda`, by inverse
/// iteration on `A - (lambda + shift) I`.
pub fn eigenvector(a: &DMatrix<f64>, lambda: Complex64) -> Result<Vec<Complex64>, LinalgError> {
    let n = a.nrows();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let shift = lambda + Complex64::new(scale * 1e-10, scale * 1e-10);
    let m = DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(a[(i, j)], 0.0) - if i == j { shift } else { Complex64::new(0.0, 0.0) }
    });
    let lu = m.lu();
    let mut v = nalgebra::DVector::from_fn(n, |i, _| Complex64::new(1.0 + i as f64 * 0.1, 0.3));
    for _ in 0..4 {
        v = lu.solve(&v).ok_or(LinalgError::Singular)?;
        let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(LinalgError::Singular);
        }
        v /= Complex64::new(norm, 0.0);
    }
    Ok(v.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn diagonal_spectrum() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            -1.0, -2.0, -3.0, -4.0, -5.0,
        ]));
        let ev = sorted(eigenvalues(&a).unwrap());
        let expect = [-5.0, -4.0, -3.0, -2.0, -1.0];
        for (l, e) in ev.iter().zip(expect) {
            assert_eq!(l.re, e);
            assert_eq!(l.im, 0.0);
        }
    }

    #[test]
    fn companion_with_repeated_root() {
        // (λ² + 1)(λ + 1)³ = λ⁵ + 3λ⁴ + 4λ³ + 4λ² + 3λ + 1
        let c = [1.0, 3.0, 4.0, 4.0, 3.0];
        let mut a = DMatrix::zeros(5, 5);
        for i in 0..4 {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..5 {
            a[(4, j)] = -c[j];
        }
        let ev = eigenvalues(&a).unwrap();
        let count = |target: Complex64, tol: f64| ev.iter().filter(|l| (*l - target).norm() < tol).count();
        assert_eq!(count(Complex64::new(0.0, 1.0), 1e-6), 1);
        assert_eq!(count(Complex64::new(0.0, -1.0), 1e-6), 1);
        // a triple root is only determined to ~ eps^(1/3)
        assert_eq!(count(Complex64::new(-1.0, 0.0), 1e-4), 3);
    }

    #[test]
    fn rotation_block() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        let ev = sorted(eigenvalues(&a).unwrap());
        assert!((ev[0] - Complex64::new(0.0, -2.0)).norm() < 1e-14);
        assert!((ev[1] - Complex64::new(0.0, 2.0)).norm() < 1e-14);
    }

    #[test]
    fn non_square_is_rejected() {
        let a = DMatrix::<f64>::zeros(2, 3);
        assert_eq!(eigenvalues(&a), Err(LinalgError::NotSquare(2, 3)));
    }

    #[test]
    fn jacobi_on_known_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let ev = symmetric_eigenvalues(&a).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eigenvector_residual() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, -2.0, 1.0, 0.5, 0.0, 0.3, -1.0]);
        for l in eigenvalues(&a).unwrap() {
            let v = eigenvector(&a, l).unwrap();
            let ac = a.map(|x| Complex64::new(x, 0.0));
            let vv = nalgebra::DVector::from_vec(v);
            let res = (&ac * &vv - &vv * l).norm();
            assert!(res < 1e-10, "residual {res}");
        }
    }
}
