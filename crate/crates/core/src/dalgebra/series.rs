//! Univariate Taylor coefficients `f^{(i)}(a) / i!` of the elementary
//! functions, used by [`TPoly::compose_series`](super::TPoly::compose_series).

use super::DaError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementaryFn {
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
    /// `ln(1 + e^x)`
    Softplus,
    Sqrt,
    Pow(f64),
    Recip,
}

impl ElementaryFn {
    pub fn name(&self) -> &'static str {
        match self {
            ElementaryFn::Exp => "exp",
            ElementaryFn::Ln => "ln",
            ElementaryFn::Sin => "sin",
            ElementaryFn::Cos => "cos",
            ElementaryFn::Tanh => "tanh",
            ElementaryFn::Softplus => "softplus",
            ElementaryFn::Sqrt => "sqrt",
            ElementaryFn::Pow(_) => "pow",
            ElementaryFn::Recip => "recip",
        }
    }

    /// Taylor coefficients of `self` about `a`, up to and including `h^order`.
    pub fn series(&self, a: f64, order: usize) -> Result<Vec<f64>, DaError> {
        let domain = || DaError::Domain {
            func: self.name(),
            value: a,
        };
        let n = order + 1;
        let out = match *self {
            ElementaryFn::Exp => {
                let e = a.exp();
                let mut c = Vec::with_capacity(n);
                let mut fact = 1.0;
                for i in 0..n {
                    if i > 0 {
                        fact *= i as f64;
                    }
                    c.push(e / fact);
                }
                c
            }
            ElementaryFn::Ln => {
                if !(a > 0.0) {
                    return Err(domain());
                }
                let mut c = vec![a.ln()];
                let mut p = 1.0;
                for i in 1..n {
                    p *= a;
                    let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
                    c.push(sign / (i as f64 * p));
                }
                c
            }
            ElementaryFn::Sin | ElementaryFn::Cos => {
                let (s, co) = a.sin_cos();
                // derivatives cycle sin, cos, -sin, -cos
                let cycle = if *self == ElementaryFn::Sin {
                    [s, co, -s, -co]
                } else {
                    [co, -s, -co, s]
                };
                let mut c = Vec::with_capacity(n);
                let mut fact = 1.0;
                for i in 0..n {
                    if i > 0 {
                        fact *= i as f64;
                    }
                    c.push(cycle[i % 4] / fact);
                }
                c
            }
            ElementaryFn::Tanh => {
                // y' = 1 - y²  ⇒  (i+1) y_{i+1} = [i == 0] - Σ_j y_j y_{i-j}
                let mut y = vec![0.0; n];
                y[0] = a.tanh();
                for i in 0..order {
                    let conv: f64 = (0..=i).map(|j| y[j] * y[i - j]).sum();
                    let rhs = if i == 0 { 1.0 - conv } else { -conv };
                    y[i + 1] = rhs / (i + 1) as f64;
                }
                y
            }
            ElementaryFn::Softplus => {
                // softplus' = σ, σ' = σ - σ²
                let mut sig = vec![0.0; n];
                sig[0] = sigmoid(a);
                for i in 0..order.saturating_sub(1) {
                    let conv: f64 = (0..=i).map(|j| sig[j] * sig[i - j]).sum();
                    sig[i + 1] = (sig[i] - conv) / (i + 1) as f64;
                }
                let mut c = vec![0.0; n];
                c[0] = softplus(a);
                for i in 1..n {
                    c[i] = sig[i - 1] / i as f64;
                }
                c
            }
            ElementaryFn::Sqrt => {
                if !(a > 0.0) {
                    return Err(domain());
                }
                pow_series(a, 0.5, n)
            }
            ElementaryFn::Pow(p) => {
                let integral = p.fract() == 0.0 && p >= 0.0;
                if !(a > 0.0) && !integral {
                    return Err(domain());
                }
                pow_series(a, p, n)
            }
            ElementaryFn::Recip => {
                if a == 0.0 || !a.is_finite() {
                    return Err(domain());
                }
                let mut c = Vec::with_capacity(n);
                let inv = 1.0 / a;
                let mut term = inv;
                for _ in 0..n {
                    c.push(term);
                    term *= -inv;
                }
                c
            }
        };
        Ok(out)
    }
}

// (a + h)^p = Σ C(p, i) a^{p-i} h^i, via c_{i+1} = c_i (p - i) / ((i + 1) a);
// for integer p >= 0 and a == 0 the binomial terms are formed directly.
fn pow_series(a: f64, p: f64, n: usize) -> Vec<f64> {
    let mut c = Vec::with_capacity(n);
    if a == 0.0 {
        let mut binom = 1.0;
        for i in 0..n {
            c.push(if i as f64 == p { binom } else { 0.0 });
            binom *= (p - i as f64) / (i + 1) as f64;
        }
        return c;
    }
    let mut term = a.powf(p);
    for i in 0..n {
        c.push(term);
        term *= (p - i as f64) / ((i + 1) as f64 * a);
    }
    c
}

/// Logistic function, the derivative of softplus.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Central finite differences of f at a, for i-th derivative up to 2.
    fn check_first_two(f: ElementaryFn, real: impl Fn(f64) -> f64, a: f64) {
        let c = f.series(a, 3).unwrap();
        let h = 1e-4;
        let d1 = (real(a + h) - real(a - h)) / (2.0 * h);
        let d2 = (real(a + h) - 2.0 * real(a) + real(a - h)) / (h * h);
        assert!((c[0] - real(a)).abs() < 1e-12, "{f:?} value");
        assert!((c[1] - d1).abs() < 1e-6 * (1.0 + d1.abs()), "{f:?} d1");
        assert!((c[2] - d2 / 2.0).abs() < 1e-4 * (1.0 + d2.abs()), "{f:?} d2");
    }

    #[test]
    fn series_match_finite_differences() {
        check_first_two(ElementaryFn::Exp, f64::exp, 0.7);
        check_first_two(ElementaryFn::Ln, f64::ln, 1.7);
        check_first_two(ElementaryFn::Sin, f64::sin, 0.3);
        check_first_two(ElementaryFn::Cos, f64::cos, -1.1);
        check_first_two(ElementaryFn::Tanh, f64::tanh, 0.4);
        check_first_two(ElementaryFn::Softplus, softplus, -0.8);
        check_first_two(ElementaryFn::Sqrt, f64::sqrt, 2.5);
        check_first_two(ElementaryFn::Pow(1.5), |x| x.powf(1.5), 1.3);
        check_first_two(ElementaryFn::Recip, |x| 1.0 / x, -0.6);
    }

    #[test]
    fn softplus_guard_for_large_arguments() {
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(31.0) - 31.0).abs() < 1e-13);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let c = ElementaryFn::Softplus.series(800.0, 3).unwrap();
        assert_eq!(c, vec![800.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn integer_powers_at_zero() {
        let c = ElementaryFn::Pow(3.0).series(0.0, 4).unwrap();
        assert_eq!(c, vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(ElementaryFn::Pow(0.5).series(0.0, 2).is_err());
    }
}
