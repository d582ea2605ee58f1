//! Truncated multivariate Taylor polynomials.
//!
//! A [`TPoly`] is a polynomial in `nvars` expansion variables `δx_0 .. δx_{n-1}`
//! truncated at total degree `order`. Arithmetic on these objects is exact up
//! to the truncation order, so evaluating any smooth computation over `TPoly`
//! inputs seeded with [`TPoly::variable`] yields every partial derivative of
//! the result up to that order.
//!
//! Coefficients are stored densely in graded-lexicographic monomial order:
//! all monomials of degree 0, then degree 1, and so on, with ties broken by
//! descending exponent of the lowest-numbered variable. Because the ordering
//! is graded, the coefficients of a degree-`j` truncation form a prefix of
//! the degree-`k` vector for any `j <= k`.

mod jet;
mod scalar;
mod series;

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

pub use jet::Jet;
pub use scalar::Scalar;
pub use series::{sigmoid, softplus, ElementaryFn};

/// Largest number of monomials an [`Algebra`] may hold.
pub const MAX_MONOMIALS: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DaError {
    #[error("algebra needs nvars >= 1 and order >= 1, got nvars={nvars} order={order}")]
    InvalidConfig { nvars: usize, order: usize },
    #[error("algebra with nvars={nvars} order={order} has too many monomials")]
    TooLarge { nvars: usize, order: usize },
    #[error("variable index {index} out of range for {nvars} variables")]
    VariableOutOfRange { index: usize, nvars: usize },
    #[error("operands live in different algebras: (n={0}, k={1}) vs (n={2}, k={3})")]
    ConfigMismatch(usize, usize, usize, usize),
    #[error("multi-index has length {got}, expected {expected}")]
    IndexLength { got: usize, expected: usize },
    #[error("multi-index has degree {degree} above truncation order {order}")]
    DegreeOverflow { degree: usize, order: usize },
    #[error("{func} is undefined at constant part {value}")]
    Domain { func: &'static str, value: f64 },
    #[error("point has length {got}, expected {expected}")]
    PointLength { got: usize, expected: usize },
    #[error("malformed polynomial: {0}")]
    Malformed(String),
}

/// Number of monomials in `nvars` variables of total degree at most `order`,
/// i.e. `C(nvars + order, order)`; the constant term is dropped when
/// `include_constant` is false.
pub fn monomial_count(nvars: usize, order: usize, include_constant: bool) -> usize {
    let total = binomial(nvars + order, order);
    if include_constant {
        total
    } else {
        total - 1
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

struct Tables {
    nvars: usize,
    order: usize,
    /// Exponent tuples in canonical order.
    monomials: Vec<Vec<u8>>,
    degrees: Vec<usize>,
    /// `degree_end[d]` is the number of monomials of degree <= d.
    degree_end: Vec<usize>,
    index: HashMap<Vec<u8>, usize>,
    /// Row `i` lists the product index of monomial `i` with each monomial
    /// `j < degree_end[order - deg(i)]`.
    product: Vec<Vec<u32>>,
}

impl Tables {
    fn build(nvars: usize, order: usize) -> Tables {
        let mut monomials = Vec::new();
        let mut degrees = Vec::new();
        let mut degree_end = Vec::with_capacity(order + 1);
        for d in 0..=order {
            let mut current = vec![0u8; nvars];
            push_degree(&mut monomials, &mut current, 0, d);
            degrees.resize(monomials.len(), d);
            degree_end.push(monomials.len());
        }
        let index: HashMap<Vec<u8>, usize> = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let mut product = Vec::with_capacity(monomials.len());
        let mut scratch = vec![0u8; nvars];
        for (i, mi) in monomials.iter().enumerate() {
            let limit = degree_end[order - degrees[i]];
            let row = monomials[..limit]
                .iter()
                .map(|mj| {
                    for v in 0..nvars {
                        scratch[v] = mi[v] + mj[v];
                    }
                    index[&scratch] as u32
                })
                .collect();
            product.push(row);
        }
        Tables {
            nvars,
            order,
            monomials,
            degrees,
            degree_end,
            index,
            product,
        }
    }
}

// Enumerates exponent tuples of total degree `remaining` over variables
// `var..`, highest power of the earliest variable first.
fn push_degree(out: &mut Vec<Vec<u8>>, current: &mut [u8], var: usize, remaining: usize) {
    if var == current.len() - 1 {
        current[var] = remaining as u8;
        out.push(current.to_vec());
        current[var] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[var] = e as u8;
        push_degree(out, current, var + 1, remaining - e);
    }
    current[var] = 0;
}

/// Handle to the monomial tables of one `(nvars, order)` pair.
///
/// Handles are cached process-wide, so two algebras built from the same
/// configuration share their tables and compare equal cheaply.
#[derive(Clone)]
pub struct Algebra(Arc<Tables>);

impl Algebra {
    pub fn new(nvars: usize, order: usize) -> Result<Algebra, DaError> {
        if nvars == 0 || order == 0 {
            return Err(DaError::InvalidConfig { nvars, order });
        }
        if order > u8::MAX as usize || binomial(nvars + order, order) > MAX_MONOMIALS {
            return Err(DaError::TooLarge { nvars, order });
        }
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Tables>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        let tables = guard
            .entry((nvars, order))
            .or_insert_with(|| Arc::new(Tables::build(nvars, order)))
            .clone();
        Ok(Algebra(tables))
    }

    pub fn nvars(&self) -> usize {
        self.0.nvars
    }

    pub fn order(&self) -> usize {
        self.0.order
    }

    /// Number of stored coefficients, constant term included.
    pub fn len(&self) -> usize {
        self.0.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Exponent tuple of the monomial stored at position `i`.
    pub fn monomial(&self, i: usize) -> &[u8] {
        &self.0.monomials[i]
    }

    pub fn degree_of(&self, i: usize) -> usize {
        self.0.degrees[i]
    }

    /// Index range of the monomials of total degree exactly `d`.
    pub fn degree_range(&self, d: usize) -> std::ops::Range<usize> {
        let start = if d == 0 { 0 } else { self.0.degree_end[d - 1] };
        start..self.0.degree_end[d]
    }

    /// Position of the monomial with exponents `exps`.
    pub fn index_of(&self, exps: &[u32]) -> Result<usize, DaError> {
        if exps.len() != self.nvars() {
            return Err(DaError::IndexLength {
                got: exps.len(),
                expected: self.nvars(),
            });
        }
        let degree: usize = exps.iter().map(|&e| e as usize).sum();
        if degree > self.order() {
            return Err(DaError::DegreeOverflow {
                degree,
                order: self.order(),
            });
        }
        let key: Vec<u8> = exps.iter().map(|&e| e as u8).collect();
        Ok(self.0.index[&key])
    }

    pub fn same_as(&self, other: &Algebra) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Seeds `x0 + δx_i`.
    pub fn variable(&self, i: usize, x0: f64) -> Result<TPoly, DaError> {
        TPoly::variable(self, i, x0)
    }

    pub fn constant(&self, value: f64) -> TPoly {
        TPoly::constant(self, value)
    }
}

impl fmt::Debug for Algebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Algebra(n={}, k={})", self.nvars(), self.order())
    }
}

impl PartialEq for Algebra {
    fn eq(&self, other: &Self) -> bool {
        self.same_as(other)
    }
}

/// A truncated multivariate Taylor polynomial.
#[derive(Clone, PartialEq)]
pub struct TPoly {
    alg: Algebra,
    coeffs: Vec<f64>,
}

impl TPoly {
    pub fn constant(alg: &Algebra, value: f64) -> TPoly {
        let mut coeffs = vec![0.0; alg.len()];
        coeffs[0] = value;
        TPoly {
            alg: alg.clone(),
            coeffs,
        }
    }

    pub fn zero(alg: &Algebra) -> TPoly {
        TPoly::constant(alg, 0.0)
    }

    pub fn variable(alg: &Algebra, i: usize, x0: f64) -> Result<TPoly, DaError> {
        if i >= alg.nvars() {
            return Err(DaError::VariableOutOfRange {
                index: i,
                nvars: alg.nvars(),
            });
        }
        let mut p = TPoly::constant(alg, x0);
        // Degree-one monomials follow the constant in variable order.
        p.coeffs[1 + i] = 1.0;
        Ok(p)
    }

    /// Builds a polynomial from its full coefficient vector in canonical order.
    pub fn from_coeffs(alg: &Algebra, coeffs: Vec<f64>) -> Result<TPoly, DaError> {
        if coeffs.len() != alg.len() {
            return Err(DaError::Malformed(format!(
                "expected {} coefficients, got {}",
                alg.len(),
                coeffs.len()
            )));
        }
        Ok(TPoly {
            alg: alg.clone(),
            coeffs,
        })
    }

    pub fn algebra(&self) -> &Algebra {
        &self.alg
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn constant_part(&self) -> f64 {
        self.coeffs[0]
    }

    /// Coefficient of the monomial `∏ δx_v^{exps[v]}`.
    pub fn coefficient(&self, exps: &[u32]) -> Result<f64, DaError> {
        Ok(self.coeffs[self.alg.index_of(exps)?])
    }

    /// Mixed partial derivative `∂^{|α|} / ∂x^α` at the expansion point.
    pub fn partial(&self, exps: &[u32]) -> Result<f64, DaError> {
        let c = self.coefficient(exps)?;
        let scale: f64 = exps.iter().map(|&e| factorial(e as usize)).product();
        Ok(c * scale)
    }

    /// First partial derivatives at the expansion point.
    pub fn gradient(&self) -> Vec<f64> {
        self.coeffs[1..=self.alg.nvars()].to_vec()
    }

    /// Non-zero terms as `(exponents, coefficient)` in canonical order.
    pub fn terms(&self) -> impl Iterator<Item = (&[u8], f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, &c)| (self.alg.monomial(i), c))
    }

    /// Value of the truncated polynomial at the perturbation `dx`.
    pub fn evaluate(&self, dx: &[f64]) -> Result<f64, DaError> {
        let n = self.alg.nvars();
        if dx.len() != n {
            return Err(DaError::PointLength {
                got: dx.len(),
                expected: n,
            });
        }
        let order = self.alg.order();
        // powers[v][e] = dx[v]^e
        let powers: Vec<Vec<f64>> = dx
            .iter()
            .map(|&x| {
                let mut p = Vec::with_capacity(order + 1);
                let mut acc = 1.0;
                for _ in 0..=order {
                    p.push(acc);
                    acc *= x;
                }
                p
            })
            .collect();
        let mut sum = 0.0;
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let mono = self.alg.monomial(i);
            let mut term = c;
            for v in 0..n {
                term *= powers[v][mono[v] as usize];
            }
            sum += term;
        }
        Ok(sum)
    }

    /// Drops every term above degree `order`, returning a polynomial in the
    /// smaller algebra.
    pub fn truncate(&self, order: usize) -> Result<TPoly, DaError> {
        if order > self.alg.order() {
            return Err(DaError::DegreeOverflow {
                degree: order,
                order: self.alg.order(),
            });
        }
        let alg = Algebra::new(self.alg.nvars(), order)?;
        let coeffs = self.coeffs[..alg.len()].to_vec();
        Ok(TPoly { alg, coeffs })
    }

    /// Terms of total degree exactly `d`.
    pub fn homogeneous_part(&self, d: usize) -> &[f64] {
        &self.coeffs[self.alg.degree_range(d)]
    }

    fn check(&self, other: &TPoly) -> Result<(), DaError> {
        if self.alg.same_as(&other.alg) {
            Ok(())
        } else {
            Err(DaError::ConfigMismatch(
                self.alg.nvars(),
                self.alg.order(),
                other.alg.nvars(),
                other.alg.order(),
            ))
        }
    }

    fn expect_same(&self, other: &TPoly) {
        if let Err(e) = self.check(other) {
            panic!("{e}");
        }
    }

    pub fn checked_add(&self, other: &TPoly) -> Result<TPoly, DaError> {
        self.check(other)?;
        let mut out = self.clone();
        out.add_scaled(1.0, other);
        Ok(out)
    }

    pub fn checked_sub(&self, other: &TPoly) -> Result<TPoly, DaError> {
        self.check(other)?;
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        Ok(out)
    }

    pub fn checked_mul(&self, other: &TPoly) -> Result<TPoly, DaError> {
        self.check(other)?;
        Ok(self.mul_ref(other))
    }

    pub fn checked_div(&self, other: &TPoly) -> Result<TPoly, DaError> {
        self.check(other)?;
        let inv = other.checked_apply(ElementaryFn::Recip)?;
        Ok(self.mul_ref(&inv))
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &TPoly) {
        self.expect_same(other);
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }

    fn mul_ref(&self, other: &TPoly) -> TPoly {
        self.expect_same(other);
        let mut out = vec![0.0; self.coeffs.len()];
        let tables = &self.alg.0;
        // Iterate over the sparser operand's nonzeros.
        let (a, b) = if nonzeros(&self.coeffs) <= nonzeros(&other.coeffs) {
            (&self.coeffs, &other.coeffs)
        } else {
            (&other.coeffs, &self.coeffs)
        };
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let row = &tables.product[i];
            for (&bj, &k) in b[..row.len()].iter().zip(row) {
                out[k as usize] += ai * bj;
            }
        }
        TPoly {
            alg: self.alg.clone(),
            coeffs: out,
        }
    }

    /// Composes the univariate power series `Σ c_i h^i` with the non-constant
    /// part of `self` (Horner scheme). The series must have at least
    /// `order + 1` terms; extra terms are ignored.
    pub fn compose_series(&self, series: &[f64]) -> TPoly {
        let order = self.alg.order();
        let mut nil = self.clone();
        nil.coeffs[0] = 0.0;
        let mut acc = TPoly::constant(&self.alg, series[order]);
        for &c in series[..order].iter().rev() {
            acc = acc.mul_ref(&nil);
            acc.coeffs[0] += c;
        }
        acc
    }

    /// Applies an elementary function, failing when the constant part lies
    /// outside its domain.
    pub fn checked_apply(&self, f: ElementaryFn) -> Result<TPoly, DaError> {
        let series = f.series(self.constant_part(), self.alg.order())?;
        Ok(self.compose_series(&series))
    }

    // Infallible variant used by the operator and `Scalar` impls: domain
    // violations propagate as NaN the way they do for `f64`.
    fn apply(&self, f: ElementaryFn) -> TPoly {
        match self.checked_apply(f) {
            Ok(p) => p,
            Err(_) => TPoly {
                alg: self.alg.clone(),
                coeffs: vec![f64::NAN; self.coeffs.len()],
            },
        }
    }

    pub fn exp(&self) -> TPoly {
        self.apply(ElementaryFn::Exp)
    }
    pub fn ln(&self) -> TPoly {
        self.apply(ElementaryFn::Ln)
    }
    pub fn sin(&self) -> TPoly {
        self.apply(ElementaryFn::Sin)
    }
    pub fn cos(&self) -> TPoly {
        self.apply(ElementaryFn::Cos)
    }
    pub fn tanh(&self) -> TPoly {
        self.apply(ElementaryFn::Tanh)
    }
    pub fn softplus(&self) -> TPoly {
        self.apply(ElementaryFn::Softplus)
    }
    pub fn sqrt(&self) -> TPoly {
        self.apply(ElementaryFn::Sqrt)
    }
    pub fn powf(&self, p: f64) -> TPoly {
        self.apply(ElementaryFn::Pow(p))
    }
    pub fn recip(&self) -> TPoly {
        self.apply(ElementaryFn::Recip)
    }

    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

fn nonzeros(c: &[f64]) -> usize {
    c.iter().filter(|x| **x != 0.0).count()
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

impl fmt::Debug for TPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TPoly[n={}, k={}](", self.alg.nvars(), self.alg.order())?;
        let mut first = true;
        for (mono, c) in self.terms() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (v, &e) in mono.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "·dx{v}")?,
                    _ => write!(f, "·dx{v}^{e}")?,
                }
            }
        }
        if first {
            write!(f, "0")?;
        }
        write!(f, ")")
    }
}

impl Add for TPoly {
    type Output = TPoly;
    fn add(mut self, rhs: TPoly) -> TPoly {
        self.add_scaled(1.0, &rhs);
        self
    }
}

impl Sub for TPoly {
    type Output = TPoly;
    fn sub(mut self, rhs: TPoly) -> TPoly {
        self.add_scaled(-1.0, &rhs);
        self
    }
}

impl Mul for TPoly {
    type Output = TPoly;
    fn mul(self, rhs: TPoly) -> TPoly {
        self.mul_ref(&rhs)
    }
}

impl<'a> Mul<&'a TPoly> for &'a TPoly {
    type Output = TPoly;
    fn mul(self, rhs: &TPoly) -> TPoly {
        self.mul_ref(rhs)
    }
}

impl<'a> Add<&'a TPoly> for &'a TPoly {
    type Output = TPoly;
    fn add(self, rhs: &TPoly) -> TPoly {
        self.clone() + rhs.clone()
    }
}

impl<'a> Sub<&'a TPoly> for &'a TPoly {
    type Output = TPoly;
    fn sub(self, rhs: &TPoly) -> TPoly {
        self.clone() - rhs.clone()
    }
}

impl<'a> Div<&'a TPoly> for &'a TPoly {
    type Output = TPoly;
    fn div(self, rhs: &TPoly) -> TPoly {
        self.clone() / rhs.clone()
    }
}

impl Div for TPoly {
    type Output = TPoly;
    fn div(self, rhs: TPoly) -> TPoly {
        self.expect_same(&rhs);
        self.mul_ref(&rhs.recip())
    }
}

impl Neg for TPoly {
    type Output = TPoly;
    fn neg(mut self) -> TPoly {
        self.coeffs.iter_mut().for_each(|c| *c = -*c);
        self
    }
}

impl AddAssign<&TPoly> for TPoly {
    fn add_assign(&mut self, rhs: &TPoly) {
        self.add_scaled(1.0, rhs);
    }
}

impl SubAssign<&TPoly> for TPoly {
    fn sub_assign(&mut self, rhs: &TPoly) {
        self.add_scaled(-1.0, rhs);
    }
}

impl Add<f64> for TPoly {
    type Output = TPoly;
    fn add(mut self, rhs: f64) -> TPoly {
        self.coeffs[0] += rhs;
        self
    }
}

impl Sub<f64> for TPoly {
    type Output = TPoly;
    fn sub(mut self, rhs: f64) -> TPoly {
        self.coeffs[0] -= rhs;
        self
    }
}

impl Mul<f64> for TPoly {
    type Output = TPoly;
    fn mul(mut self, rhs: f64) -> TPoly {
        self.coeffs.iter_mut().for_each(|c| *c *= rhs);
        self
    }
}

impl Div<f64> for TPoly {
    type Output = TPoly;
    fn div(mut self, rhs: f64) -> TPoly {
        self.coeffs.iter_mut().for_each(|c| *c /= rhs);
        self
    }
}

/// JSON form: `{"nvars": n, "order": k, "terms": [[[e0, .., e_{n-1}], c], ..]}`
/// listing non-zero terms in canonical order.
#[derive(Serialize, Deserialize)]
struct TPolyJson {
    nvars: usize,
    order: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl Serialize for TPoly {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TPolyJson {
            nvars: self.alg.nvars(),
            order: self.alg.order(),
            terms: self
                .terms()
                .map(|(m, c)| (m.iter().map(|&e| e as u32).collect(), c))
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TPoly {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = TPolyJson::deserialize(deserializer)?;
        let alg = Algebra::new(raw.nvars, raw.order).map_err(D::Error::custom)?;
        let mut p = TPoly::zero(&alg);
        for (exps, c) in raw.terms {
            let i = alg.index_of(&exps).map_err(D::Error::custom)?;
            p.coeffs[i] = c;
        }
        Ok(p)
    }
}
