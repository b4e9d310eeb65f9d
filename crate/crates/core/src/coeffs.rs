//! Integer coefficients of the symmetric polynomials, one index at a time.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_complex::Complex64;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::lp::{self, Constraint, LinearProgram, LpOutcome};
use crate::model::ProblemParams;

/// Largest coefficient bound the floating-point programs represent exactly.
const EXACT_LIMIT: u64 = 1 << 53;
/// Slack when rounding the feasible interval of a coefficient to integers.
const INTERVAL_SLACK: f64 = 1e-6;
/// Longest candidate list reported in an ambiguity error.
const MAX_REPORTED: u64 = 64;

/// `sigma_k(D)` as a polynomial in `z` with nonnegative integer coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetricPolynomial {
    pub k: usize,
    #[serde(with = "decimal_strings")]
    pub coeffs: Vec<BigUint>,
}

impl SymmetricPolynomial {
    pub fn new(k: usize, coeffs: Vec<BigUint>) -> Self {
        Self { k, coeffs }
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|c| !c.is_zero())
    }

    /// Floating-point evaluation.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in self.coeffs.iter().rev() {
            acc = acc * z + c.to_f64().unwrap_or(f64::INFINITY);
        }
        acc
    }

    /// Exact evaluation at a nonnegative integer.
    pub fn eval_at(&self, z: &BigUint) -> BigUint {
        let mut acc = BigUint::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * z + c;
        }
        acc
    }
}

mod decimal_strings {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigUint], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|c| c.to_str_radix(10)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigUint>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| {
                BigUint::parse_bytes(s.as_bytes(), 10)
                    .ok_or_else(|| serde::de::Error::custom(format!("bad coefficient {s:?}")))
            })
            .collect()
    }
}

/// An estimate of `sigma_k` at one point. The residual bound at this point
/// is `tol * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaPoint {
    #[serde(with = "crate::model::complex_pair")]
    pub z: Complex64,
    #[serde(with = "crate::model::complex_pair")]
    pub value: Complex64,
    pub scale: f64,
}

impl SigmaPoint {
    pub fn new(z: Complex64, value: Complex64) -> Self {
        Self { z, value, scale: 1.0 }
    }
}

/// Linear feasibility question over `num_vars` coefficients in `[0, box_upper]`.
/// Each row `(a, b)` reads `a . t <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityProblem {
    pub num_vars: usize,
    pub equality_fixes: BTreeMap<usize, u64>,
    pub integral_index: (usize, u64),
    pub box_upper: f64,
    pub constraint_rows: Vec<(Vec<f64>, f64)>,
}

struct Reduced {
    free: Vec<usize>,
    rows: Vec<(Vec<f64>, f64)>,
}

fn reduce(
    num_vars: usize,
    fixed: &BTreeMap<usize, f64>,
    rows: &[(Vec<f64>, f64)],
) -> Result<Reduced> {
    if let Some((&i, _)) = fixed.iter().find(|(&i, _)| i >= num_vars) {
        return param(format!("fixed index {i} outside {num_vars} variables"));
    }
    let free: Vec<usize> = (0..num_vars).filter(|i| !fixed.contains_key(i)).collect();
    let mut out = Vec::with_capacity(rows.len());
    for (a, b) in rows {
        if a.len() != num_vars {
            return param("constraint row width differs from the variable count");
        }
        if !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
            return param("constraint rows must be finite");
        }
        let shift: f64 = fixed.iter().map(|(&i, &v)| a[i] * v).sum();
        out.push((free.iter().map(|&j| a[j]).collect(), b - shift));
    }
    Ok(Reduced { free, rows: out })
}

fn program(red: &Reduced, upper: f64) -> LinearProgram {
    let mut lp = LinearProgram::new(red.free.len());
    lp.upper = vec![Some(upper); red.free.len()];
    for (a, b) in &red.rows {
        lp.push(Constraint::le(a.clone(), *b));
    }
    lp
}

/// Whether some real assignment meets every fix, the box and every row.
pub fn feasible(problem: &FeasibilityProblem) -> Result<bool> {
    if !(problem.box_upper >= 0.0 && problem.box_upper.is_finite()) {
        return param("box bound must be finite and nonnegative");
    }
    let mut fixed: BTreeMap<usize, f64> =
        problem.equality_fixes.iter().map(|(&i, &v)| (i, v as f64)).collect();
    let (ii, iv) = problem.integral_index;
    if let Some(&prev) = fixed.get(&ii) {
        if prev != iv as f64 {
            return Ok(false);
        }
    }
    fixed.insert(ii, iv as f64);
    if fixed.values().any(|&v| v > problem.box_upper) {
        return Ok(false);
    }
    let red = reduce(problem.num_vars, &fixed, &problem.constraint_rows)?;
    Ok(!matches!(lp::solve(&program(&red, problem.box_upper))?, LpOutcome::Infeasible))
}

/// `binom(ell, k) * n^k`, the largest possible coefficient of `sigma_k`.
pub fn coefficient_bound(ell: usize, k: usize, n: usize) -> BigUint {
    if k > ell {
        return BigUint::zero();
    }
    let mut b = BigUint::from(1u32);
    for i in 0..k {
        b = b * BigUint::from(ell - i) / BigUint::from(i + 1);
    }
    b * BigUint::from(n).pow(k as u32)
}

fn residual_rows(points: &[SigmaPoint], degree: usize, tol: f64) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut rows = Vec::with_capacity(4 * points.len());
    for pt in points {
        if !(pt.scale > 0.0 && pt.scale.is_finite()) {
            return param("point scales must be positive");
        }
        let bound = tol * pt.scale;
        let mut pw = Complex64::new(1.0, 0.0);
        let mut re = Vec::with_capacity(degree + 1);
        let mut im = Vec::with_capacity(degree + 1);
        for _ in 0..=degree {
            re.push(pw.re);
            im.push(pw.im);
            pw *= pt.z;
        }
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        rows.push((neg(&re), bound - pt.value.re));
        rows.push((re, bound + pt.value.re));
        rows.push((neg(&im), bound - pt.value.im));
        rows.push((im, bound + pt.value.im));
    }
    Ok(rows)
}

fn checked_bound(params: &ProblemParams, k: usize) -> Result<u64> {
    let b = coefficient_bound(params.ell(), k, params.n());
    match b.to_u64() {
        Some(v) if v < EXACT_LIMIT => Ok(v),
        _ => param(format!("coefficient bound {b} is too large for exact programs")),
    }
}

/// Feasible range of `t_i` given the known prefix, or `None` if empty.
fn coefficient_interval(
    index: usize,
    known: &[u64],
    rows: &[(Vec<f64>, f64)],
    degree: usize,
    bound: u64,
) -> Result<Option<(f64, f64)>> {
    let fixed: BTreeMap<usize, f64> = known.iter().enumerate().map(|(i, &v)| (i, v as f64)).collect();
    let red = reduce(degree + 1, &fixed, rows)?;
    let target = red
        .free
        .iter()
        .position(|&j| j == index)
        .expect("target index is free");
    let mut lp = program(&red, bound as f64);
    lp.objective[target] = 1.0;
    let lo = match lp::solve(&lp)? {
        LpOutcome::Optimal { value, .. } => value,
        LpOutcome::Infeasible => return Ok(None),
        LpOutcome::Unbounded => return Err(Error::Internal("bounded program reported unbounded".into())),
    };
    lp.objective[target] = -1.0;
    let hi = match lp::solve(&lp)? {
        LpOutcome::Optimal { value, .. } => -value,
        LpOutcome::Infeasible => return Ok(None),
        LpOutcome::Unbounded => return Err(Error::Internal("bounded program reported unbounded".into())),
    };
    Ok(Some((lo, hi)))
}

/// The unique integer `t_i` consistent with the known prefix and the
/// per-point residual bounds. Every `P(z; x)` is divisible by `z`, so
/// `t_i = 0` for `i < k` without solving anything.
pub fn recover_coefficient(
    k: usize,
    index: usize,
    known: &[u64],
    sigma_points: &[SigmaPoint],
    tol: f64,
    params: &ProblemParams,
) -> Result<u64> {
    let degree = k * params.n();
    if k == 0 || k > params.ell() {
        return param(format!("sigma_{k} is outside 1..={}", params.ell()));
    }
    if index > degree || known.len() != index {
        return param(format!("index {index} with {} known coefficients", known.len()));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return param("tolerance must be positive");
    }
    if sigma_points.is_empty() {
        return param("no usable points");
    }
    let bound = checked_bound(params, k)?;
    if index < k {
        return Ok(0);
    }
    let rows = residual_rows(sigma_points, degree, tol)?;
    coefficient_from_rows(k, index, known, &rows, degree, bound)
}

fn coefficient_from_rows(
    k: usize,
    index: usize,
    known: &[u64],
    rows: &[(Vec<f64>, f64)],
    degree: usize,
    bound: u64,
) -> Result<u64> {
    let Some((lo, hi)) = coefficient_interval(index, known, rows, degree, bound)? else {
        return Err(Error::NoSolution { k, index });
    };
    let first = (lo - INTERVAL_SLACK).ceil().max(0.0) as u64;
    let last = ((hi + INTERVAL_SLACK).floor().max(0.0) as u64).min(bound);
    let fixes: BTreeMap<usize, u64> = known.iter().copied().enumerate().collect();
    let mut found = Vec::new();
    let mut c = first;
    while c <= last && (found.len() as u64) < MAX_REPORTED {
        let problem = FeasibilityProblem {
            num_vars: degree + 1,
            equality_fixes: fixes.clone(),
            integral_index: (index, c),
            box_upper: bound as f64,
            constraint_rows: rows.to_vec(),
        };
        if feasible(&problem)? {
            found.push(c);
        }
        c += 1;
    }
    match found.len() {
        0 => Err(Error::NoSolution { k, index }),
        1 => Ok(found[0]),
        _ => Err(Error::Ambiguous { k, index, candidates: found }),
    }
}

/// All coefficients of `sigma_k`, lowest index first.
pub fn recover_polynomial(
    k: usize,
    sigma_points: &[SigmaPoint],
    tol: f64,
    params: &ProblemParams,
) -> Result<SymmetricPolynomial> {
    if sigma_points.is_empty() {
        return param("no usable points");
    }
    if k == 0 || k > params.ell() {
        return param(format!("sigma_{k} is outside 1..={}", params.ell()));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return param("tolerance must be positive");
    }
    let degree = k * params.n();
    let bound = checked_bound(params, k)?;
    let rows = residual_rows(sigma_points, degree, tol)?;
    let mut known: Vec<u64> = vec![0; k];
    for index in k..=degree {
        let t = coefficient_from_rows(k, index, &known, &rows, degree, bound)?;
        known.push(t);
    }
    Ok(SymmetricPolynomial::new(k, known.into_iter().map(BigUint::from).collect()))
}
