//! Brute-force ground truth: enumerated channel laws, exact moments and
//! exact symmetric polynomials.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_complex::Complex64;
use num_traits::Zero;

use crate::coeffs::SymmetricPolynomial;
use crate::error::{param, Result};
use crate::estimator::{GPlan, MomentEntry, MomentEstimates};
use crate::model::{eval_poly, power_sum, BitString, SparseDistribution};
use crate::zgrid::GridPoint;

const LAW_MAX_N: usize = 16;
const EXPECTATION_MAX_N: usize = 12;

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ComplexSum {
    re: CompensatedSum,
    im: CompensatedSum,
}

impl ComplexSum {
    fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

/// Probability of every padded output, keyed by bits.
pub type ExactTraceLaw = BTreeMap<Vec<u8>, f64>;

/// Probability of every (padded output, retained length) pair.
pub type ExactTraceLawWithLengths = BTreeMap<(Vec<u8>, usize), f64>;

fn retention_patterns(n: usize) -> impl Iterator<Item = u32> {
    0..(1u32 << n)
}

/// Enumerates all `2^n` retention subsets.
pub fn exact_trace_law_with_lengths(x: &BitString, p: f64) -> Result<ExactTraceLawWithLengths> {
    let n = x.len();
    if n > LAW_MAX_N {
        return param(format!("exact laws are limited to n <= {LAW_MAX_N}"));
    }
    if !(p > 0.0 && p < 1.0) {
        return param(format!("retention probability {p} outside (0,1)"));
    }
    let mut acc: BTreeMap<(Vec<u8>, usize), CompensatedSum> = BTreeMap::new();
    for mask in retention_patterns(n) {
        let kept = mask.count_ones() as i32;
        let prob = p.powi(kept) * (1.0 - p).powi(n as i32 - kept);
        let mut bits: Vec<u8> = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| x.bits()[i])
            .collect();
        bits.resize(n, 0);
        acc.entry((bits, kept as usize)).or_default().add(prob);
    }
    Ok(acc.into_iter().map(|(k, v)| (k, v.value())).collect())
}

/// Law of the padded output alone.
pub fn exact_trace_law(x: &BitString, p: f64) -> Result<ExactTraceLaw> {
    let mut acc: BTreeMap<Vec<u8>, CompensatedSum> = BTreeMap::new();
    for ((bits, _), prob) in exact_trace_law_with_lengths(x, p)? {
        acc.entry(bits).or_default().add(prob);
    }
    Ok(acc.into_iter().map(|(k, v)| (k, v.value())).collect())
}

/// Mixture of the per-string laws.
pub fn exact_mixture_law(d: &SparseDistribution, p: f64) -> Result<ExactTraceLaw> {
    let mut acc: BTreeMap<Vec<u8>, CompensatedSum> = BTreeMap::new();
    for (x, a) in d.iter() {
        for (bits, prob) in exact_trace_law(x, p)? {
            acc.entry(bits).or_default().add(a * prob);
        }
    }
    Ok(acc.into_iter().map(|(k, v)| (k, v.value())).collect())
}

/// Channel expectation of `g_m` by full enumeration.
pub fn exact_g_expectation(x: &BitString, z: Complex64, m: usize, p: f64) -> Result<Complex64> {
    if x.len() > EXPECTATION_MAX_N {
        return param(format!("exact expectations are limited to n <= {EXPECTATION_MAX_N}"));
    }
    if m == 0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let plan = GPlan::new(z, m, p)?;
    let mut acc = ComplexSum::default();
    for (bits, prob) in exact_trace_law(x, p)? {
        acc.add(plan.eval(&bits) * prob);
    }
    Ok(acc.value())
}

fn subsets(len: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, len: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..len {
            cur.push(i);
            rec(i + 1, len, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, len, k, &mut Vec::new(), &mut out);
    out
}

/// `sigma_1 .. sigma_l` at `z`, by expanding over subsets of the support.
pub fn exact_sigma(d: &SparseDistribution, z: Complex64) -> Vec<Complex64> {
    let u: Vec<Complex64> = d.support().iter().map(|x| eval_poly(x, z)).collect();
    (1..=u.len())
        .map(|k| {
            subsets(u.len(), k)
                .iter()
                .map(|s| s.iter().map(|&i| u[i]).product::<Complex64>())
                .sum()
        })
        .collect()
}

fn poly_mul(a: &[BigUint], b: &[BigUint]) -> Vec<BigUint> {
    let mut out = vec![BigUint::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn string_poly(x: &BitString) -> Vec<BigUint> {
    std::iter::once(BigUint::zero())
        .chain(x.bits().iter().map(|&b| BigUint::from(b)))
        .collect()
}

/// Exact integer polynomials `sigma_1 .. sigma_l` of a set of strings, each
/// padded to degree `k n`.
pub fn symmetric_polynomials(support: &[BitString]) -> Vec<SymmetricPolynomial> {
    let n = support.first().map_or(0, |x| x.len());
    let polys: Vec<Vec<BigUint>> = support.iter().map(string_poly).collect();
    (1..=support.len())
        .map(|k| {
            let mut total = vec![BigUint::zero(); k * n + 1];
            for s in subsets(support.len(), k) {
                let prod = s
                    .iter()
                    .fold(vec![BigUint::from(1u32)], |acc, &i| poly_mul(&acc, &polys[i]));
                for (t, c) in total.iter_mut().zip(prod) {
                    *t += c;
                }
            }
            SymmetricPolynomial::new(k, total)
        })
        .collect()
}

/// Moment table with exact power sums in place of sample means.
pub fn exact_moments(d: &SparseDistribution, grid: &[GridPoint], k_max: usize) -> Result<MomentEstimates> {
    let entries = grid
        .iter()
        .map(|g| (0..=k_max).map(|k| MomentEntry::exact(power_sum(d, g.z, k))).collect())
        .collect();
    MomentEstimates::new(grid.to_vec(), k_max, entries)
}
