//! Problem parameters, bit strings and sparse mixtures.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Sizes and rates shared by every stage of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ProblemParams {
    n: usize,
    ell: usize,
    p: f64,
    q: f64,
    eps: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    n: usize,
    ell: usize,
    p: f64,
    eps: f64,
}

impl TryFrom<RawParams> for ProblemParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        ProblemParams::new(r.n, r.ell, r.p, r.eps)
    }
}

impl From<ProblemParams> for RawParams {
    fn from(p: ProblemParams) -> Self {
        RawParams {
            n: p.n,
            ell: p.ell,
            p: p.p,
            eps: p.eps,
        }
    }
}

impl ProblemParams {
    pub fn new(n: usize, ell: usize, p: f64, eps: f64) -> Result<Self> {
        if n == 0 {
            return param("string length must be positive");
        }
        if ell == 0 {
            return param("sparsity bound must be positive");
        }
        if !(p > 0.0 && p < 1.0) {
            return param(format!("retention probability {p} outside (0,1)"));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return param(format!("target error {eps} outside (0,1)"));
        }
        Ok(Self {
            n,
            ell,
            p,
            q: 1.0 - p,
            eps,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn ell(&self) -> usize {
        self.ell
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Same parameters with a different sparsity bound.
    pub fn with_ell(&self, ell: usize) -> Result<Self> {
        Self::new(self.n, ell, self.p, self.eps)
    }

    /// Same parameters with a different retention probability.
    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::new(self.n, self.ell, p, self.eps)
    }

    pub fn check_distribution(&self, d: &SparseDistribution) -> Result<()> {
        if d.n() != self.n {
            return param(format!("distribution has n={}, expected {}", d.n(), self.n));
        }
        if d.len() > self.ell {
            return param(format!(
                "distribution has {} strings, sparsity bound is {}",
                d.len(),
                self.ell
            ));
        }
        Ok(())
    }
}

/// A binary string `x_1 .. x_n`; position 0 of the vector holds `x_1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitString(Vec<u8>);

impl BitString {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return param("bit strings hold only 0 and 1");
        }
        Ok(Self(bits))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    /// All strings of length `n` in lexicographic order.
    pub fn all(n: usize) -> impl Iterator<Item = BitString> {
        assert!(n < 64, "enumeration limited to n < 64");
        (0u64..(1u64 << n)).map(move |v| {
            BitString((0..n).map(|i| ((v >> (n - 1 - i)) & 1) as u8).collect())
        })
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitString {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Parameter(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(BitString)
    }
}

impl Serialize for BitString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Evaluates `P(z; x) = sum_i x_i z^i` by Horner's rule.
pub fn eval_poly(x: &BitString, z: Complex64) -> Complex64 {
    eval_bits(x.bits(), z)
}

pub(crate) fn eval_bits(bits: &[u8], z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &b in bits.iter().rev() {
        acc = (acc + f64::from(b)) * z;
    }
    acc
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A mixture over at most a handful of distinct strings of common length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionFile", into = "DistributionFile")]
pub struct SparseDistribution {
    n: usize,
    support: Vec<BitString>,
    weights: Vec<f64>,
}

/// On-disk layout of a distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionFile {
    pub n: usize,
    pub support: Vec<BitString>,
    pub weights: Vec<f64>,
}

impl TryFrom<DistributionFile> for SparseDistribution {
    type Error = Error;
    fn try_from(f: DistributionFile) -> Result<Self> {
        SparseDistribution::new(f.n, f.support, f.weights)
    }
}

impl From<SparseDistribution> for DistributionFile {
    fn from(d: SparseDistribution) -> Self {
        DistributionFile {
            n: d.n,
            support: d.support,
            weights: d.weights,
        }
    }
}

impl SparseDistribution {
    pub fn new(n: usize, support: Vec<BitString>, weights: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return param("string length must be positive");
        }
        if support.is_empty() {
            return param("empty support");
        }
        if support.len() != weights.len() {
            return param("support and weights differ in length");
        }
        if let Some(x) = support.iter().find(|x| x.len() != n) {
            return param(format!("string {x} does not have length {n}"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return param("weights must be positive and finite");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return param(format!("weights sum to {total}, not 1"));
        }
        let mut pairs: Vec<(BitString, f64)> = support.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return param("support strings must be distinct");
        }
        let (support, weights) = pairs.into_iter().unzip();
        Ok(Self {
            n,
            support,
            weights,
        })
    }

    pub fn point_mass(x: BitString) -> Self {
        Self {
            n: x.len(),
            support: vec![x],
            weights: vec![1.0],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn len(&self) -> usize {
        self.support.len()
    }
    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
    pub fn support(&self) -> &[BitString] {
        &self.support
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BitString, f64)> {
        self.support.iter().zip(self.weights.iter().copied())
    }

    pub fn prob(&self, x: &BitString) -> f64 {
        self.support
            .binary_search(x)
            .map(|i| self.weights[i])
            .unwrap_or(0.0)
    }
}

/// Half the l1 distance between two mixtures.
pub fn tv_distance(d0: &SparseDistribution, d1: &SparseDistribution) -> Result<f64> {
    if d0.n() != d1.n() {
        return param("distributions have different string lengths");
    }
    let mut diff: BTreeMap<&BitString, f64> = BTreeMap::new();
    for (x, a) in d0.iter() {
        *diff.entry(x).or_default() += a;
    }
    for (x, a) in d1.iter() {
        *diff.entry(x).or_default() -= a;
    }
    let tv = 0.5 * diff.values().map(|v| v.abs()).sum::<f64>();
    Ok(tv.clamp(0.0, 1.0))
}

/// `b_k = sum_i a_i P(z; x_i)^k`.
pub fn power_sum(d: &SparseDistribution, z: Complex64, k: usize) -> Complex64 {
    if k == 0 {
        return Complex64::new(1.0, 0.0);
    }
    d.iter()
        .map(|(x, a)| eval_poly(x, z).powu(k as u32) * a)
        .sum()
}

pub(crate) mod complex_pair {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

pub(crate) mod complex_pairs {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(zs: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        zs.iter()
            .map(|z| [z.re, z.im])
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let raw = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(raw.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eval_poly_examples() {
        assert_eq!(eval_poly(&bs("000"), c(0.3, -0.7)), c(0.0, 0.0));
        assert_eq!(eval_poly(&bs("101"), c(1.0, 0.0)), c(2.0, 0.0));
        assert_eq!(eval_poly(&bs("11"), c(2.0, 0.0)), c(6.0, 0.0));
    }

    #[test]
    fn eval_poly_first_bit_is_linear_term() {
        assert_eq!(eval_poly(&bs("10"), c(3.0, 0.0)), c(3.0, 0.0));
        assert_eq!(eval_poly(&bs("01"), c(3.0, 0.0)), c(9.0, 0.0));
    }

    #[test]
    fn tv_examples() {
        let one = SparseDistribution::point_mass(bs("1"));
        let zero = SparseDistribution::point_mass(bs("0"));
        let half = SparseDistribution::new(1, vec![bs("1"), bs("0")], vec![0.5, 0.5]).unwrap();
        assert_eq!(tv_distance(&one, &one).unwrap(), 0.0);
        assert_eq!(tv_distance(&one, &zero).unwrap(), 1.0);
        assert_eq!(tv_distance(&half, &one).unwrap(), 0.5);
        let other = SparseDistribution::point_mass(bs("11"));
        assert!(matches!(tv_distance(&one, &other), Err(Error::Parameter(_))));
    }

    #[test]
    fn power_sum_examples() {
        let d = SparseDistribution::new(2, vec![bs("10"), bs("01")], vec![0.5, 0.5]).unwrap();
        assert_eq!(power_sum(&d, c(0.2, 0.9), 0), c(1.0, 0.0));
        let single = SparseDistribution::point_mass(bs("1"));
        assert_eq!(power_sum(&single, c(1.0, 0.0), 3), c(1.0, 0.0));
        // P-values 1 and 2 at z = 1 come from "10" and "11".
        let d = SparseDistribution::new(2, vec![bs("10"), bs("11")], vec![0.5, 0.5]).unwrap();
        assert!((power_sum(&d, c(1.0, 0.0), 3) - c(4.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn distribution_validation() {
        assert!(SparseDistribution::new(2, vec![bs("10"), bs("10")], vec![0.5, 0.5]).is_err());
        assert!(SparseDistribution::new(2, vec![bs("10")], vec![0.9]).is_err());
        assert!(SparseDistribution::new(2, vec![bs("10"), bs("01")], vec![1.0, 0.0]).is_err());
        assert!(SparseDistribution::new(2, vec![bs("101")], vec![1.0]).is_err());
        let d = SparseDistribution::new(2, vec![bs("10"), bs("01")], vec![0.3, 0.7]).unwrap();
        assert_eq!(d.support(), &[bs("01"), bs("10")]);
        assert_eq!(d.weights(), &[0.7, 0.3]);
    }

    #[test]
    fn distribution_json_round_trip() {
        let d = SparseDistribution::new(3, vec![bs("101"), bs("010")], vec![0.25, 0.75]).unwrap();
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(text, r#"{"n":3,"support":["010","101"],"weights":[0.75,0.25]}"#);
        let back: SparseDistribution = serde_json::from_str(&text).unwrap();
        assert_eq!(back, d);
        let bad = r#"{"n":3,"support":["010"],"weights":[0.5]}"#;
        assert!(serde_json::from_str::<SparseDistribution>(bad).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(ProblemParams::new(0, 1, 0.5, 0.1).is_err());
        assert!(ProblemParams::new(4, 0, 0.5, 0.1).is_err());
        assert!(ProblemParams::new(4, 1, 1.0, 0.1).is_err());
        assert!(ProblemParams::new(4, 1, 0.5, 0.0).is_err());
        let p = ProblemParams::new(4, 2, 0.25, 0.1).unwrap();
        assert_eq!(p.q(), 0.75);
    }

    #[test]
    fn enumerate_all_strings() {
        let all: Vec<String> = BitString::all(2).map(|x| x.to_string()).collect();
        assert_eq!(all, ["00", "01", "10", "11"]);
    }
}
