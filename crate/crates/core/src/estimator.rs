//! Unbiased single-trace estimators of `P(z; x)^m` and their sample means.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{Trace, TraceHistogram};
use crate::error::{param, Error, Result};
use crate::model::ProblemParams;
use crate::zgrid::{GridKind, GridPoint};

/// Weights below this magnitude count as zero.
pub const SINGULAR_WEIGHT: f64 = 1e-12;

/// An ordered tuple of positive parts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Composition(Vec<usize>);

impl Composition {
    pub fn parts(&self) -> &[usize] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// `m! / (b_1! ... b_k!)`, exact or an error on overflow.
    pub fn multinomial(&self) -> Result<u128> {
        let mut acc: u128 = 1;
        let mut seen = 0usize;
        for &b in &self.0 {
            seen += b;
            acc = acc
                .checked_mul(binomial_u128(seen, b)?)
                .ok_or_else(|| overflow(&self.0))?;
        }
        Ok(acc)
    }
}

fn overflow(parts: &[usize]) -> Error {
    Error::Parameter(format!("multinomial coefficient of {parts:?} overflows 128 bits"))
}

fn binomial_u128(n: usize, k: usize) -> Result<u128> {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c
            .checked_mul((n - i) as u128)
            .ok_or_else(|| Error::Parameter(format!("binomial({n},{k}) overflows")))?
            / (i as u128 + 1);
    }
    Ok(c)
}

/// All `2^(m-1)` compositions of `m`, lexicographic by parts.
pub fn compositions(m: usize) -> Result<Vec<Composition>> {
    if m == 0 {
        return param("compositions need m >= 1");
    }
    fn extend(rest: usize, prefix: &mut Vec<usize>, out: &mut Vec<Composition>) {
        if rest == 0 {
            out.push(Composition(prefix.clone()));
            return;
        }
        for first in 1..=rest {
            prefix.push(first);
            extend(rest - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(1 << (m - 1).min(20));
    extend(m, &mut Vec::new(), &mut out);
    Ok(out)
}

/// Gap-weighted chain sum
/// `sum_{i_1 < .. < i_k} x_{i_1} .. x_{i_k} w_1^{i_1} w_2^{i_2 - i_1} .. w_k^{i_k - i_{k-1}}`
/// in `O(n k)` time.
pub fn f_sum(bits: &[u8], w: &[Complex64]) -> Complex64 {
    let n = bits.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut prev = vec![zero; n + 1];
    prev[0] = Complex64::new(1.0, 0.0);
    let mut cur = vec![zero; n + 1];
    for &wr in w {
        let mut acc = zero;
        cur[0] = zero;
        for j in 1..=n {
            acc = wr * (acc + prev[j - 1]);
            cur[j] = if bits[j - 1] == 1 { acc } else { zero };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    if w.is_empty() {
        return Complex64::new(1.0, 0.0);
    }
    prev[1..].iter().sum()
}

struct Term {
    scale: Complex64,
    w: Vec<Complex64>,
}

/// Precomputed compositions and weights for `g_m` at one point.
pub struct GPlan {
    m: usize,
    terms: Vec<Term>,
}

impl GPlan {
    pub fn new(z: Complex64, m: usize, p: f64) -> Result<Self> {
        let q = 1.0 - p;
        let mut terms = Vec::new();
        for comp in compositions(m)? {
            let parts = comp.parts();
            let k = parts.len();
            let mut w = Vec::with_capacity(k);
            let mut tail = 0;
            for r in (0..k).rev() {
                tail += parts[r];
                let wr = (z.powu(tail as u32) - q) / p;
                if wr.norm() < SINGULAR_WEIGHT {
                    return Err(Error::SingularPoint {
                        composition: parts.to_vec(),
                    });
                }
                w.push(wr);
            }
            w.reverse();
            let exponent: usize = parts.iter().enumerate().map(|(r, b)| (r + 1) * b).sum();
            let denom: Complex64 = w.iter().product();
            let mult = comp.multinomial()? as f64;
            let scale = z.powu(exponent as u32) * (mult * p.powi(-(k as i32))) / denom;
            terms.push(Term { scale, w });
        }
        Ok(Self { m, terms })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eval(&self, bits: &[u8]) -> Complex64 {
        self.terms.iter().map(|t| t.scale * f_sum(bits, &t.w)).sum()
    }
}

/// `g_m(trace, z)`, whose channel expectation is `P(z; x)^m`.
pub fn g_estimate(trace: &Trace, z: Complex64, m: usize, params: &ProblemParams) -> Result<Complex64> {
    if trace.len() != params.n() {
        return param("trace length differs from n");
    }
    if m == 0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    Ok(GPlan::new(z, m, params.p())?.eval(trace.bits()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    #[serde(with = "crate::model::complex_pair")]
    pub mean: Complex64,
    pub count: u64,
    /// Standard error of the mean; zero for exact values.
    pub std_err: f64,
}

impl MomentEntry {
    pub fn exact(mean: Complex64) -> Self {
        Self {
            mean,
            count: 0,
            std_err: 0.0,
        }
    }
}

/// A grid point removed from the estimates because some weight vanished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedPoint {
    pub point: GridPoint,
    pub composition: Vec<usize>,
}

/// Sample means of `g_k` for `k = 0..=k_max` at every usable point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    points: Vec<GridPoint>,
    k_max: usize,
    entries: Vec<Vec<MomentEntry>>,
    dropped: Vec<DroppedPoint>,
}

impl MomentEstimates {
    pub fn new(points: Vec<GridPoint>, k_max: usize, entries: Vec<Vec<MomentEntry>>) -> Result<Self> {
        if points.len() != entries.len() {
            return param("one entry row per point is required");
        }
        if entries.iter().any(|row| row.len() != k_max + 1) {
            return param("every point needs entries for k = 0..=k_max");
        }
        let mut counts = entries.iter().flatten().map(|e| e.count);
        if let Some(first) = counts.next() {
            if counts.any(|c| c != first) {
                return param("moment counts must agree");
            }
        }
        Ok(Self {
            points,
            k_max,
            entries,
            dropped: Vec::new(),
        })
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn entry(&self, point: usize, k: usize) -> &MomentEntry {
        &self.entries[point][k]
    }

    pub fn row(&self, point: usize) -> &[MomentEntry] {
        &self.entries[point]
    }

    pub fn dropped(&self) -> &[DroppedPoint] {
        &self.dropped
    }

    pub fn sample_count(&self) -> u64 {
        self.entries.first().map_or(0, |r| r[0].count)
    }

    /// Flat records, one per (point, k).
    pub fn to_records(&self) -> Vec<MomentRecord> {
        self.points
            .iter()
            .zip(&self.entries)
            .flat_map(|(g, row)| {
                row.iter().enumerate().map(move |(k, e)| MomentRecord {
                    z: g.z,
                    grid_kind: g.kind,
                    k,
                    mean: e.mean,
                    count: e.count,
                    std_err: Some(e.std_err),
                })
            })
            .collect()
    }

    /// Inverse of [`MomentEstimates::to_records`]; points keep their order of
    /// first appearance.
    pub fn from_records(records: &[MomentRecord]) -> Result<Self> {
        let mut points: Vec<GridPoint> = Vec::new();
        let mut rows: Vec<Vec<Option<MomentEntry>>> = Vec::new();
        for r in records {
            if !(r.z.re.is_finite() && r.z.im.is_finite() && r.mean.re.is_finite() && r.mean.im.is_finite()) {
                return param("moment records must be finite");
            }
            let pos = match points.iter().position(|g| g.z == r.z && g.kind == r.grid_kind) {
                Some(pos) => pos,
                None => {
                    points.push(GridPoint {
                        z: r.z,
                        kind: r.grid_kind,
                        index: points.len(),
                    });
                    rows.push(Vec::new());
                    points.len() - 1
                }
            };
            let row = &mut rows[pos];
            if row.len() <= r.k {
                row.resize(r.k + 1, None);
            }
            if row[r.k].is_some() {
                return param(format!("duplicate record for k={} at z={}", r.k, r.z));
            }
            row[r.k] = Some(MomentEntry {
                mean: r.mean,
                count: r.count,
                std_err: r.std_err.unwrap_or(0.0),
            });
        }
        let k_max = rows.iter().map(|r| r.len()).max().unwrap_or(1).saturating_sub(1);
        let entries = rows
            .into_iter()
            .map(|row| {
                if row.len() != k_max + 1 {
                    return param("every point needs the same range of k");
                }
                row.into_iter()
                    .map(|e| e.ok_or_else(|| Error::Parameter("missing k entry".into())))
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, k_max, entries)
    }
}

/// One line of the moment-estimate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    #[serde(with = "crate::model::complex_pair")]
    pub z: Complex64,
    pub grid_kind: GridKind,
    pub k: usize,
    #[serde(with = "crate::model::complex_pair")]
    pub mean: Complex64,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_err: Option<f64>,
}

/// Row of moments at one point, or the composition that made it singular.
type PointRow = std::result::Result<Vec<MomentEntry>, Vec<usize>>;

fn point_moments(hist: &TraceHistogram, z: Complex64, k_max: usize, p: f64) -> Result<PointRow> {
    let plans = match (1..=k_max).map(|m| GPlan::new(z, m, p)).collect::<Result<Vec<_>>>() {
        Ok(plans) => plans,
        Err(Error::SingularPoint { composition }) => return Ok(Err(composition)),
        Err(e) => return Err(e),
    };
    let total = hist.total();
    let nf = total as f64;
    let values: Vec<(u64, Vec<Complex64>)> = hist
        .iter()
        .map(|(bits, c)| (c, plans.iter().map(|plan| plan.eval(bits)).collect()))
        .collect();
    let mut row = vec![MomentEntry {
        mean: Complex64::new(1.0, 0.0),
        count: total,
        std_err: 0.0,
    }];
    for k in 0..k_max {
        let mean = values
            .iter()
            .map(|(c, g)| g[k] * *c as f64)
            .sum::<Complex64>()
            / nf;
        let spread: f64 = values
            .iter()
            .map(|(c, g)| (g[k] - mean).norm_sqr() * *c as f64)
            .sum();
        let std_err = if total > 1 {
            (spread / (nf - 1.0) / nf).sqrt()
        } else {
            0.0
        };
        row.push(MomentEntry {
            mean,
            count: total,
            std_err,
        });
    }
    Ok(Ok(row))
}

/// Moment estimates from a trace histogram. Points where some weight
/// vanishes are dropped and listed in [`MomentEstimates::dropped`].
pub fn accumulate_histogram(
    hist: &TraceHistogram,
    grid: &[GridPoint],
    k_max: usize,
    params: &ProblemParams,
) -> Result<MomentEstimates> {
    if hist.total() == 0 {
        return param("no traces to average");
    }
    if k_max == 0 {
        return param("k_max must be at least 1");
    }
    if hist.n() != params.n() {
        return param("trace length differs from n");
    }
    let rows: Vec<PointRow> = grid
        .par_iter()
        .map(|g| point_moments(hist, g.z, k_max, params.p()))
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    let mut entries = Vec::new();
    let mut dropped = Vec::new();
    for (g, row) in grid.iter().zip(rows) {
        match row {
            Ok(row) => {
                points.push(*g);
                entries.push(row);
            }
            Err(composition) => dropped.push(DroppedPoint { point: *g, composition }),
        }
    }
    let mut est = MomentEstimates::new(points, k_max, entries)?;
    est.dropped = dropped;
    Ok(est)
}

/// Moment estimates from the first `sample_count` traces.
pub fn accumulate_moments<'a, I>(
    traces: I,
    grid: &[GridPoint],
    k_max: usize,
    params: &ProblemParams,
    sample_count: u64,
) -> Result<MomentEstimates>
where
    I: IntoIterator<Item = &'a Trace>,
{
    if sample_count == 0 {
        return param("sample count must be at least 1");
    }
    let mut hist = TraceHistogram::new(params.n());
    for t in traces.into_iter().take(sample_count as usize) {
        hist.insert(t)?;
    }
    if hist.total() < sample_count {
        return param(format!(
            "only {} traces available, {} requested",
            hist.total(),
            sample_count
        ));
    }
    accumulate_histogram(&hist, grid, k_max, params)
}
