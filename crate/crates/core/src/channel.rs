//! Deletion channel sampling and the small retention reduction.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::model::{BitString, SparseDistribution};

/// Number of consecutive draws served by one generator stream.
pub const CHUNK_LEN: u64 = 1 << 14;

/// Stream offset reserved for subsampling randomness.
const SUBSAMPLE_STREAM_BASE: u64 = 1 << 62;

/// Channel output padded with zeros to the original length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trace {
    bits: Vec<u8>,
    retained: usize,
}

impl Trace {
    pub fn new(bits: Vec<u8>, retained: usize) -> Result<Self> {
        if retained > bits.len() {
            return param("retained count exceeds trace length");
        }
        if bits.iter().any(|&b| b > 1) {
            return param("trace bits must be 0 or 1");
        }
        if bits[retained..].iter().any(|&b| b != 0) {
            return param("padding after the retained prefix must be zero");
        }
        Ok(Self { bits, retained })
    }

    /// Builds a trace from padded bits alone; the retained count becomes the
    /// shortest prefix holding every one.
    pub fn from_padded(bits: Vec<u8>) -> Result<Self> {
        let retained = bits.iter().rposition(|&b| b == 1).map_or(0, |i| i + 1);
        Self::new(bits, retained)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn retained(&self) -> usize {
        self.retained
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    p: f64,
    seed: u64,
}

impl ChannelConfig {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return param(format!("retention probability {p} outside (0,1)"));
        }
        Ok(Self { p, seed })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Generator for the given stream of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn mixture_index(d: &SparseDistribution) -> WeightedIndex<f64> {
    WeightedIndex::new(d.weights()).expect("distribution weights are positive")
}

fn pass_through<R: Rng + ?Sized>(x: &[u8], p: f64, rng: &mut R) -> Trace {
    let mut bits = Vec::with_capacity(x.len());
    for &b in x {
        if rng.gen::<f64>() < p {
            bits.push(b);
        }
    }
    let retained = bits.len();
    bits.resize(x.len(), 0);
    Trace { bits, retained }
}

/// Draws one string from `d` and sends it through the channel.
pub fn sample_trace<R: Rng + ?Sized>(d: &SparseDistribution, cfg: &ChannelConfig, rng: &mut R) -> Trace {
    let i = mixture_index(d).sample(rng);
    pass_through(d.support()[i].bits(), cfg.p, rng)
}

fn sample_chunk(d: &SparseDistribution, cfg: &ChannelConfig, chunk: u64, len: u64) -> Vec<Trace> {
    let mut rng = stream_rng(cfg.seed, chunk);
    let pick = mixture_index(d);
    (0..len)
        .map(|_| {
            let i = pick.sample(&mut rng);
            pass_through(d.support()[i].bits(), cfg.p, &mut rng)
        })
        .collect()
}

fn chunk_lengths(count: u64) -> Vec<(u64, u64)> {
    let full = count / CHUNK_LEN;
    let rest = count % CHUNK_LEN;
    let mut out: Vec<(u64, u64)> = (0..full).map(|c| (c, CHUNK_LEN)).collect();
    if rest > 0 {
        out.push((full, rest));
    }
    out
}

/// Draws `count` traces. Draw `i` always comes from stream `i / CHUNK_LEN`,
/// so the output does not depend on the number of worker threads.
pub fn sample_traces(d: &SparseDistribution, cfg: &ChannelConfig, count: u64) -> Vec<Trace> {
    chunk_lengths(count)
        .into_par_iter()
        .map(|(c, len)| sample_chunk(d, cfg, c, len))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Multiset of traces keyed by padded bits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceHistogram {
    n: usize,
    counts: BTreeMap<Vec<u8>, u64>,
    total: u64,
}

impl TraceHistogram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: BTreeMap::new(),
            total: 0,
        }
    }

    pub fn insert(&mut self, t: &Trace) -> Result<()> {
        if t.len() != self.n {
            return param(format!("trace of length {} in a histogram for n={}", t.len(), self.n));
        }
        *self.counts.entry(t.bits.clone()).or_default() += 1;
        self.total += 1;
        Ok(())
    }

    pub fn from_traces<'a, I: IntoIterator<Item = &'a Trace>>(n: usize, traces: I) -> Result<Self> {
        let mut h = Self::new(n);
        for t in traces {
            h.insert(t)?;
        }
        Ok(h)
    }

    pub fn merge(&mut self, other: TraceHistogram) {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_default() += v;
        }
        self.total += other.total;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], u64)> {
        self.counts.iter().map(|(k, &v)| (k.as_slice(), v))
    }
}

/// Draws `count` traces straight into a histogram, in parallel.
pub fn sample_histogram(d: &SparseDistribution, cfg: &ChannelConfig, count: u64) -> TraceHistogram {
    let n = d.n();
    chunk_lengths(count)
        .into_par_iter()
        .map(|(c, len)| {
            let mut h = TraceHistogram::new(n);
            for t in sample_chunk(d, cfg, c, len) {
                h.insert(&t).expect("sampled traces have length n");
            }
            h
        })
        .reduce(|| TraceHistogram::new(n), |mut a, b| {
            a.merge(b);
            a
        })
}

fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// `ln P(Bin(n, p) = k)`.
pub fn ln_binomial_pmf(n: usize, p: f64, k: usize) -> f64 {
    ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()
}

/// `P(Bin(n, p) >= t)`, summed in log space.
pub fn binomial_tail(n: usize, p: f64, t: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return param(format!("probability {p} outside (0,1)"));
    }
    if t > n {
        return param(format!("threshold {t} exceeds n={n}"));
    }
    if t == 0 {
        return Ok(1.0);
    }
    let logs: Vec<f64> = (t..=n).map(|k| ln_binomial_pmf(n, p, k)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    Ok((top + sum.ln()).exp().min(1.0))
}

/// Exponent constant `c` in `P(Bin(n,p)=t) >= P(Bin(n,n^-1/2)=t)^(c ln(1/p))`,
/// valid for `2 sqrt(n) <= t <= n` and `p < n^-1/2`.
pub const BINOMIAL_EXPONENT: f64 = 4.0;

/// Whether the point-mass comparison holds at `(n, t, p)`, in log space.
pub fn binomial_comparison_holds(n: usize, t: usize, p: f64) -> Result<bool> {
    let q = reduction_target(n);
    if !(p > 0.0 && p < q) {
        return param(format!("p={p} outside (0, n^-1/2)"));
    }
    if t > n || (t as f64) < 2.0 * (n as f64).sqrt() {
        return param(format!("t={t} outside [2 sqrt(n), n]"));
    }
    let lhs = ln_binomial_pmf(n, p, t);
    let rhs = BINOMIAL_EXPONENT * (1.0 / p).ln() * ln_binomial_pmf(n, q, t);
    Ok(lhs >= rhs)
}

/// Retention probability the reduction maps onto.
pub fn reduction_target(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

fn threshold_floor(n: usize) -> usize {
    (2.0 * (n as f64).sqrt()).ceil() as usize
}

/// Largest `t` whose tail under `Bin(n, n^-1/2)` is at least `budget`,
/// raised to `ceil(2 sqrt n)` when smaller.
pub fn choose_threshold(n: usize, budget: f64) -> Result<usize> {
    if !(budget > 0.0 && budget <= 1.0) {
        return param(format!("tail budget {budget} outside (0,1]"));
    }
    let floor = threshold_floor(n);
    if floor > n {
        return Err(Error::Threshold(format!(
            "n={n} leaves no threshold in [{floor}, {n}]"
        )));
    }
    let target = reduction_target(n);
    let mut best = 0;
    for t in (0..=n).rev() {
        if binomial_tail(n, target, t)? >= budget {
            best = t;
            break;
        }
    }
    Ok(best.max(floor))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    n: usize,
    t: usize,
}

impl SubsampleConfig {
    pub fn new(n: usize, t: usize) -> Result<Self> {
        if t > n {
            return param(format!("threshold {t} exceeds n={n}"));
        }
        if t < threshold_floor(n) {
            return param(format!("threshold {t} below 2 sqrt(n)"));
        }
        Ok(Self { n, t })
    }

    /// Unchecked variant for laws at very small `n`, where `2 sqrt(n)` may
    /// exceed the length.
    pub fn with_any_threshold(n: usize, t: usize) -> Result<Self> {
        if t == 0 || t > n {
            return param(format!("threshold {t} outside [1, {n}]"));
        }
        Ok(Self { n, t })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn target_p(&self) -> f64 {
        reduction_target(self.n)
    }
}

/// Keeps the retained bits at the given sorted positions and pads.
pub fn select_subsequence(raw: &Trace, positions: &[usize]) -> Trace {
    let mut bits: Vec<u8> = positions.iter().map(|&i| raw.bits[i]).collect();
    let retained = bits.len();
    bits.resize(raw.len(), 0);
    Trace { bits, retained }
}

/// Maps a trace at small retention onto a trace at retention `n^-1/2`
/// conditioned on length at most `t`, or discards it.
pub fn subsample_trace<R: Rng + ?Sized>(raw: &Trace, cfg: &SubsampleConfig, rng: &mut R) -> Result<Option<Trace>> {
    if raw.len() != cfg.n {
        return param("trace length differs from the reduction length");
    }
    if cfg.t > raw.len() {
        return param("threshold exceeds n");
    }
    if raw.retained < cfg.t {
        return Ok(None);
    }
    let target = cfg.target_p();
    let x = loop {
        let draw = (0..cfg.n).filter(|_| rng.gen::<f64>() < target).count();
        if draw <= cfg.t {
            break draw;
        }
    };
    let mut positions = index::sample(rng, raw.retained, x).into_vec();
    positions.sort_unstable();
    Ok(Some(select_subsequence(raw, &positions)))
}

/// Draws `count` raw traces at the channel rate and keeps the reduced ones.
pub fn sample_reduced_histogram(
    d: &SparseDistribution,
    cfg: &ChannelConfig,
    sub: &SubsampleConfig,
    count: u64,
) -> Result<TraceHistogram> {
    let n = d.n();
    let parts = chunk_lengths(count)
        .into_par_iter()
        .map(|(c, len)| {
            let mut sub_rng = stream_rng(cfg.seed, SUBSAMPLE_STREAM_BASE + c);
            let mut h = TraceHistogram::new(n);
            for raw in sample_chunk(d, cfg, c, len) {
                if let Some(t) = subsample_trace(&raw, sub, &mut sub_rng)? {
                    h.insert(&t)?;
                }
            }
            Ok(h)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = TraceHistogram::new(n);
    for h in parts {
        total.merge(h);
    }
    Ok(total)
}

/// Header of a trace file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceFileHeader {
    pub n: usize,
    pub p: f64,
    pub seed: u64,
}

pub fn write_trace_file<W: Write>(mut out: W, header: &TraceFileHeader, traces: &[Trace]) -> std::io::Result<()> {
    writeln!(out, "#n={} p={} seed={}", header.n, header.p, header.seed)?;
    for t in traces {
        let line: String = t.bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn parse_header(line: &str) -> Result<TraceFileHeader> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::CorruptInput("trace file must start with a '#' header".into()))?;
    let mut n = None;
    let mut p = None;
    let mut seed = None;
    for field in body.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::CorruptInput(format!("bad header field {field:?}")))?;
        let bad = |_| Error::CorruptInput(format!("bad header value {field:?}"));
        match key {
            "n" => n = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "p" => p = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?),
            _ => {}
        }
    }
    match (n, p, seed) {
        (Some(n), Some(p), Some(seed)) => Ok(TraceFileHeader { n, p, seed }),
        _ => Err(Error::CorruptInput("header needs n, p and seed".into())),
    }
}

/// Reads a trace file. Retained counts are not stored on disk, so each
/// trace gets the shortest prefix covering its ones.
pub fn read_trace_file<R: BufRead>(input: R) -> std::result::Result<(TraceFileHeader, Vec<Trace>), TraceFileError> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::CorruptInput("empty trace file".into()))??;
    let header = parse_header(first.trim())?;
    let mut traces = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let x: BitString = line.parse()?;
        if x.len() != header.n {
            return Err(Error::CorruptInput(format!("trace {line:?} does not have length {}", header.n)).into());
        }
        traces.push(Trace::from_padded(x.bits().to_vec())?);
    }
    Ok((header, traces))
}

/// Failure while reading a trace file.
#[derive(Debug, thiserror::Error)]
pub enum TraceFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn no_deletions_near_one() {
        let d = SparseDistribution::point_mass(bs("1101"));
        let cfg = ChannelConfig::new(1.0 - 1e-15, 3).unwrap();
        let mut rng = stream_rng(3, 0);
        for _ in 0..100 {
            let t = sample_trace(&d, &cfg, &mut rng);
            assert_eq!(t.bits(), &[1, 1, 0, 1]);
            assert_eq!(t.retained(), 4);
        }
    }

    #[test]
    fn single_retention_frequency() {
        let d = SparseDistribution::point_mass(bs("11"));
        let cfg = ChannelConfig::new(0.5, 11).unwrap();
        let traces = sample_traces(&d, &cfg, 40_000);
        let hits = traces
            .iter()
            .filter(|t| t.bits() == [1, 0] && t.retained() == 1)
            .count() as f64;
        let frac = hits / 40_000.0;
        assert!((frac - 0.5).abs() < 5.0 * (0.25f64 / 40_000.0).sqrt());
    }

    #[test]
    fn mean_retained_length() {
        let d = SparseDistribution::new(6, vec![bs("101100"), bs("000111")], vec![0.3, 0.7]).unwrap();
        let cfg = ChannelConfig::new(0.7, 5).unwrap();
        let traces = sample_traces(&d, &cfg, 100_000);
        let mean = traces.iter().map(|t| t.retained() as f64).sum::<f64>() / 1e5;
        let sd = (6.0 * 0.7 * 0.3 / 1e5f64).sqrt();
        assert!((mean - 4.2).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn padding_invariant_and_reproducibility() {
        let d = SparseDistribution::new(5, vec![bs("11111"), bs("10101")], vec![0.5, 0.5]).unwrap();
        let cfg = ChannelConfig::new(0.4, 99).unwrap();
        let a = sample_traces(&d, &cfg, 3 * CHUNK_LEN + 17);
        let b = sample_traces(&d, &cfg, 3 * CHUNK_LEN + 17);
        assert_eq!(a, b);
        for t in &a {
            assert!(t.bits()[t.retained()..].iter().all(|&b| b == 0));
        }
        let prefix = sample_traces(&d, &cfg, CHUNK_LEN + 5);
        assert_eq!(&a[..prefix.len()], &prefix[..]);
    }

    #[test]
    fn histogram_independent_of_thread_count() {
        let d = SparseDistribution::new(4, vec![bs("1100"), bs("0011")], vec![0.6, 0.4]).unwrap();
        let cfg = ChannelConfig::new(0.8, 7).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sample_histogram(&d, &cfg, 100_000));
        let b = four.install(|| sample_histogram(&d, &cfg, 100_000));
        assert_eq!(a, b);
        let direct = TraceHistogram::from_traces(4, &sample_traces(&d, &cfg, 100_000)).unwrap();
        assert_eq!(a, direct);
    }

    #[test]
    fn tail_examples() {
        assert_eq!(binomial_tail(2, 0.5, 0).unwrap(), 1.0);
        assert!((binomial_tail(2, 0.5, 1).unwrap() - 0.75).abs() < 1e-15);
        assert!((binomial_tail(2, 0.5, 2).unwrap() - 0.25).abs() < 1e-15);
        assert!(binomial_tail(2, 1.0, 1).is_err());
    }

    #[test]
    fn threshold_examples() {
        let exact15 = 49.0 / 4f64.powi(16);
        assert!((binomial_tail(16, 0.25, 15).unwrap() - exact15).abs() < 1e-20);
        assert_eq!(choose_threshold(16, 1e-9).unwrap(), 15);
        assert_eq!(choose_threshold(16, 1.0).unwrap(), 8);
        assert!(matches!(choose_threshold(3, 0.1), Err(Error::Threshold(_))));
        let mut last = usize::MAX;
        for b in [1e-12, 1e-9, 1e-6, 1e-3, 0.1, 0.5, 0.9] {
            let t = choose_threshold(25, b).unwrap();
            assert!(t <= last);
            last = t;
        }
    }

    #[test]
    fn subsample_rules() {
        let cfg = SubsampleConfig::new(16, 8).unwrap();
        let mut rng = stream_rng(1, 0);
        let mut bits = vec![1u8; 5];
        bits.resize(16, 0);
        let short = Trace::new(bits, 5).unwrap();
        assert_eq!(subsample_trace(&short, &cfg, &mut rng).unwrap(), None);
        let raw = Trace::new(vec![1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0], 10).unwrap();
        for _ in 0..200 {
            let t = subsample_trace(&raw, &cfg, &mut rng).unwrap().unwrap();
            assert!(t.retained() <= 8);
            assert!(t.bits()[t.retained()..].iter().all(|&b| b == 0));
        }
        let whole = select_subsequence(&raw, &(0..10).collect::<Vec<_>>());
        assert_eq!(whole, raw);
        assert!(SubsampleConfig::new(16, 17).is_err());
        assert!(SubsampleConfig::new(16, 7).is_err());
    }

    #[test]
    fn trace_file_round_trip() {
        let traces = vec![
            Trace::new(vec![1, 0, 1, 0], 3).unwrap(),
            Trace::new(vec![0, 0, 0, 0], 2).unwrap(),
        ];
        let header = TraceFileHeader { n: 4, p: 0.9, seed: 42 };
        let mut buf = Vec::new();
        write_trace_file(&mut buf, &header, &traces).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#n=4 p=0.9 seed=42\n1010\n0000\n"));
        let (h, back) = read_trace_file(&buf[..]).unwrap();
        assert_eq!(h, header);
        assert_eq!(back[0].bits(), traces[0].bits());
        assert_eq!(back[1].retained(), 0);
        assert!(read_trace_file(&b"#n=4 p=0.9 seed=1\n101\n"[..]).is_err());
        assert!(read_trace_file(&b"1010\n"[..]).is_err());
    }
}
