//! End-to-end recovery: candidate supports over guessed weight scales, weight
//! fitting, and validation against the moment estimates.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    choose_threshold, reduction_target, sample_histogram, sample_reduced_histogram, stream_rng,
    subsample_trace, ChannelConfig, SubsampleConfig, Trace, TraceHistogram,
};
use crate::coeffs::{recover_polynomial, SigmaPoint, SymmetricPolynomial};
use crate::error::{param, Error, Result};
use crate::estimator::{accumulate_histogram, DroppedPoint, MomentEntry, MomentEstimates};
use crate::lp::{self, Constraint, LinearProgram, LpOutcome};
use crate::model::{eval_poly, BitString, ProblemParams, SparseDistribution};
use crate::prony::{assess_point, hankel_noise, theoretical_delta, GateOutcome, PronyThresholds};
use crate::support::recover_strings;
use crate::zgrid::{build_grid, ArcWidth, GridKind, GridSpec};

/// Weights at or below this are dropped from fitted distributions.
const WEIGHT_FLOOR: f64 = 1e-12;

/// Per-entry allowance `abs + sigmas * std_err` between a model moment and
/// its estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTolerance {
    pub abs: f64,
    pub sigmas: f64,
}

impl MomentTolerance {
    pub fn bound(&self, e: &MomentEntry) -> f64 {
        self.abs + self.sigmas * e.std_err
    }
}

/// One guess of support size and weight scales: `alpha = 2^-m1`, `beta = 2^-m2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CandidateEnumeration {
    pub ell_prime: usize,
    pub m1: u32,
    pub m2: u32,
}

impl CandidateEnumeration {
    pub fn alpha(&self) -> f64 {
        (-(self.m1 as f64)).exp2()
    }

    pub fn beta(&self) -> f64 {
        (-(self.m2 as f64)).exp2()
    }
}

/// Knobs of the candidate search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    /// Known lower bound on the smallest weight.
    pub alpha_known: Option<f64>,
    /// Extra weight scales beyond `log2(1/eps)` when `alpha` is unknown;
    /// `None` uses the asymptotic bound with constant `c_prime`.
    pub m_slack: Option<u32>,
    /// Constant in the theoretical gate scale, used as a floor on `delta`.
    pub c: f64,
    /// Constant in the asymptotic weight-scale range.
    pub c_prime: f64,
    /// Floor of the gate scale.
    pub delta: f64,
    pub eta: f64,
    /// Multiplier on the moment noise when deriving the gate scale.
    pub gate_noise_factor: f64,
    /// Residual multipliers tried for the coefficient programs.
    pub coeff_tolerances: Vec<f64>,
    /// Smallest per-point residual scale.
    pub scale_floor: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            alpha_known: None,
            m_slack: Some(2),
            c: 1.0,
            c_prime: 1.0,
            delta: 1e-6,
            eta: 1e-4,
            gate_noise_factor: 3.0,
            coeff_tolerances: vec![2.0, 3.0, 4.0, 6.0],
            scale_floor: 1e-7,
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha_known {
            if !(a > 0.0 && a <= 1.0) {
                return param(format!("known alpha {a} outside (0,1]"));
            }
        }
        if self.coeff_tolerances.is_empty() || self.coeff_tolerances.iter().any(|t| !(*t > 0.0)) {
            return param("coefficient tolerances must be positive");
        }
        if !(self.c > 0.0 && self.c_prime > 0.0) {
            return param("constants c and c_prime must be positive");
        }
        if !(self.scale_floor > 0.0) || !(self.gate_noise_factor >= 0.0) {
            return param("scale floor must be positive and noise factor nonnegative");
        }
        PronyThresholds::new(1.0, 1.0, self.delta, self.eta)?;
        Ok(())
    }

    fn max_m(&self, params: &ProblemParams) -> u32 {
        match self.alpha_known {
            Some(a) => (1.0 / a).log2().ceil().max(1.0) as u32,
            None => (1.0 / params.eps()).log2().ceil().max(1.0) as u32 + self.slack(params),
        }
    }

    fn slack(&self, params: &ProblemParams) -> u32 {
        self.m_slack.unwrap_or_else(|| {
            let n = params.n().max(2) as f64;
            let ell = params.ell() as f64;
            let nats = 2.0 * self.c_prime * n.cbrt() * n.ln().powf(2.0 / 3.0) * ell.powi(3) * params.p().powf(-2.0 / 3.0);
            (nats / std::f64::consts::LN_2).ceil() as u32
        })
    }

    fn delta_floor(&self, params: &ProblemParams) -> f64 {
        self.delta.max(theoretical_delta(params.n(), params.ell(), params.p(), self.c))
    }

    /// Enumeration order: `l'`, then `m1`, then `m2`.
    pub fn enumerations(&self, params: &ProblemParams) -> Vec<CandidateEnumeration> {
        let m = self.max_m(params);
        let mut out = Vec::new();
        for ell_prime in 1..=params.ell() {
            for m1 in 1..=m {
                for m2 in 1..=m * ell_prime as u32 {
                    out.push(CandidateEnumeration { ell_prime, m1, m2 });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDiagnostic {
    pub enumeration: CandidateEnumeration,
    pub gate_passed: usize,
    pub gate_total: usize,
    /// Supports found for this guess; empty when every tolerance failed.
    pub supports: Vec<Vec<BitString>>,
    /// First failure per tolerance, when any.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSearch {
    /// Distinct supports in order of first discovery.
    pub supports: Vec<(CandidateEnumeration, Vec<BitString>)>,
    pub diagnostics: Vec<CandidateDiagnostic>,
    /// Fraction of guesses passing the gate at each point.
    pub point_pass_rate: Vec<f64>,
}

/// Grid index, sigma estimates and residual scale of a point passing the gate.
type YesPoint = (usize, Vec<Complex64>, f64);

/// Gate and solve at every point for one guess; returns YES points with
/// their sigma estimates and residual scales.
fn gated_points(
    estimates: &MomentEstimates,
    params: &ProblemParams,
    cand: &CandidateEnumeration,
    settings: &SearchSettings,
) -> Result<(Vec<YesPoint>, Vec<GateOutcome>)> {
    let l = cand.ell_prime;
    let floor = settings.delta_floor(params);
    let base = PronyThresholds::new(cand.alpha(), cand.beta(), floor, settings.eta)?;
    let mut yes = Vec::new();
    let mut gates = Vec::with_capacity(estimates.len());
    for idx in 0..estimates.len() {
        let noise = settings.gate_noise_factor * hankel_noise(estimates, idx, l);
        let delta = floor.max(4.0 * l as f64 * noise / cand.alpha());
        let th = base.with_delta(delta)?;
        let point = assess_point(estimates, idx, l, &th)?;
        gates.push(point.gate);
        if let Some(s) = point.sigma {
            yes.push((idx, s.values().to_vec(), point.predicted_error.max(settings.scale_floor)));
        }
    }
    Ok((yes, gates))
}

struct PolyAttempt {
    supports: Vec<Vec<BitString>>,
    failures: Vec<String>,
}

fn supports_from_points(
    estimates: &MomentEstimates,
    params: &ProblemParams,
    ell_prime: usize,
    yes: &[(usize, Vec<Complex64>, f64)],
    settings: &SearchSettings,
) -> Result<PolyAttempt> {
    let sub = params.with_ell(ell_prime)?;
    let mut supports: Vec<Vec<BitString>> = Vec::new();
    let mut failures = Vec::new();
    for &tol in &settings.coeff_tolerances {
        let mut sigmas: Vec<SymmetricPolynomial> = Vec::with_capacity(ell_prime);
        let mut failed = None;
        for k in 1..=ell_prime {
            let pts: Vec<SigmaPoint> = yes
                .iter()
                .map(|(idx, s, scale)| SigmaPoint {
                    z: estimates.points()[*idx].z,
                    value: s[k - 1],
                    scale: *scale,
                })
                .collect();
            match recover_polynomial(k, &pts, tol, &sub) {
                Ok(p) => sigmas.push(p),
                Err(e @ (Error::NoSolution { .. } | Error::Ambiguous { .. })) => {
                    failed = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failed.is_none() {
            match recover_strings(&sigmas, params.n()) {
                Ok(strings) => {
                    let distinct: BTreeSet<&BitString> = strings.iter().collect();
                    if distinct.len() == strings.len() {
                        if !supports.contains(&strings) {
                            supports.push(strings);
                        }
                    } else {
                        failed = Some("repeated strings".into());
                    }
                }
                Err(Error::CorruptInput(msg)) => failed = Some(msg),
                Err(e) => return Err(e),
            }
        }
        if let Some(msg) = failed {
            failures.push(format!("tol {tol}: {msg}"));
        }
    }
    Ok(PolyAttempt { supports, failures })
}

/// Runs gate, coefficient recovery and factoring for every guess; fails
/// when no guess yields a support.
pub fn recover_support_candidates(
    estimates: &MomentEstimates,
    params: &ProblemParams,
    settings: &SearchSettings,
) -> Result<SupportSearch> {
    let search = search_candidates(estimates, params, settings)?;
    if search.supports.is_empty() {
        let best = search.diagnostics.iter().max_by_key(|d| d.gate_passed);
        let detail = best.map_or(String::new(), |d| {
            format!(
                "; best guess {:?} passed the gate at {}/{} points, first failure: {}",
                d.enumeration,
                d.gate_passed,
                d.gate_total,
                d.failures.first().map_or("none", String::as_str)
            )
        });
        return Err(Error::RecoveryFailed(format!(
            "none of {} candidate guesses produced a support{detail}",
            search.diagnostics.len()
        )));
    }
    Ok(search)
}

/// Like [`recover_support_candidates`], but an empty result is not an error.
pub fn search_candidates(
    estimates: &MomentEstimates,
    params: &ProblemParams,
    settings: &SearchSettings,
) -> Result<SupportSearch> {
    settings.validate()?;
    if estimates.is_empty() {
        return param("no usable grid points");
    }
    if estimates.points().iter().any(|g| g.kind != GridKind::Arc) {
        return param("candidate search needs an arc grid");
    }
    if estimates.k_max() + 1 < 2 * params.ell() {
        return param(format!("estimates need k up to {}", 2 * params.ell() - 1));
    }
    let enums = settings.enumerations(params);
    let gated = enums
        .par_iter()
        .map(|c| gated_points(estimates, params, c, settings))
        .collect::<Result<Vec<_>>>()?;
    let mut keys: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for (ci, (yes, _)) in gated.iter().enumerate() {
        if yes.is_empty() {
            continue;
        }
        let key = (enums[ci].ell_prime, yes.iter().map(|y| y.0).collect());
        if let std::collections::btree_map::Entry::Vacant(slot) = keys.entry(key) {
            slot.insert(jobs.len());
            jobs.push((ci, enums[ci].ell_prime));
        }
    }
    let attempts = jobs
        .par_iter()
        .map(|&(ci, l)| supports_from_points(estimates, params, l, &gated[ci].0, settings))
        .collect::<Result<Vec<_>>>()?;
    let mut supports: Vec<(CandidateEnumeration, Vec<BitString>)> = Vec::new();
    let mut diagnostics = Vec::with_capacity(enums.len());
    for (ci, cand) in enums.iter().enumerate() {
        let (yes, gates) = &gated[ci];
        let mut diag = CandidateDiagnostic {
            enumeration: *cand,
            gate_passed: yes.len(),
            gate_total: gates.len(),
            supports: Vec::new(),
            failures: Vec::new(),
        };
        if yes.is_empty() {
            diag.failures.push("no grid point passed the gate".into());
        } else {
            let key = (cand.ell_prime, yes.iter().map(|y| y.0).collect::<Vec<_>>());
            let attempt = &attempts[keys[&key]];
            diag.supports = attempt.supports.clone();
            diag.failures = attempt.failures.clone();
            for s in &attempt.supports {
                if !supports.iter().any(|(_, t)| t == s) {
                    supports.push((*cand, s.clone()));
                }
            }
        }
        diagnostics.push(diag);
    }
    let point_pass_rate = (0..estimates.len())
        .map(|i| {
            let passed = gated.iter().filter(|(_, gates)| gates[i].passed()).count();
            passed as f64 / gated.len().max(1) as f64
        })
        .collect();
    Ok(SupportSearch { supports, diagnostics, point_pass_rate })
}

/// Fitted weights and the largest residual relative to its allowance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFit {
    pub weights: Vec<f64>,
    pub max_ratio: f64,
}

fn moment_table(support: &[BitString], estimates: &MomentEstimates) -> Vec<Vec<Vec<Complex64>>> {
    estimates
        .points()
        .iter()
        .map(|g| {
            support
                .iter()
                .map(|x| {
                    let u = eval_poly(x, g.z);
                    let mut pw = Complex64::new(1.0, 0.0);
                    (0..=estimates.k_max())
                        .map(|_| {
                            let v = pw;
                            pw *= u;
                            v
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Weights on `support` minimising the largest residual relative to the
/// per-entry allowance given by `tol` plus `extra(k)`.
fn fit_with(
    support: &[BitString],
    estimates: &MomentEstimates,
    tol: &MomentTolerance,
    extra: impl Fn(usize) -> f64,
) -> Result<Option<WeightFit>> {
    let l = support.len();
    let table = moment_table(support, estimates);
    let mut lp = LinearProgram::new(l + 1);
    lp.objective[l] = 1.0;
    lp.push(Constraint::eq((0..=l).map(|j| if j < l { 1.0 } else { 0.0 }).collect(), 1.0));
    for (pi, row) in table.iter().enumerate() {
        for k in 1..=estimates.k_max() {
            let e = estimates.entry(pi, k);
            let bound = tol.bound(e) + extra(k);
            if !(bound > 0.0) {
                return param("moment allowance must be positive");
            }
            for part in [|z: Complex64| z.re, |z: Complex64| z.im] {
                let mut coeffs: Vec<f64> = row.iter().map(|u| part(u[k]) / bound).collect();
                let target = part(e.mean) / bound;
                coeffs.push(-1.0);
                lp.push(Constraint::le(coeffs.clone(), target));
                let mut neg: Vec<f64> = coeffs[..l].iter().map(|v| -v).collect();
                neg.push(-1.0);
                lp.push(Constraint::le(neg, -target));
            }
        }
    }
    match lp::solve(&lp)? {
        LpOutcome::Optimal { x, value } if value <= 1.0 => {
            let total: f64 = x[..l].iter().sum();
            Ok(Some(WeightFit {
                weights: x[..l].iter().map(|w| w / total).collect(),
                max_ratio: value,
            }))
        }
        LpOutcome::Optimal { .. } | LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::Internal("weight program reported unbounded".into())),
    }
}

/// Mixture weights on `support` matching every moment estimate within `tol`.
pub fn fit_weights(
    support: &[BitString],
    estimates: &MomentEstimates,
    tol: &MomentTolerance,
) -> Result<Option<WeightFit>> {
    let distinct: BTreeSet<&BitString> = support.iter().collect();
    if support.is_empty() || distinct.len() != support.len() {
        return param("support strings must be distinct and nonempty");
    }
    fit_with(support, estimates, tol, |_| 0.0)
}

/// Largest model-versus-estimate residual relative to its allowance.
pub fn validation_ratio(d: &SparseDistribution, estimates: &MomentEstimates, tol: &MomentTolerance) -> f64 {
    let mut worst: f64 = 0.0;
    for (pi, g) in estimates.points().iter().enumerate() {
        for k in 1..=estimates.k_max() {
            let model = crate::model::power_sum(d, g.z, k);
            let e = estimates.entry(pi, k);
            let diff = model - e.mean;
            worst = worst.max(diff.re.abs().max(diff.im.abs()) / tol.bound(e));
        }
    }
    worst
}

fn distribution_from_fit(n: usize, support: &[BitString], fit: &WeightFit) -> Result<SparseDistribution> {
    let kept: Vec<(BitString, f64)> = support
        .iter()
        .cloned()
        .zip(fit.weights.iter().copied())
        .filter(|(_, w)| *w > WEIGHT_FLOOR)
        .collect();
    let total: f64 = kept.iter().map(|(_, w)| w).sum();
    let (strings, weights): (Vec<_>, Vec<_>) = kept.into_iter().map(|(x, w)| (x, w / total)).unzip();
    SparseDistribution::new(n, strings, weights)
}

/// Which validation a candidate passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStage {
    Strict,
    Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub support: Vec<BitString>,
    pub stage: ValidationStage,
    pub max_ratio: Option<f64>,
}

/// Recovery configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub grid: GridSpec,
    pub sample_count: u64,
    pub seed: u64,
    pub search: SearchSettings,
    pub validation: MomentTolerance,
    /// Tail budget for the small retention threshold.
    pub smallp_budget: f64,
}

impl RecoveryConfig {
    /// Arc of half-width `1/L` with 65 points, `L` from the problem size.
    pub fn for_params(params: &ProblemParams) -> Result<Self> {
        let l = crate::zgrid::default_l(params.n(), params.p());
        let mut grid = GridSpec::arc_with_points(l, ArcWidth::OneOverL, 65)?;
        grid.max_points = 257;
        Ok(Self {
            grid,
            sample_count: 100_000,
            seed: 0,
            search: SearchSettings::default(),
            validation: MomentTolerance { abs: 1e-9, sigmas: 5.0 },
            smallp_budget: 1e-4,
        })
    }
}

/// Where traces come from.
pub enum TraceSource<'a> {
    /// Draw `sample_count` traces from a known distribution with the config seed.
    Simulate(&'a SparseDistribution),
    /// Use the first `sample_count` of these traces.
    Traces(&'a [Trace]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostic {
    pub index: usize,
    #[serde(with = "crate::model::complex_pair")]
    pub z: Complex64,
    /// Gate outcome for the support size of the answer.
    pub gate: Option<GateOutcome>,
    /// Fraction of all guesses passing the gate here.
    pub gate_pass_rate: f64,
    /// `|model moment - estimate|` for `k = 0..=k_max`.
    pub residuals: Vec<f64>,
    pub std_errs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryDiagnostics {
    pub traces_used: u64,
    pub effective_p: f64,
    pub smallp_threshold: Option<usize>,
    pub grid_points: usize,
    pub dropped_points: Vec<DroppedPoint>,
    pub candidate_count: usize,
    pub candidates: Vec<CandidateDiagnostic>,
    pub validations: Vec<ValidationRecord>,
    pub selected_ratio: f64,
    pub points: Vec<PointDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub distribution: SparseDistribution,
    pub params: ProblemParams,
    pub seed: u64,
    pub config: RecoveryConfig,
    pub diagnostics: RecoveryDiagnostics,
}

/// Whether the small retention reduction applies.
pub fn needs_reduction(params: &ProblemParams) -> bool {
    params.p() < 0.5 * reduction_target(params.n())
}

fn gather_histogram(
    source: &TraceSource<'_>,
    params: &ProblemParams,
    config: &RecoveryConfig,
    sub: Option<&SubsampleConfig>,
) -> Result<TraceHistogram> {
    let count = config.sample_count;
    match source {
        TraceSource::Simulate(d) => {
            params.check_distribution(d)?;
            let cfg = ChannelConfig::new(params.p(), config.seed)?;
            match sub {
                None => Ok(sample_histogram(d, &cfg, count)),
                Some(sub) => sample_reduced_histogram(d, &cfg, sub, count),
            }
        }
        TraceSource::Traces(traces) => {
            if (traces.len() as u64) < count {
                return param(format!("{} traces available, {count} requested", traces.len()));
            }
            let mut hist = TraceHistogram::new(params.n());
            let mut rng = stream_rng(config.seed, u64::MAX);
            for t in &traces[..count as usize] {
                match sub {
                    None => hist.insert(t)?,
                    Some(sub) => {
                        if let Some(r) = subsample_trace(t, sub, &mut rng)? {
                            hist.insert(&r)?;
                        }
                    }
                }
            }
            Ok(hist)
        }
    }
}

/// Full pipeline from traces to a validated sparse distribution.
pub fn recover(source: TraceSource<'_>, params: &ProblemParams, config: &RecoveryConfig) -> Result<RecoveryResult> {
    if config.sample_count == 0 {
        return param("at least one trace is required");
    }
    config.search.validate()?;
    let (sub, work) = if needs_reduction(params) {
        let t = choose_threshold(params.n(), config.smallp_budget)?;
        let sub = SubsampleConfig::new(params.n(), t)?;
        (Some(sub), params.with_p(sub.target_p())?)
    } else {
        (None, *params)
    };
    let hist = gather_histogram(&source, params, config, sub.as_ref())?;
    if hist.total() == 0 {
        return Err(Error::RecoveryFailed("every trace was discarded by the reduction".into()));
    }
    let grid = build_grid(&config.grid, work.p())?;
    let k_max = 2 * params.ell() - 1;
    let estimates = accumulate_histogram(&hist, &grid, k_max, &work)?;
    let search = recover_support_candidates(&estimates, &work, &config.search)?;

    let mut validations = Vec::new();
    let mut accepted: Vec<(Vec<BitString>, WeightFit)> = Vec::new();
    for (_, support) in &search.supports {
        let fit = fit_weights(support, &estimates, &config.validation)?;
        validations.push(ValidationRecord {
            support: support.clone(),
            stage: ValidationStage::Strict,
            max_ratio: fit.as_ref().map(|f| f.max_ratio),
        });
        if let Some(fit) = fit {
            accepted.push((support.clone(), fit));
        }
    }
    if accepted.is_empty() && config.search.alpha_known.is_none() {
        // Strings carrying total weight below eps/2 may have been lost; such a
        // gap moves each moment by at most eps * n^k.
        let n = params.n() as f64;
        let eps = params.eps();
        for (_, support) in &search.supports {
            let fit = fit_with(support, &estimates, &config.validation, |k| eps * n.powi(k as i32))?;
            validations.push(ValidationRecord {
                support: support.clone(),
                stage: ValidationStage::Tail,
                max_ratio: fit.as_ref().map(|f| f.max_ratio),
            });
            if let Some(fit) = fit {
                accepted.push((support.clone(), fit));
            }
        }
    }
    let (support, fit) = accepted
        .into_iter()
        .min_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.1.max_ratio.total_cmp(&b.1.max_ratio)))
        .ok_or_else(|| {
            Error::RecoveryFailed(format!(
                "{} candidate supports, none matched the moment estimates",
                search.supports.len()
            ))
        })?;
    let distribution = distribution_from_fit(params.n(), &support, &fit)?;

    let chosen_l = support.len();
    let gate_for = search
        .diagnostics
        .iter()
        .find(|d| d.enumeration.ell_prime == chosen_l && d.supports.contains(&support))
        .map(|d| d.enumeration);
    let gates: Option<Vec<GateOutcome>> = match gate_for {
        Some(c) => Some(gated_points(&estimates, &work, &c, &config.search)?.1),
        None => None,
    };
    let points = estimates
        .points()
        .iter()
        .enumerate()
        .map(|(pi, g)| PointDiagnostic {
            index: g.index,
            z: g.z,
            gate: gates.as_ref().map(|v| v[pi]),
            gate_pass_rate: search.point_pass_rate[pi],
            residuals: (0..=k_max)
                .map(|k| (crate::model::power_sum(&distribution, g.z, k) - estimates.entry(pi, k).mean).norm())
                .collect(),
            std_errs: estimates.row(pi).iter().map(|e| e.std_err).collect(),
        })
        .collect();

    Ok(RecoveryResult {
        distribution,
        params: *params,
        seed: config.seed,
        config: config.clone(),
        diagnostics: RecoveryDiagnostics {
            traces_used: hist.total(),
            effective_p: work.p(),
            smallp_threshold: sub.map(|s| s.t()),
            grid_points: estimates.len(),
            dropped_points: estimates.dropped().to_vec(),
            candidate_count: search.diagnostics.len(),
            candidates: search.diagnostics,
            validations,
            selected_ratio: fit.max_ratio,
            points,
        },
    })
}

fn weight_vectors(size: usize, pitch: f64) -> Vec<Vec<f64>> {
    fn rec(size: usize, left: usize, pitch: f64, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if size == 1 {
            let last = 1.0 - cur.iter().sum::<f64>();
            if last > 1e-12 {
                cur.push(last);
                out.push(cur.clone());
                cur.pop();
            }
            return;
        }
        for j in 1..left {
            cur.push(j as f64 * pitch);
            rec(size - 1, left - j, pitch, cur, out);
            cur.pop();
        }
    }
    let steps = (1.0 / pitch + 1e-9).floor() as usize;
    let mut out = Vec::new();
    rec(size, steps, pitch, &mut Vec::new(), &mut out);
    out
}

/// Reference search over all supports of size at most `ell` and all weights
/// on a grid of the given pitch. Returns the first mixture whose moments
/// match every estimate within `margin`, after allowing for the rounding of
/// weights to the grid.
pub fn exhaustive_distinguisher(
    estimates: &MomentEstimates,
    params: &ProblemParams,
    weight_grid: f64,
    margin: &MomentTolerance,
) -> Result<SparseDistribution> {
    let n = params.n();
    if n > 8 || params.ell() > 2 {
        return param("exhaustive search is limited to n <= 8 and ell <= 2");
    }
    if !(weight_grid > 0.0 && weight_grid <= 1.0) {
        return param("weight grid pitch must be in (0,1]");
    }
    if estimates.is_empty() {
        return param("no usable grid points");
    }
    let k_max = estimates.k_max();
    let strings: Vec<BitString> = BitString::all(n).collect();
    let powers: Vec<Vec<Vec<Complex64>>> = strings
        .iter()
        .map(|x| {
            estimates
                .points()
                .iter()
                .map(|g| {
                    let u = eval_poly(x, g.z);
                    (0..=k_max).map(|k| u.powu(k as u32)).collect()
                })
                .collect()
        })
        .collect();
    let bounds: Vec<Vec<f64>> = (0..estimates.len())
        .map(|pi| (0..=k_max).map(|k| margin.bound(estimates.entry(pi, k))).collect())
        .collect();
    let matches = |idx: &[usize], w: &[f64]| -> bool {
        for pi in 0..estimates.len() {
            for k in 1..=k_max {
                let model: Complex64 = idx.iter().zip(w).map(|(&i, a)| powers[i][pi][k] * a).sum();
                let mut slack = 0.0;
                for (a, &i) in idx.iter().enumerate() {
                    for &j in &idx[a + 1..] {
                        slack = f64::max(slack, (powers[i][pi][k] - powers[j][pi][k]).norm());
                    }
                }
                let allow = bounds[pi][k] + 0.5 * weight_grid * slack;
                let diff = model - estimates.entry(pi, k).mean;
                if diff.re.abs() > allow || diff.im.abs() > allow {
                    return false;
                }
            }
        }
        true
    };
    for i in 0..strings.len() {
        if matches(&[i], &[1.0]) {
            return Ok(SparseDistribution::point_mass(strings[i].clone()));
        }
    }
    if params.ell() >= 2 {
        let weights = weight_vectors(2, weight_grid);
        for i in 0..strings.len() {
            for j in i + 1..strings.len() {
                for w in &weights {
                    if matches(&[i, j], w) {
                        return SparseDistribution::new(n, vec![strings[i].clone(), strings[j].clone()], w.clone());
                    }
                }
            }
        }
    }
    Err(Error::Margin)
}
