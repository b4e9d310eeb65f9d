//! Hankel solves turning power sums into elementary symmetric values.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::estimator::MomentEstimates;
use crate::linalg::{svd, vec_norm, CMatrix, Svd};

/// Relative singular-value floor below which a solve is refused.
const SOLVE_RCOND: f64 = 1e-14;

/// `B[i][j] = b_{i+j}` and `v[i] = b_{l+i}` for `i, j < l`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelSystem {
    b_tilde: CMatrix,
    v_tilde: Vec<Complex64>,
    ell_prime: usize,
}

impl HankelSystem {
    /// Builds the system from `b_0 .. b_{2l-1}`; extra entries are ignored.
    pub fn from_power_sums(b: &[Complex64], ell_prime: usize) -> Result<Self> {
        if ell_prime == 0 {
            return param("system size must be at least 1");
        }
        if b.len() < 2 * ell_prime {
            return param(format!("need {} power sums, got {}", 2 * ell_prime, b.len()));
        }
        Ok(Self {
            b_tilde: CMatrix::from_fn(ell_prime, ell_prime, |i, j| b[i + j]),
            v_tilde: (0..ell_prime).map(|i| b[ell_prime + i]).collect(),
            ell_prime,
        })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.b_tilde
    }

    pub fn rhs(&self) -> &[Complex64] {
        &self.v_tilde
    }

    pub fn ell_prime(&self) -> usize {
        self.ell_prime
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PronyThresholds {
    alpha: f64,
    beta: f64,
    delta: f64,
    gamma: f64,
    eta: f64,
}

impl PronyThresholds {
    /// `alpha, beta` in (0,1]; `delta, eta` positive; `gamma = delta^2`.
    pub fn new(alpha: f64, beta: f64, delta: f64, eta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return param(format!("{name}={v} outside (0,1]"));
            }
        }
        for (name, v) in [("delta", delta), ("eta", eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return param(format!("{name}={v} must be positive"));
            }
        }
        Ok(Self {
            alpha,
            beta,
            delta,
            gamma: delta * delta,
            eta,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Copy with a different gate scale.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.alpha, self.beta, delta, self.eta)
    }

    /// Entrywise noise that the gate analysis tolerates, `alpha delta / (4 l^2)`.
    pub fn tolerated_noise(&self, ell_prime: usize) -> f64 {
        self.alpha * self.delta / (4.0 * (ell_prime * ell_prime) as f64)
    }
}

/// The gate scale `exp(-4 C n^(1/3) (ln n)^(2/3) l^2 p^(-2/3))` from the
/// analysis. It underflows for all but toy sizes.
pub fn theoretical_delta(n: usize, ell: usize, p: f64, c: f64) -> f64 {
    let nf = n.max(2) as f64;
    (-4.0 * c * nf.cbrt() * nf.ln().powf(2.0 / 3.0) * (ell * ell) as f64 * p.powf(-2.0 / 3.0)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateOutcome {
    #[serde(rename = "yes")]
    Yes,
    #[serde(rename = "no:singular")]
    NoSingular,
    #[serde(rename = "no:det")]
    NoDet,
}

impl GateOutcome {
    pub fn passed(self) -> bool {
        self == GateOutcome::Yes
    }
}

/// Two-stage conditioning test: smallest singular value, then determinant.
pub fn conditioning_gate(sys: &HankelSystem, th: &PronyThresholds) -> GateOutcome {
    gate_from_svd(&svd(sys.matrix()), th)
}

fn gate_from_svd(dec: &Svd, th: &PronyThresholds) -> GateOutcome {
    if dec.sigma_min() < 0.75 * th.alpha * th.delta {
        GateOutcome::NoSingular
    } else if dec.abs_det() < th.beta * th.delta * th.delta / 2.0 {
        GateOutcome::NoDet
    } else {
        GateOutcome::Yes
    }
}

/// Estimates of `sigma_1 .. sigma_l` at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SigmaEstimates {
    #[serde(with = "crate::model::complex_pairs")]
    values: Vec<Complex64>,
}

impl SigmaEstimates {
    pub fn new(values: Vec<Complex64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// `sigma_k` for `k >= 1`.
    pub fn sigma(&self, k: usize) -> Complex64 {
        self.values[k - 1]
    }

    /// Recurrence coefficients `r_k = (-1)^(k-1) sigma_k`.
    pub fn recurrence(&self) -> Vec<Complex64> {
        self.values
            .iter()
            .enumerate()
            .map(|(j, s)| if j % 2 == 0 { *s } else { -*s })
            .collect()
    }
}

fn sigma_from_solution(w: &[Complex64]) -> SigmaEstimates {
    let l = w.len();
    SigmaEstimates::new(
        (1..=l)
            .map(|j| {
                let v = w[l - j];
                if j % 2 == 1 {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
}

/// Raw solution `w = B^-1 v` of a Hankel system.
pub fn solve_hankel(sys: &HankelSystem) -> Result<Vec<Complex64>> {
    svd(sys.matrix()).solve(sys.rhs(), SOLVE_RCOND)
}

/// Solves the system and maps the solution onto symmetric values.
pub fn solve_sigma(sys: &HankelSystem, _th: &PronyThresholds) -> Result<SigmaEstimates> {
    Ok(sigma_from_solution(&solve_hankel(sys)?))
}

/// Largest violation of `b_{k+l} = sum_j r_j b_{k+l-j}` for `k < l`.
pub fn recurrence_check(b: &[Complex64], r: &[Complex64]) -> Result<f64> {
    let l = r.len();
    if l == 0 || b.len() != 2 * l {
        return param(format!("need 2*{l} power sums, got {}", b.len()));
    }
    Ok((0..l)
        .map(|k| {
            let pred: Complex64 = (1..=l).map(|j| r[j - 1] * b[k + l - j]).sum();
            (b[k + l] - pred).norm()
        })
        .fold(0.0, f64::max))
}

/// Everything known about one point after the gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSigma {
    pub gate: GateOutcome,
    pub sigma_min: f64,
    pub abs_det: f64,
    pub sigma: Option<SigmaEstimates>,
    /// First-order bound on the error of every `sigma_j` from the standard
    /// errors of the moments; zero for exact inputs.
    pub predicted_error: f64,
}

fn power_sums_at(estimates: &MomentEstimates, z_index: usize, ell_prime: usize) -> Result<Vec<Complex64>> {
    if z_index >= estimates.len() {
        return param(format!("point {z_index} outside the estimates"));
    }
    if estimates.k_max() + 1 < 2 * ell_prime {
        return param(format!(
            "estimates stop at k={}, system of size {ell_prime} needs k={}",
            estimates.k_max(),
            2 * ell_prime - 1
        ));
    }
    Ok((0..2 * ell_prime)
        .map(|k| estimates.entry(z_index, k).mean)
        .collect())
}

/// Frobenius norm of the Hankel matrix of standard errors.
pub fn hankel_noise(estimates: &MomentEstimates, z_index: usize, ell_prime: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..ell_prime {
        for j in 0..ell_prime {
            acc += estimates.entry(z_index, i + j).std_err.powi(2);
        }
    }
    acc.sqrt()
}

/// Gate and solve at one point, with diagnostics.
pub fn assess_point(
    estimates: &MomentEstimates,
    z_index: usize,
    ell_prime: usize,
    th: &PronyThresholds,
) -> Result<PointSigma> {
    let b = power_sums_at(estimates, z_index, ell_prime)?;
    let sys = HankelSystem::from_power_sums(&b, ell_prime)?;
    let dec = svd(sys.matrix());
    let gate = gate_from_svd(&dec, th);
    let mut out = PointSigma {
        gate,
        sigma_min: dec.sigma_min(),
        abs_det: dec.abs_det(),
        sigma: None,
        predicted_error: 0.0,
    };
    if gate.passed() {
        let w = dec.solve(sys.rhs(), SOLVE_RCOND)?;
        let dv: f64 = (0..ell_prime)
            .map(|i| estimates.entry(z_index, ell_prime + i).std_err.powi(2))
            .sum::<f64>()
            .sqrt();
        let db = hankel_noise(estimates, z_index, ell_prime);
        out.predicted_error = (dv + db * vec_norm(&w)) / dec.sigma_min();
        out.sigma = Some(sigma_from_solution(&w));
    }
    Ok(out)
}

/// Symmetric values at one point, or nothing when the gate says no.
pub fn estimate_sigma_at_point(
    estimates: &MomentEstimates,
    z_index: usize,
    ell_prime: usize,
    th: &PronyThresholds,
) -> Result<Option<SigmaEstimates>> {
    Ok(assess_point(estimates, z_index, ell_prime, th)?.sigma)
}

/// Serialized sigma estimate at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaRecord {
    #[serde(with = "crate::model::complex_pair")]
    pub z: Complex64,
    pub ell_prime: usize,
    pub gate: GateOutcome,
    #[serde(with = "crate::model::complex_pairs")]
    pub sigma: Vec<Complex64>,
}

impl SigmaRecord {
    pub fn new(z: Complex64, ell_prime: usize, point: &PointSigma) -> Self {
        Self {
            z,
            ell_prime,
            gate: point.gate,
            sigma: point.sigma.as_ref().map(|s| s.values().to_vec()).unwrap_or_default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::MomentEntry;
    use crate::zgrid::{GridKind, GridPoint};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn power_sums(a: &[f64], u: &[Complex64], count: usize) -> Vec<Complex64> {
        (0..count)
            .map(|k| a.iter().zip(u).map(|(w, x)| x.powu(k as u32) * *w).sum())
            .collect()
    }

    #[test]
    fn gate_single_entry() {
        let sys = HankelSystem::from_power_sums(&[c(1.0), c(5.0)], 1).unwrap();
        let th = PronyThresholds::new(0.5, 0.5, 0.5, 1e-4).unwrap();
        assert_eq!(conditioning_gate(&sys, &th), GateOutcome::Yes);
        let zero = HankelSystem::from_power_sums(&[c(0.0); 4], 2).unwrap();
        assert_eq!(conditioning_gate(&zero, &th), GateOutcome::NoSingular);
    }

    #[test]
    fn gate_rejects_collisions() {
        let b = power_sums(&[0.5, 0.5], &[c(1.5), c(1.5)], 4);
        let noisy: Vec<Complex64> = b.iter().enumerate().map(|(k, v)| v + 1e-9 * k as f64).collect();
        let sys = HankelSystem::from_power_sums(&noisy, 2).unwrap();
        let th = PronyThresholds::new(0.25, 0.125, 1e-3, 1e-4).unwrap();
        assert!(!conditioning_gate(&sys, &th).passed());
    }

    #[test]
    fn sigma_examples() {
        let th = PronyThresholds::new(0.5, 0.5, 1e-6, 1e-4).unwrap();
        let one = HankelSystem::from_power_sums(&[c(1.0), c(5.0)], 1).unwrap();
        assert!((solve_sigma(&one, &th).unwrap().sigma(1) - c(5.0)).norm() < 1e-15);
        let b = [c(1.0), c(1.5), c(2.5), c(4.5)];
        let sys = HankelSystem::from_power_sums(&b, 2).unwrap();
        let w = solve_hankel(&sys).unwrap();
        assert!((w[0] - c(-2.0)).norm() < 1e-12 && (w[1] - c(3.0)).norm() < 1e-12);
        let s = solve_sigma(&sys, &th).unwrap();
        assert!((s.sigma(1) - c(3.0)).norm() < 1e-12);
        assert!((s.sigma(2) - c(2.0)).norm() < 1e-12);
        assert!(recurrence_check(&b, &s.recurrence()).unwrap() < 1e-12);
    }

    #[test]
    fn recurrence_examples() {
        assert_eq!(recurrence_check(&[c(1.0), c(5.0)], &[c(5.0)]).unwrap(), 0.0);
        assert_eq!(recurrence_check(&[c(1.0), c(5.0)], &[c(6.0)]).unwrap(), 1.0);
        assert!(recurrence_check(&[c(1.0)], &[c(6.0)]).is_err());
    }

    #[test]
    fn thresholds_validate() {
        assert!(PronyThresholds::new(0.0, 0.5, 0.1, 0.1).is_err());
        assert!(PronyThresholds::new(0.5, 1.5, 0.1, 0.1).is_err());
        assert!(PronyThresholds::new(0.5, 0.5, -1.0, 0.1).is_err());
        let th = PronyThresholds::new(0.5, 0.5, 0.1, 0.1).unwrap();
        assert_eq!(th.gamma(), th.delta() * th.delta());
        assert!(theoretical_delta(64, 2, 0.5, 1.0) < 1e-30);
    }

    #[test]
    fn point_level_solve_and_record() {
        let u = [Complex64::new(0.3, 1.1), Complex64::new(-0.8, 0.2)];
        let b = power_sums(&[0.7, 0.3], &u, 4);
        let point = GridPoint { z: Complex64::new(0.0, 1.0), kind: GridKind::Arc, index: 0 };
        let est = MomentEstimates::new(vec![point], 3, vec![b.iter().map(|&m| MomentEntry::exact(m)).collect()]).unwrap();
        let th = PronyThresholds::new(0.25, 0.125, 1e-6, 1e-4).unwrap();
        let s = estimate_sigma_at_point(&est, 0, 2, &th).unwrap().unwrap();
        assert!((s.sigma(1) - (u[0] + u[1])).norm() < 1e-12);
        assert!((s.sigma(2) - u[0] * u[1]).norm() < 1e-12);
        assert!(estimate_sigma_at_point(&est, 0, 3, &th).is_err());
        let rec = SigmaRecord::new(point.z, 2, &assess_point(&est, 0, 2, &th).unwrap());
        let v = serde_json::to_value(&rec).unwrap();
        assert_eq!(v["gate"], "yes");
        assert_eq!(v["sigma"].as_array().unwrap().len(), 2);
    }
}
