//! Dense two-phase simplex for small linear programs over `x >= 0`.

use crate::error::{param, Result};

/// Pivot and reduced-cost tolerance.
const PIVOT_TOL: f64 = 1e-10;
/// Phase-one objective above which a program is declared infeasible,
/// relative to the right-hand-side scale.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;
const MAX_PIVOTS: usize = 50_000;
const DANTZIG_PIVOTS: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn le(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, relation: Relation::Le, rhs }
    }
    pub fn ge(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, relation: Relation::Ge, rhs }
    }
    pub fn eq(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, relation: Relation::Eq, rhs }
    }
}

/// Minimise `objective . x` subject to the constraints, `x >= 0` and the
/// optional upper bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub upper: Vec<Option<f64>>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            upper: vec![None; num_vars],
        }
    }

    pub fn push(&mut self, c: Constraint) {
        self.constraints.push(c);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows + 1` rows of `cols + 1` entries; the last row is the cost row and
    /// the last column the right-hand side.
    t: Vec<f64>,
    basis: Vec<usize>,
    blocked: Vec<bool>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let inv = 1.0 / self.at(pr, pc);
        for c in 0..w {
            self.t[pr * w + c] *= inv;
        }
        self.t[pr * w + pc] = 1.0;
        let pivot_row: Vec<f64> = self.t[pr * w..(pr + 1) * w].to_vec();
        for r in 0..=self.rows {
            if r == pr {
                continue;
            }
            let f = self.t[r * w + pc];
            if f == 0.0 {
                continue;
            }
            for (c, pv) in pivot_row.iter().enumerate() {
                if *pv != 0.0 {
                    self.t[r * w + c] -= f * pv;
                }
            }
            self.t[r * w + pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Loads `cost` into the last row in reduced form.
    fn set_costs(&mut self, cost: &[f64]) {
        let w = self.cols + 1;
        let base = self.rows * w;
        for c in 0..w {
            self.t[base + c] = if c < self.cols { cost[c] } else { 0.0 };
        }
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for c in 0..w {
                    self.t[base + c] -= cb * self.t[r * w + c];
                }
            }
        }
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..self.cols {
            if self.blocked[c] {
                continue;
            }
            let d = self.at(self.rows, c);
            if d < -PIVOT_TOL {
                if bland {
                    return Some(c);
                }
                if best.is_none_or(|(_, b)| d < b) {
                    best = Some((c, d));
                }
            }
        }
        best.map(|(c, _)| c)
    }

    fn leaving(&self, col: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.rows {
            let a = self.at(r, col);
            if a > PIVOT_TOL {
                let ratio = self.rhs(r) / a;
                let better = match best {
                    None => true,
                    Some((br, b)) => {
                        ratio < b - 1e-12 || (ratio <= b + 1e-12 && self.basis[r] < self.basis[br])
                    }
                };
                if better {
                    best = Some((r, ratio));
                }
            }
        }
        best.map(|(r, _)| r)
    }

    /// Runs simplex iterations; `false` when the objective is unbounded.
    fn optimise(&mut self) -> Result<bool> {
        for step in 0..MAX_PIVOTS {
            let Some(col) = self.entering(step >= DANTZIG_PIVOTS) else {
                return Ok(true);
            };
            let Some(row) = self.leaving(col) else {
                return Ok(false);
            };
            self.pivot(row, col);
        }
        Err(crate::error::Error::Internal("simplex pivot limit reached".into()))
    }

    fn objective_value(&self) -> f64 {
        -self.at(self.rows, self.cols)
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpOutcome> {
    let n = lp.num_vars;
    if lp.objective.len() != n || lp.upper.len() != n {
        return param("objective and bounds must match the variable count");
    }
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &lp.constraints {
        if c.coeffs.len() != n {
            return param("constraint width differs from the variable count");
        }
        if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
            return param("constraint rows must be finite");
        }
        rows.push((c.coeffs.clone(), c.relation, c.rhs));
    }
    for (j, u) in lp.upper.iter().enumerate() {
        if let Some(u) = *u {
            if !u.is_finite() {
                return param("upper bounds must be finite");
            }
            let mut coeffs = vec![0.0; n];
            coeffs[j] = 1.0;
            rows.push((coeffs, Relation::Le, u));
        }
    }
    for row in rows.iter_mut() {
        if row.2 < 0.0 {
            row.0.iter_mut().for_each(|v| *v = -*v);
            row.2 = -row.2;
            row.1 = match row.1 {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }
    let m = rows.len();
    let slacks = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let artificials = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let cols = n + slacks + artificials;
    let w = cols + 1;
    let mut t = vec![0.0; (m + 1) * w];
    let mut basis = vec![0; m];
    let mut is_artificial = vec![false; cols];
    let (mut next_slack, mut next_art) = (n, n + slacks);
    let scale = rows.iter().map(|r| r.2).fold(1.0, f64::max);
    for (r, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        t[r * w..r * w + n].copy_from_slice(coeffs);
        t[r * w + cols] = *rhs;
        match rel {
            Relation::Le => {
                t[r * w + next_slack] = 1.0;
                basis[r] = next_slack;
                next_slack += 1;
            }
            Relation::Ge => {
                t[r * w + next_slack] = -1.0;
                next_slack += 1;
                t[r * w + next_art] = 1.0;
                is_artificial[next_art] = true;
                basis[r] = next_art;
                next_art += 1;
            }
            Relation::Eq => {
                t[r * w + next_art] = 1.0;
                is_artificial[next_art] = true;
                basis[r] = next_art;
                next_art += 1;
            }
        }
    }
    let mut tab = Tableau {
        rows: m,
        cols,
        t,
        basis,
        blocked: vec![false; cols],
    };
    if artificials > 0 {
        let phase_one: Vec<f64> = (0..cols).map(|c| if is_artificial[c] { 1.0 } else { 0.0 }).collect();
        tab.set_costs(&phase_one);
        tab.optimise()?;
        if tab.objective_value() > FEASIBILITY_MARGIN * scale {
            return Ok(LpOutcome::Infeasible);
        }
        for r in 0..m {
            if is_artificial[tab.basis[r]] {
                if let Some(c) = (0..cols).find(|&c| !is_artificial[c] && tab.at(r, c).abs() > 1e-9) {
                    tab.pivot(r, c);
                }
            }
        }
        tab.blocked = is_artificial.clone();
    }
    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.objective);
    tab.set_costs(&cost);
    if !tab.optimise()? {
        return Ok(LpOutcome::Unbounded);
    }
    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.rhs(r).max(0.0);
        }
    }
    let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal { x, value })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimum(out: LpOutcome) -> (Vec<f64>, f64) {
        match out {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximisation() {
        // max 3x + 5y st x <= 4, 2y <= 12, 3x + 2y <= 18
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-3.0, -5.0];
        lp.push(Constraint::le(vec![1.0, 0.0], 4.0));
        lp.push(Constraint::le(vec![0.0, 2.0], 12.0));
        lp.push(Constraint::le(vec![3.0, 2.0], 18.0));
        let (x, v) = optimum(solve(&lp).unwrap());
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
        assert!((v + 36.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + y st x + y = 3, x - y >= 1, y >= 0.5
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 2.0];
        lp.push(Constraint::eq(vec![1.0, 1.0], 3.0));
        lp.push(Constraint::ge(vec![1.0, -1.0], 1.0));
        lp.push(Constraint::ge(vec![0.0, 1.0], 0.5));
        let (x, v) = optimum(solve(&lp).unwrap());
        assert!((x[0] - 2.5).abs() < 1e-9 && (x[1] - 0.5).abs() < 1e-9);
        assert!((v - 3.5).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.push(Constraint::le(vec![1.0], 0.5));
        lp.push(Constraint::ge(vec![1.0], 1.0));
        assert_eq!(solve(&lp).unwrap(), LpOutcome::Infeasible);
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![-1.0];
        assert_eq!(solve(&lp).unwrap(), LpOutcome::Unbounded);
        lp.upper = vec![Some(7.0)];
        let (x, _) = optimum(solve(&lp).unwrap());
        assert!((x[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn negative_right_hand_sides() {
        // -x <= -2 means x >= 2.
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![1.0];
        lp.push(Constraint::le(vec![-1.0], -2.0));
        let (x, _) = optimum(solve(&lp).unwrap());
        assert!((x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_program_terminates() {
        let mut lp = LinearProgram::new(3);
        lp.objective = vec![-0.75, 20.0, -0.5];
        lp.push(Constraint::le(vec![0.25, -8.0, -1.0], 0.0));
        lp.push(Constraint::le(vec![0.5, -12.0, -0.5], 0.0));
        lp.push(Constraint::le(vec![0.0, 0.0, 1.0], 1.0));
        let (_, v) = optimum(solve(&lp).unwrap());
        assert!((v + 1.25).abs() < 1e-9);
    }

    #[test]
    fn malformed_rows_rejected() {
        let mut lp = LinearProgram::new(2);
        lp.push(Constraint::le(vec![1.0], 1.0));
        assert!(solve(&lp).is_err());
        let mut lp = LinearProgram::new(1);
        lp.push(Constraint::le(vec![f64::NAN], 1.0));
        assert!(solve(&lp).is_err());
    }
}
