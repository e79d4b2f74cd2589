//! Small dense linear programs: bounded-variable primal simplex, Bland's rule.

use serde::Serialize;

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const OPT_EPS: f64 = 1e-10;
const FEAS_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// maximize c·x subject to rows and `lower ≤ x ≤ upper`.
///
/// Lower bounds must be finite; upper bounds may be `f64::INFINITY`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub status: LpStatus,
    pub iterations: usize,
}

impl LinearProgram {
    /// n variables on [0, 1], no rows, zero objective.
    pub fn unit_box(n: usize) -> LinearProgram {
        LinearProgram {
            objective: vec![0.0; n],
            rows: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![1.0; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) {
        self.rows.push(Row { coeffs, sense, rhs });
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Config("bound vectors do not match variable count".into()));
        }
        for (j, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !l.is_finite() || u.is_nan() || u < l {
                return Err(Error::Config(format!("variable {j}: bad bounds [{l}, {u}]")));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("non-finite objective coefficient".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.coeffs.len() != n {
                return Err(Error::Config(format!(
                    "row {i} has {} coefficients, expected {n}",
                    r.coeffs.len()
                )));
            }
            if !r.rhs.is_finite() || r.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(Error::Config(format!("row {i} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for r in &self.rows {
            let lhs: f64 = r.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let d = match r.sense {
                Sense::Le => lhs - r.rhs,
                Sense::Ge => r.rhs - lhs,
                Sense::Eq => (lhs - r.rhs).abs(),
            };
            worst = worst.max(d);
        }
        for ((&v, &l), &u) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(l - v).max(v - u);
        }
        worst
    }

    pub fn solve(&self) -> Result<LpSolution> {
        self.check()?;
        Ok(Tableau::build(self).run(self))
    }
}

/// Working state over shifted variables y = x − lower, with slacks and
/// artificials appended after the structural columns.
struct Tableau {
    m: usize,
    n_struct: usize,
    n_total: usize,
    /// m × n_total, row-major: B⁻¹A.
    t: Vec<f64>,
    /// Values of the basic variables.
    beta: Vec<f64>,
    basis: Vec<usize>,
    upper: Vec<f64>,
    at_upper: Vec<bool>,
    is_basic: Vec<bool>,
    artificial: Vec<bool>,
    iterations: usize,
    max_iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let n = lp.n_vars();
        let m = lp.rows.len();
        let n_slack = lp.rows.iter().filter(|r| r.sense != Sense::Eq).count();

        // Shift to y = x − l and orient every row so its rhs is non-negative.
        let mut rows: Vec<(Vec<f64>, f64, f64)> = Vec::with_capacity(m); // coeffs, slack coef, rhs
        for r in &lp.rows {
            let shift: f64 = r.coeffs.iter().zip(&lp.lower).map(|(a, l)| a * l).sum();
            let mut rhs = r.rhs - shift;
            let mut coeffs = r.coeffs.clone();
            let mut slack = match r.sense {
                Sense::Le => 1.0,
                Sense::Ge => -1.0,
                Sense::Eq => 0.0,
            };
            if rhs < 0.0 {
                rhs = -rhs;
                slack = -slack;
                coeffs.iter_mut().for_each(|a| *a = -*a);
            }
            rows.push((coeffs, slack, rhs));
        }
        let n_art = rows.iter().filter(|(_, s, _)| *s <= 0.0).count();
        let n_total = n + n_slack + n_art;

        let mut t = vec![0.0; m * n_total];
        let mut basis = vec![0; m];
        let mut upper: Vec<f64> = lp.lower.iter().zip(&lp.upper).map(|(l, u)| u - l).collect();
        upper.resize(n_total, f64::INFINITY);
        let mut artificial = vec![false; n_total];
        let mut next_slack = n;
        let mut next_art = n + n_slack;
        let mut beta = vec![0.0; m];
        for (i, (coeffs, slack, rhs)) in rows.into_iter().enumerate() {
            let row = &mut t[i * n_total..(i + 1) * n_total];
            row[..n].copy_from_slice(&coeffs);
            beta[i] = rhs;
            if slack != 0.0 {
                row[next_slack] = slack;
                if slack > 0.0 {
                    basis[i] = next_slack;
                }
                next_slack += 1;
            }
            if slack <= 0.0 {
                row[next_art] = 1.0;
                artificial[next_art] = true;
                basis[i] = next_art;
                next_art += 1;
            }
        }
        let mut is_basic = vec![false; n_total];
        for &b in &basis {
            is_basic[b] = true;
        }
        Tableau {
            m,
            n_struct: n,
            n_total,
            t,
            beta,
            basis,
            upper,
            at_upper: vec![false; n_total],
            is_basic,
            artificial,
            iterations: 0,
            max_iterations: 200 * (m + n_total) + 1000,
        }
    }

    fn run(mut self, lp: &LinearProgram) -> LpSolution {
        let n = self.n_struct;
        let has_art = self.artificial.iter().any(|&a| a);
        if has_art {
            let cost: Vec<f64> = self.artificial.iter().map(|&a| if a { -1.0 } else { 0.0 }).collect();
            match self.optimize(&cost) {
                // phase one is bounded by zero, so "unbounded" can only be round-off
                Outcome::IterationLimit | Outcome::Unbounded => return self.finish(lp, LpStatus::IterationLimit),
                Outcome::Optimal => {}
            }
            let infeas: f64 = (0..self.n_total)
                .filter(|&j| self.artificial[j])
                .map(|j| self.value_of(j))
                .sum();
            let scale = 1.0 + lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
            if infeas > FEAS_EPS * scale {
                return self.finish(lp, LpStatus::Infeasible);
            }
            // Artificials may stay basic at zero; pin them there.
            for j in 0..self.n_total {
                if self.artificial[j] {
                    self.upper[j] = 0.0;
                    self.at_upper[j] = false;
                }
            }
        }
        let mut cost = vec![0.0; self.n_total];
        cost[..n].copy_from_slice(&lp.objective);
        let status = match self.optimize(&cost) {
            Outcome::Optimal => LpStatus::Optimal,
            Outcome::Unbounded => LpStatus::Unbounded,
            Outcome::IterationLimit => LpStatus::IterationLimit,
        };
        self.finish(lp, status)
    }

    fn value_of(&self, j: usize) -> f64 {
        if self.is_basic[j] {
            let r = self.basis.iter().position(|&b| b == j).unwrap();
            self.beta[r]
        } else if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn finish(self, lp: &LinearProgram, status: LpStatus) -> LpSolution {
        let mut x: Vec<f64> = (0..self.n_struct).map(|j| lp.lower[j] + self.value_of(j)).collect();
        if status == LpStatus::Optimal {
            // clean up round-off so bounds hold exactly
            for ((v, &l), &u) in x.iter_mut().zip(&lp.lower).zip(&lp.upper) {
                *v = v.clamp(l, u);
            }
        }
        let value = lp.value_at(&x);
        LpSolution {
            x,
            value,
            status,
            iterations: self.iterations,
        }
    }

    fn optimize(&mut self, cost: &[f64]) -> Outcome {
        let nt = self.n_total;
        loop {
            if self.iterations >= self.max_iterations {
                return Outcome::IterationLimit;
            }
            // Bland: lowest-index improving column.
            let mut entering = None;
            for j in 0..nt {
                if self.is_basic[j] || self.upper[j] == 0.0 {
                    continue;
                }
                let mut d = cost[j];
                for r in 0..self.m {
                    d -= cost[self.basis[r]] * self.t[r * nt + j];
                }
                if (!self.at_upper[j] && d > OPT_EPS) || (self.at_upper[j] && d < -OPT_EPS) {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Outcome::Optimal;
            };
            self.iterations += 1;
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

            // Ratio test; ties go to the lowest basic index.
            let mut step = self.upper[j];
            let mut leave: Option<(usize, bool)> = None; // (row, leaves at upper)
            for r in 0..self.m {
                let alpha = dir * self.t[r * nt + j];
                let b = self.basis[r];
                let (limit, to_upper) = if alpha > PIVOT_EPS {
                    (self.beta[r].max(0.0) / alpha, false)
                } else if alpha < -PIVOT_EPS && self.upper[b].is_finite() {
                    ((self.upper[b] - self.beta[r]).max(0.0) / -alpha, true)
                } else {
                    continue;
                };
                let better = match leave {
                    _ if limit < step => true,
                    Some((lr, _)) if limit == step => b < self.basis[lr],
                    _ => false,
                };
                if better {
                    step = limit;
                    leave = Some((r, to_upper));
                }
            }
            if step.is_infinite() {
                return Outcome::Unbounded;
            }

            for r in 0..self.m {
                self.beta[r] -= step * dir * self.t[r * nt + j];
            }
            match leave {
                None => {
                    self.at_upper[j] = !self.at_upper[j];
                }
                Some((r, to_upper)) => {
                    let start = if self.at_upper[j] { self.upper[j] } else { 0.0 };
                    let old = self.basis[r];
                    self.beta[r] = start + dir * step;
                    self.is_basic[old] = false;
                    self.at_upper[old] = to_upper;
                    self.is_basic[j] = true;
                    self.at_upper[j] = false;
                    self.basis[r] = j;
                    self.pivot(r, j);
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let nt = self.n_total;
        let p = self.t[r * nt + j];
        for v in &mut self.t[r * nt..(r + 1) * nt] {
            *v /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * nt);
        let (prow, after) = rest.split_at_mut(nt);
        for row in before.chunks_mut(nt).chain(after.chunks_mut(nt)) {
            let f = row[j];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[j] = 0.0;
            }
        }
    }
}
