//! Second phase: fix bids from λ̂, then solve the allocation problem for x.

use serde::{Deserialize, Serialize};

use crate::dual::{minimize_q, SolveConfig, SolveResult};
use crate::error::Result;
use crate::ext::ExtReal;
use crate::instance::{Instance, Plan};
use crate::lp::{LinearProgram, LpStatus, Sense};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    /// Frank-Wolfe iteration cap.
    pub max_iters: usize,
    /// Stop once the Frank-Wolfe gap is below `gap_tol·max(1, |F|)`.
    pub gap_tol: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            max_iters: 20_000,
            gap_tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct RecoveryResult {
    /// Absent when infeasible or when the simplex gave up.
    pub plan: Option<Plan>,
    pub objective_value: ExtReal,
    pub status: RecoveryStatus,
    /// For spend-range campaigns on an infeasible problem: the largest floor
    /// fraction the fixed bids could still reach (column-sum bound).
    pub suggested_alpha: Vec<Option<f64>>,
    /// Final Frank-Wolfe gap, when that path ran.
    pub fw_gap: Option<f64>,
    /// Objective after each Frank-Wolfe iterate.
    pub trace: Vec<f64>,
}

/// b̂_ik = argmax_b h(r_ik(1 − λ̂_k), b) for every edge.
pub fn fix_bids(instance: &Instance, lambda: &[f64]) -> Vec<f64> {
    instance
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            let z = edge.revenue * (1.0 - lambda[edge.campaign]);
            instance.edge_landscape(e).optimal_bid(z).bid
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTerm {
    pub campaign: usize,
    pub tau: f64,
    pub target: f64,
}

/// The allocation problem for fixed bids: a linear part over x (one variable
/// per edge) plus optional concave quadratic spend penalties.
#[derive(Clone, Debug)]
pub struct AllocationProblem {
    pub lp: LinearProgram,
    /// c_ik = r_ik · s_i · ρ_i(b̂_ik), the spend per unit of x.
    pub spend_coeffs: Vec<f64>,
    pub quadratic: Vec<QuadraticTerm>,
    pub bids: Vec<f64>,
}

impl AllocationProblem {
    pub fn is_quadratic(&self) -> bool {
        !self.quadratic.is_empty()
    }

    fn campaign_spend(&self, instance: &Instance, k: usize, x: &[f64]) -> f64 {
        instance
            .edges_of_campaign(k)
            .iter()
            .map(|&e| self.spend_coeffs[e] * x[e])
            .sum()
    }

    /// Linear objective minus the quadratic penalties.
    pub fn value(&self, instance: &Instance, x: &[f64]) -> f64 {
        let mut f = self.lp.value_at(x);
        for q in &self.quadratic {
            let d = self.campaign_spend(instance, q.campaign, x) - q.target;
            f -= 0.5 * q.tau * d * d;
        }
        f
    }

    fn gradient(&self, instance: &Instance, x: &[f64]) -> Vec<f64> {
        let mut g = self.lp.objective.clone();
        for q in &self.quadratic {
            let d = self.campaign_spend(instance, q.campaign, x) - q.target;
            for &e in instance.edges_of_campaign(q.campaign) {
                g[e] -= q.tau * d * self.spend_coeffs[e];
            }
        }
        g
    }
}

/// Rows: Σ_k x_ik ≤ 1 per type, Σ_i c_ik x_ik ≤ m_k per campaign, plus a
/// floor row ≥ α·m_k for spend-range campaigns.
pub fn build_allocation_problem(instance: &Instance, bids: &[f64]) -> Result<AllocationProblem> {
    let n = instance.n_edges();
    let mut lp = LinearProgram::unit_box(n);
    let mut spend_coeffs = vec![0.0; n];
    for (e, edge) in instance.edges().iter().enumerate() {
        let land = instance.edge_landscape(e);
        let s = instance.impressions()[edge.impression].supply;
        let rho = land.rho(bids[e])?;
        spend_coeffs[e] = edge.revenue * s * rho;
        lp.objective[e] = land.h(edge.revenue, bids[e])? * s;
    }
    for i in 0..instance.impressions().len() {
        let edges = instance.edges_of_impression(i);
        if edges.is_empty() {
            continue;
        }
        let mut row = vec![0.0; n];
        for &e in edges {
            row[e] = 1.0;
        }
        lp.add_row(row, Sense::Le, 1.0);
    }
    let mut quadratic = Vec::new();
    for (k, c) in instance.campaigns().iter().enumerate() {
        let mut row = vec![0.0; n];
        for &e in instance.edges_of_campaign(k) {
            row[e] = spend_coeffs[e];
        }
        let floor = c.utility.min_spend();
        if floor > 0.0 {
            lp.add_row(row.clone(), Sense::Ge, floor);
        }
        lp.add_row(row, Sense::Le, c.utility.budget());
        if let Some(tau) = c.utility.quadratic_tau() {
            quadratic.push(QuadraticTerm {
                campaign: k,
                tau,
                target: c.utility.budget(),
            });
        }
    }
    Ok(AllocationProblem {
        lp,
        spend_coeffs,
        quadratic,
        bids: bids.to_vec(),
    })
}

fn suggested_alpha(instance: &Instance, problem: &AllocationProblem) -> Vec<Option<f64>> {
    instance
        .campaigns()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            (c.utility.min_spend() > 0.0).then(|| {
                let reach: f64 = instance
                    .edges_of_campaign(k)
                    .iter()
                    .map(|&e| problem.spend_coeffs[e])
                    .sum();
                (reach / c.utility.budget()).clamp(0.0, 1.0)
            })
        })
        .collect()
}

fn finish(
    instance: &Instance,
    problem: &AllocationProblem,
    x: Option<Vec<f64>>,
    status: RecoveryStatus,
    fw_gap: Option<f64>,
    trace: Vec<f64>,
) -> Result<RecoveryResult> {
    let suggested = if status == RecoveryStatus::Infeasible {
        suggested_alpha(instance, problem)
    } else {
        vec![None; instance.campaigns().len()]
    };
    let (plan, objective_value) = match x {
        Some(x) => {
            let plan = Plan {
                x: x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
                bid: problem.bids.clone(),
            };
            let f = instance.objective(&plan)?;
            (Some(plan), f)
        }
        None => (None, ExtReal::NegInf),
    };
    Ok(RecoveryResult {
        plan,
        objective_value,
        status,
        suggested_alpha: suggested,
        fw_gap,
        trace,
    })
}

/// Solves the linear part only (exact when no campaign is quadratic).
pub fn solve_linear_recovery(instance: &Instance, problem: &AllocationProblem) -> Result<RecoveryResult> {
    let sol = problem.lp.solve()?;
    let (x, status) = match sol.status {
        LpStatus::Optimal => (Some(sol.x), RecoveryStatus::Optimal),
        LpStatus::Infeasible => (None, RecoveryStatus::Infeasible),
        // x is boxed in [0, 1], so unbounded means numerical trouble
        LpStatus::Unbounded | LpStatus::IterationLimit => (None, RecoveryStatus::IterationLimit),
    };
    finish(instance, problem, x, status, None, Vec::new())
}

/// Frank-Wolfe with exact line search, using the simplex as the linear
/// oracle. Starts from the linear optimum.
pub fn solve_quadratic_recovery(
    instance: &Instance,
    problem: &AllocationProblem,
    config: &RecoveryConfig,
) -> Result<RecoveryResult> {
    let start = problem.lp.solve()?;
    match start.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return finish(instance, problem, None, RecoveryStatus::Infeasible, None, Vec::new()),
        _ => {
            return finish(
                instance,
                problem,
                None,
                RecoveryStatus::IterationLimit,
                None,
                Vec::new(),
            )
        }
    }
    let mut x = start.x;
    let mut f = problem.value(instance, &x);
    let mut trace = vec![f];
    let mut oracle = problem.lp.clone();
    let mut gap = f64::INFINITY;

    for _ in 0..config.max_iters {
        let grad = problem.gradient(instance, &x);
        oracle.objective.clone_from(&grad);
        let s = oracle.solve()?;
        if s.status != LpStatus::Optimal {
            log::warn!("Frank-Wolfe oracle returned {:?}", s.status);
            return finish(
                instance,
                problem,
                Some(x),
                RecoveryStatus::IterationLimit,
                Some(gap),
                trace,
            );
        }
        let d: Vec<f64> = s.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        gap = grad.iter().zip(&d).map(|(g, v)| g * v).sum::<f64>();
        if gap <= config.gap_tol * f.abs().max(1.0) {
            return finish(
                instance,
                problem,
                Some(x),
                RecoveryStatus::Optimal,
                Some(gap.max(0.0)),
                trace,
            );
        }
        // φ(γ) = F(x + γd) is a concave quadratic with φ'(0) = gap.
        let curv: f64 = problem
            .quadratic
            .iter()
            .map(|q| {
                let cd = problem.campaign_spend(instance, q.campaign, &d);
                q.tau * cd * cd
            })
            .sum();
        let gamma = if curv > 0.0 { (gap / curv).min(1.0) } else { 1.0 };
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += gamma * di;
        }
        f = problem.value(instance, &x);
        trace.push(f);
    }
    finish(
        instance,
        problem,
        Some(x),
        RecoveryStatus::IterationLimit,
        Some(gap),
        trace,
    )
}

/// fix_bids → build_allocation_problem → simplex or Frank-Wolfe.
pub fn recover(instance: &Instance, lambda: &[f64], config: &RecoveryConfig) -> Result<RecoveryResult> {
    let bids = fix_bids(instance, lambda);
    let problem = build_allocation_problem(instance, &bids)?;
    let res = if problem.is_quadratic() {
        solve_quadratic_recovery(instance, &problem, config)?
    } else {
        solve_linear_recovery(instance, &problem)?
    };
    if res.status == RecoveryStatus::Infeasible {
        log::warn!("allocation problem infeasible for the fixed bids");
    }
    Ok(res)
}

/// F of the plan recovered at λ, when recovery yields a finite value.
/// Quiet: infeasibility is expected while λ is still far from optimal.
pub fn primal_value(instance: &Instance, lambda: &[f64]) -> Option<f64> {
    let bids = fix_bids(instance, lambda);
    let problem = build_allocation_problem(instance, &bids).ok()?;
    let res = if problem.is_quadratic() {
        solve_quadratic_recovery(instance, &problem, &RecoveryConfig::default()).ok()?
    } else {
        solve_linear_recovery(instance, &problem).ok()?
    };
    res.objective_value.finite()
}

/// Output of the full two-phase pipeline.
#[derive(Clone, Debug)]
pub struct TwoPhaseOutcome {
    pub solve: SolveResult,
    pub recovery: RecoveryResult,
}

impl TwoPhaseOutcome {
    /// Q_best − F(x̂, b̂); infinite when recovery produced no finite value.
    pub fn gap(&self) -> f64 {
        self.solve.q_best - self.recovery.objective_value.to_f64()
    }
}

/// minimize_q followed by recover at the best λ.
pub fn two_phase(instance: &Instance, solve: &SolveConfig, recovery: &RecoveryConfig) -> Result<TwoPhaseOutcome> {
    let solve = minimize_q(instance, solve)?;
    let recovery = recover(instance, &solve.lambda_best, recovery)?;
    Ok(TwoPhaseOutcome { solve, recovery })
}
