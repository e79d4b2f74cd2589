//! Dual function Q(λ), its subgradient, and the subgradient minimizer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, Plan};

/// Edge count above which per-edge bid optimization runs on the rayon pool.
const PAR_EDGES: usize = 256;
/// Length of the no-improvement window used by the stopping rule.
pub const STALL_WINDOW: usize = 50;
/// Non-improving steps tolerated by [`StepRule::PolyakLevel`] before it
/// halves δ and restarts from the best iterate.
pub const LEVEL_PATIENCE: usize = 10;
/// Steps between refreshes of the recovered primal value used as a level
/// floor.
pub const TARGET_REFRESH: usize = 10;

/// Everything one evaluation of Q produces at a given λ.
#[derive(Clone, Debug)]
pub struct DualEvaluation {
    pub value: f64,
    /// 0/1 allocation (at most one winner per type) and the per-edge
    /// optimal bids at this λ.
    pub plan: Plan,
    /// π(λ)_ik = s_i · max_b h(r_ik(1 − λ_k), b), per edge.
    pub per_edge_profit: Vec<f64>,
    /// Winning campaign index per impression type, if any edge is profitable.
    pub winner: Vec<Option<usize>>,
    /// v_k(x(λ), b(λ)).
    pub spend: Vec<f64>,
}

/// Per-edge bid and scaled profit at λ, indexed like `instance.edges()`.
fn edge_optima(instance: &Instance, lambda: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let one = |e: usize| {
        let edge = &instance.edges()[e];
        let z = edge.revenue * (1.0 - lambda[edge.campaign]);
        let c = instance.edge_landscape(e).optimal_bid(z);
        (c.bid, c.value * instance.impressions()[edge.impression].supply)
    };
    let pairs: Vec<(f64, f64)> = if instance.n_edges() >= PAR_EDGES {
        (0..instance.n_edges()).into_par_iter().map(one).collect()
    } else {
        (0..instance.n_edges()).map(one).collect()
    };
    pairs.into_iter().unzip()
}

/// Picks the profit-maximizing edge among `edges`; exact ties go to the
/// lexicographically smallest campaign id.
fn pick_winner(instance: &Instance, edges: &[usize], profit: &[f64]) -> Option<usize> {
    let campaigns = instance.campaigns();
    let mut best: Option<usize> = None;
    for &e in edges {
        best = match best {
            None => Some(e),
            Some(cur) => {
                let better = profit[e] > profit[cur]
                    || (profit[e] == profit[cur]
                        && campaigns[instance.edges()[e].campaign].id < campaigns[instance.edges()[cur].campaign].id);
                Some(if better { e } else { cur })
            }
        };
    }
    best.filter(|&e| profit[e] > 0.0)
}

fn check_lambda(instance: &Instance, lambda: &[f64]) -> Result<()> {
    if lambda.len() != instance.campaigns().len() {
        return Err(Error::Config(format!(
            "λ has {} entries for {} campaigns",
            lambda.len(),
            instance.campaigns().len()
        )));
    }
    if let Some(bad) = lambda.iter().find(|l| !l.is_finite()) {
        return Err(Error::domain(*bad, "finite λ"));
    }
    Ok(())
}

/// Q(λ) = Σ_i ψ_i(λ) + Σ_k p_k(λ_k).
pub fn eval_q(instance: &Instance, lambda: &[f64]) -> Result<DualEvaluation> {
    check_lambda(instance, lambda)?;
    let (bid, profit) = edge_optima(instance, lambda);
    let mut x = vec![0.0; instance.n_edges()];
    let mut winner = vec![None; instance.impressions().len()];
    let mut spend = vec![0.0; instance.campaigns().len()];
    let mut value = 0.0;
    for (i, t) in instance.impressions().iter().enumerate() {
        if let Some(e) = pick_winner(instance, instance.edges_of_impression(i), &profit) {
            let edge = &instance.edges()[e];
            x[e] = 1.0;
            winner[i] = Some(edge.campaign);
            value += profit[e];
            spend[edge.campaign] += edge.revenue * t.supply * instance.edge_landscape(e).rho_unchecked(bid[e]);
        }
    }
    for (c, &l) in instance.campaigns().iter().zip(lambda) {
        value += c.utility.conjugate(l);
    }
    Ok(DualEvaluation {
        value,
        plan: Plan { x, bid },
        per_edge_profit: profit,
        winner,
        spend,
    })
}

/// ψ_i(λ) computed for impression type `i` alone.
pub fn psi(instance: &Instance, lambda: &[f64], i: usize) -> f64 {
    let t = &instance.impressions()[i];
    instance
        .edges_of_impression(i)
        .iter()
        .map(|&e| {
            let edge = &instance.edges()[e];
            let z = edge.revenue * (1.0 - lambda[edge.campaign]);
            instance.edge_landscape(e).optimal_bid(z).value * t.supply
        })
        .fold(0.0, f64::max)
}

/// g_k = p′_k(λ_k) − v_k(x(λ), b(λ)).
pub fn subgradient_of(instance: &Instance, lambda: &[f64], eval: &DualEvaluation) -> Vec<f64> {
    instance
        .campaigns()
        .iter()
        .zip(lambda)
        .zip(&eval.spend)
        .map(|((c, &l), &v)| c.utility.conjugate_subgradient(l) - v)
        .collect()
}

pub fn subgradient(instance: &Instance, lambda: &[f64]) -> Result<Vec<f64>> {
    let eval = eval_q(instance, lambda)?;
    Ok(subgradient_of(instance, lambda, &eval))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// η_t = scale / ‖g_t‖: every step moves λ by exactly `scale`.
    ConstantStepLength,
    /// η_t = scale / √t.
    InverseSqrt,
    /// η_t = scale / (‖g_t‖ √t): step length shrinks like 1/√t.
    DiminishingStepLength,
    /// Polyak step toward the level Q_best − δ, with δ₀ = 0.1·scale·max(1, |Q|).
    /// δ halves, and the walk restarts from the best iterate, after
    /// `LEVEL_PATIENCE` steps without a new best. With `primal_target` set,
    /// δ is also capped by Q_best − F̂ where F̂ is the best recovered primal
    /// value, so the level never drops below a known lower bound on min Q.
    PolyakLevel,
}

impl std::str::FromStr for StepRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant_step_length" => Ok(StepRule::ConstantStepLength),
            "inverse_sqrt" => Ok(StepRule::InverseSqrt),
            "diminishing_step_length" => Ok(StepRule::DiminishingStepLength),
            "polyak_level" => Ok(StepRule::PolyakLevel),
            other => Err(format!("unknown step rule {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub max_iters: usize,
    pub step_rule: StepRule,
    pub step_scale: f64,
    pub tol_rel: f64,
    /// Recorded for provenance; the method itself is deterministic.
    pub seed: u64,
    /// Also try the running average of the iterates at the end.
    pub average_iterates: bool,
    /// Keep each λ_k inside `[dual_lower_bound, 1]`, a box that always holds
    /// a minimizer: above 1 no edge of the campaign has positive surplus.
    pub project: bool,
    /// Let [`StepRule::PolyakLevel`] use recovered primal values as a floor.
    pub primal_target: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iters: 2000,
            step_rule: StepRule::PolyakLevel,
            step_scale: 0.1,
            tol_rel: 1e-6,
            seed: 0,
            average_iterates: false,
            project: true,
            primal_target: true,
        }
    }
}

impl SolveConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::Config(format!(
                "step_scale {} must be positive",
                self.step_scale
            )));
        }
        if !(self.tol_rel > 0.0) {
            return Err(Error::Config(format!("tol_rel {} must be positive", self.tol_rel)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iter: usize,
    pub q: f64,
    pub grad_norm: f64,
    /// η used to leave this iterate (0 on the last one).
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub lambda_best: Vec<f64>,
    pub q_best: f64,
    pub history: Vec<HistoryEntry>,
    /// Subgradient steps taken (0 when only λ₀ was evaluated).
    pub iterations_used: usize,
    /// True when the stall rule fired, or an exact zero subgradient was hit.
    pub converged: bool,
}

/// Subgradient descent on Q from λ₀ = 0, keeping the best iterate.
///
/// `max_iters` bounds the number of steps; λ₀ is always evaluated, so
/// `max_iters = 0` returns Q(0).
pub fn minimize_q(instance: &Instance, config: &SolveConfig) -> Result<SolveResult> {
    config.check()?;
    let k = instance.campaigns().len();
    let mut lambda = vec![0.0; k];
    let mut avg = vec![0.0; k];
    let mut lambda_best = lambda.clone();
    let mut q_best = f64::INFINITY;
    let mut best_trace: Vec<f64> = Vec::new();
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut converged = false;
    let mut t = 0;
    // PolyakLevel state
    let mut since_best = 0;
    let mut target: Option<f64> = None;
    let mut target_stale = true;
    let mut delta = f64::NAN;

    loop {
        let eval = eval_q(instance, &lambda)?;
        let mut g = subgradient_of(instance, &lambda, &eval);
        let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !eval.value.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Solver {
                iteration: t,
                message: format!("non-finite Q = {} or |g| = {grad_norm}", eval.value),
                history,
            });
        }
        if eval.value < q_best {
            q_best = eval.value;
            lambda_best.clone_from(&lambda);
            since_best = 0;
            target_stale = true;
        } else {
            since_best += 1;
        }
        best_trace.push(q_best);
        for (a, l) in avg.iter_mut().zip(&lambda) {
            *a += (l - *a) / (t + 1) as f64;
        }

        let stalled = best_trace.len() > STALL_WINDOW && {
            let old = best_trace[best_trace.len() - 1 - STALL_WINDOW];
            old - q_best <= config.tol_rel * q_best.abs().max(1.0)
        };
        if grad_norm == 0.0 || stalled {
            converged = true;
        }
        if converged || t >= config.max_iters {
            history.push(HistoryEntry {
                iter: t,
                q: eval.value,
                grad_norm,
                step: 0.0,
            });
            break;
        }

        t += 1;
        let step = match config.step_rule {
            StepRule::ConstantStepLength => config.step_scale / grad_norm,
            StepRule::InverseSqrt => config.step_scale / (t as f64).sqrt(),
            StepRule::DiminishingStepLength => config.step_scale / (grad_norm * (t as f64).sqrt()),
            StepRule::PolyakLevel => {
                if delta.is_nan() {
                    delta = 0.1 * config.step_scale * q_best.abs().max(1.0);
                }
                if since_best >= LEVEL_PATIENCE {
                    delta *= 0.5;
                    since_best = 0;
                    lambda.clone_from(&lambda_best);
                    g = subgradient(instance, &lambda)?;
                }
                if config.primal_target && target_stale && (t - 1) % TARGET_REFRESH == 0 {
                    if let Some(f) = crate::recovery::primal_value(instance, &lambda_best) {
                        target = Some(target.map_or(f, |old: f64| old.max(f)));
                    }
                    target_stale = false;
                }
                if let Some(f) = target {
                    delta = delta.min((q_best - f).max(1e-15 * q_best.abs().max(1.0)));
                }
                let q_here = if lambda == lambda_best { q_best } else { eval.value };
                let norm2: f64 = g.iter().map(|v| v * v).sum();
                if norm2 == 0.0 {
                    0.0
                } else {
                    (q_here - (q_best - delta)) / norm2
                }
            }
        };
        history.push(HistoryEntry {
            iter: t - 1,
            q: eval.value,
            grad_norm,
            step,
        });
        for (l, gk) in lambda.iter_mut().zip(&g) {
            *l -= step * gk;
        }
        if config.project {
            for (l, c) in lambda.iter_mut().zip(instance.campaigns()) {
                *l = l.clamp(c.utility.dual_lower_bound(), 1.0);
            }
        }
    }

    if config.average_iterates {
        let q_avg = eval_q(instance, &avg)?.value;
        if q_avg < q_best {
            q_best = q_avg;
            lambda_best = avg;
        }
    }
    log::debug!("dual solve: {t} steps, Q_best = {q_best}, converged = {converged}");
    Ok(SolveResult {
        lambda_best,
        q_best,
        history,
        iterations_used: t,
        converged,
    })
}
