//! Discrete-event RTB replay: plan-driven and greedy policies, MPC
//! re-solving, and the two sweep experiments.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auction::AuctionRule;
use crate::dual::SolveConfig;
use crate::error::{Error, Result};
use crate::instance::{Instance, Plan};
use crate::recovery::{two_phase, RecoveryConfig, RecoveryStatus};
use crate::rng::{substream, substream_indexed};
use crate::stats::{mean_se, paired_greater_p};
use crate::utility::UtilitySpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpressionEvent {
    pub seq: usize,
    pub impression: usize,
    /// Highest competing bid.
    pub market_price: f64,
    pub rule: AuctionRule,
}

/// round(s_i) events per impression type with market prices drawn from the
/// type's landscape, in a seeded random order.
pub fn generate_stream(instance: &Instance, seed: u64) -> Vec<ImpressionEvent> {
    let mut rng = substream(seed, "stream");
    let mut events = Vec::new();
    for (i, t) in instance.impressions().iter().enumerate() {
        let land = instance.landscape(i);
        let count = t.supply.max(0.0).round() as usize;
        for _ in 0..count {
            events.push(ImpressionEvent {
                seq: 0,
                impression: i,
                market_price: land.sample_competing_bid(&mut rng),
                rule: land.rule(),
            });
        }
    }
    events.shuffle(&mut rng);
    for (n, ev) in events.iter_mut().enumerate() {
        ev.seq = n;
    }
    events
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    TwoPhase,
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub replications: usize,
    /// Multiplier applied to every campaign budget during replay.
    pub budget_fraction: f64,
    /// MPC period in events.
    pub resolve_every: Option<usize>,
    /// Evaluation click rates per edge; planning CTRs when absent.
    pub test_ctr: Option<Vec<f64>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            replications: 100,
            budget_fraction: 1.0,
            resolve_every: None,
            test_ctr: None,
        }
    }
}

impl SimConfig {
    fn check(&self, instance: &Instance) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be positive".into()));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction.is_finite()) {
            return Err(Error::Config(format!(
                "budget_fraction {} must be positive",
                self.budget_fraction
            )));
        }
        if self.resolve_every == Some(0) {
            return Err(Error::Config("resolve_every must be positive".into()));
        }
        if let Some(ctr) = &self.test_ctr {
            if ctr.len() != instance.n_edges() {
                return Err(Error::Config(format!(
                    "test_ctr has {} entries for {} edges",
                    ctr.len(),
                    instance.n_edges()
                )));
            }
            if ctr.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Config("test_ctr entries must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    fn ctr(&self, instance: &Instance) -> Vec<f64> {
        self.test_ctr
            .clone()
            .unwrap_or_else(|| instance.edges().iter().map(|e| e.ctr).collect())
    }

    fn budgets(&self, instance: &Instance) -> Vec<f64> {
        instance.budgets().iter().map(|m| m * self.budget_fraction).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub profit: f64,
    pub revenue: f64,
    pub payments: f64,
    pub spend: Vec<f64>,
    pub clicks: Vec<u64>,
    pub budget_utilization: f64,
    pub bids: u64,
    pub wins: u64,
    pub resolves: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_profit: f64,
    pub se_profit: f64,
    pub mean_budget_utilization: f64,
    pub se_budget_utilization: f64,
    pub mean_spend: Vec<f64>,
    pub mean_clicks: f64,
    pub mean_wins: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: Policy,
    pub campaign_ids: Vec<String>,
    pub total_budget: f64,
    pub replications: Vec<ReplicationResult>,
    pub aggregate: Aggregate,
}

impl SimReport {
    fn new(policy: Policy, instance: &Instance, total_budget: f64, replications: Vec<ReplicationResult>) -> SimReport {
        let col = |f: &dyn Fn(&ReplicationResult) -> f64| -> Vec<f64> { replications.iter().map(f).collect() };
        let (mean_profit, se_profit) = mean_se(&col(&|r| r.profit));
        let (mean_bu, se_bu) = mean_se(&col(&|r| r.budget_utilization));
        let n = replications.len().max(1) as f64;
        let k = instance.campaigns().len();
        let mean_spend = (0..k)
            .map(|c| replications.iter().map(|r| r.spend[c]).sum::<f64>() / n)
            .collect();
        let aggregate = Aggregate {
            mean_profit,
            se_profit,
            mean_budget_utilization: mean_bu,
            se_budget_utilization: se_bu,
            mean_spend,
            mean_clicks: col(&|r| r.clicks.iter().sum::<u64>() as f64).iter().sum::<f64>() / n,
            mean_wins: col(&|r| r.wins as f64).iter().sum::<f64>() / n,
        };
        SimReport {
            policy,
            campaign_ids: instance.campaigns().iter().map(|c| c.id.clone()).collect(),
            total_budget,
            replications,
            aggregate,
        }
    }

    pub fn profits(&self) -> Vec<f64> {
        self.replications.iter().map(|r| r.profit).collect()
    }
}

/// Per-replication money and counters.
struct Ledger {
    remaining: Vec<f64>,
    spend: Vec<f64>,
    clicks: Vec<u64>,
    revenue: f64,
    payments: f64,
    bids: u64,
    wins: u64,
}

impl Ledger {
    fn new(budgets: &[f64]) -> Ledger {
        Ledger {
            remaining: budgets.to_vec(),
            spend: vec![0.0; budgets.len()],
            clicks: vec![0; budgets.len()],
            revenue: 0.0,
            payments: 0.0,
            bids: 0,
            wins: 0,
        }
    }

    /// A campaign keeps bidding while it can still afford one click.
    fn eligible(&self, instance: &Instance, k: usize) -> bool {
        self.remaining[k] >= instance.campaigns()[k].cpc
    }

    fn settle(&mut self, instance: &Instance, e: usize, bid: f64, ev: &ImpressionEvent, u_click: f64, ctr: &[f64]) {
        self.bids += 1;
        if bid <= ev.market_price {
            return;
        }
        self.wins += 1;
        self.payments += ev.rule.payment(bid, ev.market_price);
        if u_click < ctr[e] {
            let k = instance.edges()[e].campaign;
            let q = instance.campaigns()[k].cpc;
            self.clicks[k] += 1;
            self.revenue += q;
            self.spend[k] += q;
            self.remaining[k] -= q;
        }
    }

    fn finish(self, replication: usize, total_budget: f64, resolves: usize) -> ReplicationResult {
        let total_spend: f64 = self.spend.iter().sum();
        ReplicationResult {
            replication,
            profit: self.revenue - self.payments,
            revenue: self.revenue,
            payments: self.payments,
            spend: self.spend,
            clicks: self.clicks,
            budget_utilization: if total_budget > 0.0 {
                total_spend / total_budget
            } else {
                0.0
            },
            bids: self.bids,
            wins: self.wins,
            resolves,
        }
    }
}

/// Samples an edge of type `i` from the plan, dropping depleted campaigns and
/// renormalizing over what is left (the no-bid mass included).
fn sample_from_plan(instance: &Instance, plan: &Plan, ledger: &Ledger, i: usize, u: f64) -> Option<usize> {
    let edges = instance.edges_of_impression(i);
    let total: f64 = edges.iter().map(|&e| plan.x[e]).sum();
    let no_bid = (1.0 - total).max(0.0);
    let live: f64 = edges
        .iter()
        .filter(|&&e| ledger.eligible(instance, instance.edges()[e].campaign))
        .map(|&e| plan.x[e])
        .sum();
    let mass = live + no_bid;
    if live <= 0.0 || mass <= 0.0 {
        return None;
    }
    let mut target = u * mass;
    for &e in edges {
        if plan.x[e] <= 0.0 || !ledger.eligible(instance, instance.edges()[e].campaign) {
            continue;
        }
        if target < plan.x[e] {
            return Some(e);
        }
        target -= plan.x[e];
    }
    None
}

fn check_plan(instance: &Instance, plan: &Plan) -> Result<()> {
    if plan.x.len() != instance.n_edges() || plan.bid.len() != instance.n_edges() {
        return Err(Error::Config(format!(
            "plan sized for {} edges, instance has {}",
            plan.x.len(),
            instance.n_edges()
        )));
    }
    Ok(())
}

fn replicate(
    config: &SimConfig,
    f: impl Fn(usize) -> Result<ReplicationResult> + Sync + Send,
) -> Result<Vec<ReplicationResult>> {
    (0..config.replications).into_par_iter().map(f).collect()
}

/// Replays `stream` under the randomized plan policy.
pub fn run_two_phase(
    instance: &Instance,
    plan: &Plan,
    stream: &[ImpressionEvent],
    config: &SimConfig,
) -> Result<SimReport> {
    config.check(instance)?;
    check_plan(instance, plan)?;
    let budgets = config.budgets(instance);
    let total: f64 = budgets.iter().sum();
    let ctr = config.ctr(instance);
    let reps = replicate(config, |r| {
        let mut sel = substream_indexed(config.seed, "select", r as u64);
        let mut clk = substream_indexed(config.seed, "clicks", r as u64);
        let mut ledger = Ledger::new(&budgets);
        for ev in stream {
            let (u_sel, u_click): (f64, f64) = (sel.random(), clk.random());
            if let Some(e) = sample_from_plan(instance, plan, &ledger, ev.impression, u_sel) {
                ledger.settle(instance, e, plan.bid[e], ev, u_click, &ctr);
            }
        }
        Ok(ledger.finish(r, total, 0))
    })?;
    Ok(SimReport::new(Policy::TwoPhase, instance, total, reps))
}

/// Greedy bid per edge: the optimal bid at full value z = r_ik.
pub fn greedy_bids(instance: &Instance) -> Vec<f64> {
    instance
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| instance.edge_landscape(e).optimal_bid(edge.revenue).bid)
        .collect()
}

/// Replays `stream` bidding for the highest-revenue campaign that can still
/// afford a click.
pub fn run_greedy(instance: &Instance, stream: &[ImpressionEvent], config: &SimConfig) -> Result<SimReport> {
    config.check(instance)?;
    let budgets = config.budgets(instance);
    let total: f64 = budgets.iter().sum();
    let ctr = config.ctr(instance);
    let bids = greedy_bids(instance);
    // candidate order per type: revenue descending, then campaign id
    let order: Vec<Vec<usize>> = (0..instance.impressions().len())
        .map(|i| {
            let mut es = instance.edges_of_impression(i).to_vec();
            es.sort_by(|&a, &b| {
                let (ea, eb) = (&instance.edges()[a], &instance.edges()[b]);
                eb.revenue.total_cmp(&ea.revenue).then_with(|| {
                    instance.campaigns()[ea.campaign]
                        .id
                        .cmp(&instance.campaigns()[eb.campaign].id)
                })
            });
            es
        })
        .collect();
    let reps = replicate(config, |r| {
        let mut sel = substream_indexed(config.seed, "select", r as u64);
        let mut clk = substream_indexed(config.seed, "clicks", r as u64);
        let mut ledger = Ledger::new(&budgets);
        for ev in stream {
            // drawn even though unused, to keep click draws aligned with the plan policy
            let (_u_sel, u_click): (f64, f64) = (sel.random(), clk.random());
            let pick = order[ev.impression]
                .iter()
                .copied()
                .find(|&e| ledger.eligible(instance, instance.edges()[e].campaign));
            if let Some(e) = pick {
                ledger.settle(instance, e, bids[e], ev, u_click, &ctr);
            }
        }
        Ok(ledger.finish(r, total, 0))
    })?;
    Ok(SimReport::new(Policy::Greedy, instance, total, reps))
}

/// Solver settings used by MPC re-solves and the experiments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub solve: SolveConfig,
    pub recovery: RecoveryConfig,
}

/// Plans with the two-phase pipeline and insists on a usable plan.
pub fn plan_instance(instance: &Instance, planner: &PlannerConfig) -> Result<Plan> {
    let out = two_phase(instance, &planner.solve, &planner.recovery)?;
    match (out.recovery.status, out.recovery.plan) {
        (RecoveryStatus::Infeasible, _) | (_, None) => Err(Error::Solver {
            iteration: out.solve.iterations_used,
            message: format!("recovery ended {:?} without a plan", out.recovery.status),
            history: out.solve.history,
        }),
        (_, Some(plan)) => Ok(plan),
    }
}

/// Plan policy with a re-solve after every `resolve_every` processed events,
/// using remaining budgets and the unseen share of each type's supply.
pub fn run_mpc(
    instance: &Instance,
    plan: &Plan,
    stream: &[ImpressionEvent],
    config: &SimConfig,
    planner: &PlannerConfig,
) -> Result<SimReport> {
    config.check(instance)?;
    check_plan(instance, plan)?;
    let period = config
        .resolve_every
        .ok_or_else(|| Error::Config("MPC needs resolve_every".into()))?;
    let budgets = config.budgets(instance);
    let total: f64 = budgets.iter().sum();
    let ctr = config.ctr(instance);
    let n_types = instance.impressions().len();
    let mut type_total = vec![0usize; n_types];
    for ev in stream {
        type_total[ev.impression] += 1;
    }
    let reps = replicate(config, |r| {
        let mut sel = substream_indexed(config.seed, "select", r as u64);
        let mut clk = substream_indexed(config.seed, "clicks", r as u64);
        let mut ledger = Ledger::new(&budgets);
        let mut current = plan.clone();
        let mut seen = vec![0usize; n_types];
        let mut resolves = 0;
        for (n, ev) in stream.iter().enumerate() {
            let (u_sel, u_click): (f64, f64) = (sel.random(), clk.random());
            if let Some(e) = sample_from_plan(instance, &current, &ledger, ev.impression, u_sel) {
                ledger.settle(instance, e, current.bid[e], ev, u_click, &ctr);
            }
            seen[ev.impression] += 1;
            if (n + 1) % period == 0 {
                resolves += 1;
                let supplies: Vec<f64> = instance
                    .impressions()
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        if type_total[i] == 0 {
                            0.0
                        } else {
                            t.supply * (type_total[i] - seen[i]) as f64 / type_total[i] as f64
                        }
                    })
                    .collect();
                let remaining: Vec<f64> = ledger.remaining.iter().map(|v| v.max(0.0)).collect();
                let sub = instance.with_budgets(&remaining).with_supplies(&supplies);
                match plan_instance(&sub, planner) {
                    Ok(p) => current = p,
                    Err(err) => log::warn!("re-solve after event {n} failed, keeping the previous plan: {err}"),
                }
            }
        }
        Ok(ledger.finish(r, total, resolves))
    })?;
    Ok(SimReport::new(Policy::TwoPhase, instance, total, reps))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSweepRow {
    pub fraction: f64,
    pub two_phase: Aggregate,
    pub greedy: Aggregate,
    pub relative_profit: f64,
    pub relative_budget_utilization: f64,
    /// One-sided paired test that the plan policy out-earns greedy.
    pub p_value: f64,
}

/// Scales all budgets by each fraction, plans, and replays both policies on
/// one shared stream (common random numbers across fractions and policies).
pub fn experiment_budget_sweep(
    instance: &Instance,
    fractions: &[f64],
    config: &SimConfig,
    planner: &PlannerConfig,
) -> Result<Vec<BudgetSweepRow>> {
    if fractions.is_empty() {
        return Err(Error::Config("no budget fractions given".into()));
    }
    let stream = generate_stream(instance, config.seed);
    let replay = SimConfig {
        budget_fraction: 1.0,
        resolve_every: None,
        ..config.clone()
    };
    fractions
        .iter()
        .map(|&f| {
            let scaled = instance.with_budget_fraction(f);
            let plan = plan_instance(&scaled, planner)?;
            let tp = run_two_phase(&scaled, &plan, &stream, &replay)?;
            let gr = run_greedy(&scaled, &stream, &replay)?;
            log::info!(
                "fraction {f}: two-phase profit {:.4}, greedy {:.4}",
                tp.aggregate.mean_profit,
                gr.aggregate.mean_profit
            );
            Ok(BudgetSweepRow {
                fraction: f,
                relative_profit: tp.aggregate.mean_profit / gr.aggregate.mean_profit,
                relative_budget_utilization: tp.aggregate.mean_budget_utilization
                    / gr.aggregate.mean_budget_utilization,
                p_value: paired_greater_p(&tp.profits(), &gr.profits()),
                two_phase: tp.aggregate,
                greedy: gr.aggregate,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySweepRow {
    pub multiplier: f64,
    pub quadratic: Aggregate,
    pub relative_profit: f64,
    pub relative_budget_utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySweep {
    /// The plain budget-cap run every row is compared against.
    pub baseline: Aggregate,
    pub rows: Vec<PenaltySweepRow>,
}

/// Every campaign switched to the quadratic utility with τ_k = mult / m_k.
pub fn with_penalty_multiplier(instance: &Instance, mult: f64) -> Instance {
    instance.with_utilities(|c| UtilitySpec::QuadraticTarget {
        budget: c.budget,
        tau: mult / c.budget,
    })
}

pub fn with_budget_caps(instance: &Instance) -> Instance {
    instance.with_utilities(|c| UtilitySpec::BudgetCap { budget: c.budget })
}

/// For each multiplier, plan under quadratic utilities with τ_k = mult/m_k
/// and replay, relative to the budget-cap plan on the same stream.
pub fn experiment_penalty_sweep(
    instance: &Instance,
    multipliers: &[f64],
    config: &SimConfig,
    planner: &PlannerConfig,
) -> Result<PenaltySweep> {
    if multipliers.is_empty() {
        return Err(Error::Config("no penalty multipliers given".into()));
    }
    let base = instance.with_budget_fraction(config.budget_fraction);
    let stream = generate_stream(&base, config.seed);
    let replay = SimConfig {
        budget_fraction: 1.0,
        resolve_every: None,
        ..config.clone()
    };
    let caps = with_budget_caps(&base);
    let baseline = run_two_phase(&caps, &plan_instance(&caps, planner)?, &stream, &replay)?.aggregate;
    let rows = multipliers
        .iter()
        .map(|&mult| {
            let inst = with_penalty_multiplier(&base, mult);
            let rep = run_two_phase(&inst, &plan_instance(&inst, planner)?, &stream, &replay)?;
            Ok(PenaltySweepRow {
                multiplier: mult,
                relative_profit: rep.aggregate.mean_profit / baseline.mean_profit,
                relative_budget_utilization: rep.aggregate.mean_budget_utilization / baseline.mean_budget_utilization,
                quadratic: rep.aggregate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PenaltySweep { baseline, rows })
}
