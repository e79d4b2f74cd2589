//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

#![allow(clippy::type_complexity)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use bidalloc::auction::{BidLandscape, WinCurve};
use bidalloc::lp::LpStatus;
use bidalloc::sim::{
    experiment_budget_sweep, experiment_penalty_sweep, generate_stream, plan_instance, run_greedy, run_two_phase,
    PlannerConfig, SimConfig, SimReport,
};
use bidalloc::stats::spearman;
use bidalloc::synth::{market_instance, MarketShape};
use bidalloc::{
    eval_q, subgradient, two_phase, ExtReal, Instance, InstanceBuilder, RecoveryConfig, RecoveryStatus, SolveConfig,
    UtilitySpec,
};
use common::*;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn small_instances() -> Vec<Instance> {
    let mut r = rng(2024);
    (0..20).map(|_| random_instance(&mut r, &Shape::small())).collect()
}

fn medium_instances(seed: u64) -> Vec<Instance> {
    let mut r = rng(seed);
    (0..10).map(|_| random_instance(&mut r, &Shape::medium())).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (n, inst) in small_instances().iter().enumerate() {
        let out = two_phase(inst, &SolveConfig::default(), &RecoveryConfig::default()).map_err(|e| e.to_string())?;
        let f = out.recovery.objective_value.to_f64();
        let oracle = grid_optimum(inst, 64);
        let rel = (f - oracle).abs() / oracle.abs().max(1e-9);
        worst = worst.max(rel);
        if rel > 0.01 {
            failures.push(format!("#{n}: F={f:.6} oracle={oracle:.6}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        failures.is_empty() && secs < 120.0,
        format!(
            "worst relative difference {worst:.2e}, {secs:.1}s {}",
            failures.join("; ")
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (n, inst) in small_instances().iter().enumerate() {
        let out = two_phase(inst, &SolveConfig::default(), &RecoveryConfig::default()).map_err(|e| e.to_string())?;
        let q = out.solve.q_best;
        let rel = out.gap().abs() / q.abs().max(1.0);
        worst = worst.max(rel);
        if rel > 1e-3 || out.solve.iterations_used > 2000 {
            failures.push(format!("#{n}: Q={q:.6} F={:.6}", out.recovery.objective_value.to_f64()));
        }
    }

    // flat ρ on [0.3, 0.6] breaks the strict monotonicity condition
    let flat = BidLandscape::TabulatedEmpirical {
        bids: vec![0.0, 0.3, 0.6, 1.0],
        rho: vec![0.0, 0.4, 0.4, 1.0],
        beta: vec![0.0, 0.15, 0.15, 0.54],
    };
    if flat.check_conditions(256).passes() {
        return Err("flat landscape unexpectedly passes the condition check".into());
    }
    let inst = InstanceBuilder::new()
        .impression("flat", 400.0, flat)
        .impression(
            "beta",
            300.0,
            BidLandscape::SecondPriceBeta {
                a: 2.0,
                b: 3.0,
                max_bid: 1.0,
            },
        )
        .campaign("a", 2.0, UtilitySpec::BudgetCap { budget: 30.0 })
        .campaign("b", 3.0, UtilitySpec::BudgetCap { budget: 25.0 })
        .edge("flat", "a", 0.25)
        .edge("flat", "b", 0.2)
        .edge("beta", "b", 0.15)
        .build()
        .map_err(|e| e.to_string())?;
    let out = two_phase(&inst, &SolveConfig::default(), &RecoveryConfig::default()).map_err(|e| e.to_string())?;
    let plan_ok = out
        .recovery
        .plan
        .as_ref()
        .is_some_and(|p| inst.plan_violations(p).is_empty() && inst.objective(p).is_ok_and(|f| f.is_finite()));
    let f = out.recovery.objective_value.to_f64();
    let weak = out.solve.q_best >= f - 1e-9;
    ensure(
        failures.is_empty() && plan_ok && weak,
        format!(
            "worst relative gap {worst:.2e}; flat instance feasible={plan_ok} Q={:.4} F={f:.4} {}",
            out.solve.q_best,
            failures.join("; ")
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut r = rng(33);
    let mut worst = f64::NEG_INFINITY;
    let mut checked_finite = 0;
    for inst in medium_instances(3) {
        let k = inst.campaigns().len();
        for _ in 0..100 {
            let plan = random_feasible_plan(&mut r, &inst);
            let lambda: Vec<f64> = (0..k).map(|_| r.random_range(-2.0..2.0)).collect();
            let q = eval_q(&inst, &lambda).map_err(|e| e.to_string())?.value;
            if let ExtReal::Finite(f) = inst.objective(&plan).map_err(|e| e.to_string())? {
                checked_finite += 1;
                worst = worst.max(f - q);
            }
        }
    }
    ensure(
        worst <= 1e-7,
        format!(
            "max F−Q {worst:.3e} over {checked_finite} finite pairs of 1000, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut r = rng(44);
    let mut worst = 0.0f64;
    let mut lands = Vec::new();
    for _ in 0..4 {
        lands.push(BidLandscape::SecondPriceBeta {
            a: r.random_range(1.0..4.0),
            b: r.random_range(1.0..6.0),
            max_bid: r.random_range(0.5..3.0),
        });
        lands.push(BidLandscape::UniformCompetitors {
            n: r.random_range(1..6),
            alpha: r.random_range(0.3..=1.0),
            max_bid: r.random_range(0.5..3.0),
        });
    }
    let mut failures = 0;
    for land in &lands {
        let m = land.max_bid();
        for _ in 0..500 {
            let z = r.random_range(-0.2 * m..1.5 * m);
            let closed = land.closed_form_bid(z).ok_or("no closed form")?;
            let numeric = land.numeric_bid(z, 512);
            let d = (closed.bid - numeric.bid).abs() / m;
            worst = worst.max(d);
            if d > 1.0 / 256.0 {
                failures += 1;
            }
        }
    }
    ensure(
        failures == 0,
        format!(
            "worst |Δb|/max_bid {worst:.2e} over {} bids, {failures} outside 1/256",
            lands.len() * 500
        ),
    )
}

fn criterion_5() -> Outcome {
    let specs = [
        UtilitySpec::BudgetCap { budget: 10.0 },
        UtilitySpec::BudgetCap { budget: 3.5 },
        UtilitySpec::QuadraticTarget { budget: 10.0, tau: 0.1 },
        UtilitySpec::QuadraticTarget { budget: 4.0, tau: 1.5 },
        UtilitySpec::SpendRange {
            budget: 10.0,
            alpha_spend: 0.5,
        },
        UtilitySpec::SpendRange {
            budget: 7.0,
            alpha_spend: 0.0,
        },
    ];
    let mut r = rng(55);
    let mut failures = Vec::new();
    let mut worst_sup = 0.0f64;
    let mut worst_fm = 0.0f64;
    for spec in &specs {
        let m = spec.budget();
        let lo = spec.min_spend();
        let tau = spec.quadratic_tau().unwrap_or(0.0);
        let nv = 20_001;
        let dv = (m - lo) / (nv - 1) as f64;
        let v_grid: Vec<f64> = (0..nv).map(|j| lo + dv * j as f64).collect();
        for _ in 0..200 {
            let lambda = r.random_range(-3.0..3.0) * (1.0 + tau * m);
            let p_grid = v_grid
                .iter()
                .map(|&v| lambda * v + spec.u(v).unwrap().to_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let p = spec.conjugate(lambda);
            // the grid sup is below the true sup by at most slope·Δv
            let bound = (lambda.abs() + tau * m) * dv + 1e-9;
            let d = p - p_grid;
            worst_sup = worst_sup.max(d.abs());
            if !(d >= -1e-9 && d <= bound) {
                failures.push(format!("{spec:?} λ={lambda}: p={p} grid={p_grid}"));
            }
        }
        let zmax = 10.0f64.max(2.0 * tau * m);
        let nz = 40_001;
        let dz = 2.0 * zmax / (nz - 1) as f64;
        let z_grid: Vec<f64> = (0..nz).map(|j| -zmax + dz * j as f64).collect();
        let coarse: Vec<f64> = (0..201).map(|j| lo + (m - lo) * j as f64 / 200.0).collect();
        let gap = spec.fenchel_check(&coarse, &z_grid);
        worst_fm = worst_fm.max(gap);
        // p(z) − z·v is m-Lipschitz in z
        if gap > m * dz {
            failures.push(format!("{spec:?}: biconjugacy gap {gap}"));
        }
    }
    ensure(
        failures.is_empty(),
        format!(
            "worst |p − p_grid| {worst_sup:.2e}, worst biconjugacy gap {worst_fm:.2e} {}",
            failures.join("; ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut r = rng(66);
    let mut worst = f64::NEG_INFINITY;
    for inst in medium_instances(6) {
        let k = inst.campaigns().len();
        for _ in 0..200 {
            let l: Vec<f64> = (0..k).map(|_| r.random_range(-1.5..1.5)).collect();
            let l2: Vec<f64> = (0..k).map(|_| r.random_range(-1.5..1.5)).collect();
            let q = eval_q(&inst, &l).map_err(|e| e.to_string())?.value;
            let q2 = eval_q(&inst, &l2).map_err(|e| e.to_string())?.value;
            let g = subgradient(&inst, &l).map_err(|e| e.to_string())?;
            let lin: f64 = g.iter().zip(l2.iter().zip(&l)).map(|(g, (a, b))| g * (a - b)).sum();
            worst = worst.max(q + lin - q2);
        }
    }
    ensure(worst <= 1e-7, format!("max violation {worst:.3e} over 2000 pairs"))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let inst = market_instance(&MarketShape::default(), 1).map_err(|e| e.to_string())?;
    let cfg = SimConfig {
        seed: 1,
        ..SimConfig::default()
    };
    let rows = experiment_budget_sweep(&inst, &[1.0 / 32.0, 1.0], &cfg, &PlannerConfig::default())
        .map_err(|e| e.to_string())?;
    let (low, full) = (&rows[0], &rows[1]);
    let diff = (full.two_phase.mean_profit - full.greedy.mean_profit).abs() / full.greedy.mean_profit.abs();
    let secs = start.elapsed().as_secs_f64();
    ensure(
        low.p_value < 0.05 && low.relative_profit > 1.0 && diff < 0.35 && secs < 600.0,
        format!(
            "1/32: ratio {:.3}, p={:.2e}; 1.0: ratio {:.3}; {secs:.1}s",
            low.relative_profit, low.p_value, full.relative_profit
        ),
    )
}

fn criterion_8() -> Outcome {
    let inst = market_instance(&MarketShape::default(), 1).map_err(|e| e.to_string())?;
    let cfg = SimConfig {
        seed: 1,
        ..SimConfig::default()
    };
    let mults: Vec<f64> = (0..11).map(|j| 0.1 + 0.2 * j as f64).collect();
    let sweep = experiment_penalty_sweep(&inst, &mults, &cfg, &PlannerConfig::default()).map_err(|e| e.to_string())?;
    let bu: Vec<f64> = sweep.rows.iter().map(|r| r.quadratic.mean_budget_utilization).collect();
    let profit: Vec<f64> = sweep.rows.iter().map(|r| r.quadratic.mean_profit).collect();
    let rho_bu = spearman(&mults, &bu);
    let rho_profit = spearman(&mults, &profit);
    ensure(
        rho_bu >= 0.8 && rho_profit <= -0.5,
        format!("spearman(mult, b.u.) {rho_bu:.3}, spearman(mult, profit) {rho_profit:.3}"),
    )
}

fn mechanics(inst: &Instance, report: &SimReport, fraction: f64) -> Vec<String> {
    let mut bad = Vec::new();
    for rep in &report.replications {
        for (k, c) in inst.campaigns().iter().enumerate() {
            if rep.spend[k] > c.budget * fraction + 1e-9 {
                bad.push(format!("rep {} overspent campaign {}", rep.replication, c.id));
            }
            let billed = rep.clicks[k] as f64 * c.cpc;
            if (billed - rep.spend[k]).abs() > 1e-9 * billed.max(1.0) {
                bad.push(format!("rep {} spend of {} is not clicks·cpc", rep.replication, c.id));
            }
        }
        let revenue: f64 = rep.spend.iter().sum();
        if (revenue - rep.revenue).abs() > 1e-9 * revenue.max(1.0)
            || (rep.profit - (rep.revenue - rep.payments)).abs() > 1e-9 * rep.revenue.max(1.0)
        {
            bad.push(format!("rep {} accounting identity fails", rep.replication));
        }
    }
    bad
}

fn win_rate(land: BidLandscape, revenue: f64) -> std::result::Result<(f64, f64), String> {
    let inst = InstanceBuilder::new()
        .impression("t", 100_000.0, land.clone())
        .campaign("c", revenue / 0.5, UtilitySpec::BudgetCap { budget: 1e12 })
        .edge("t", "c", 0.5)
        .build()
        .map_err(|e| e.to_string())?;
    let stream = generate_stream(&inst, 9);
    let cfg = SimConfig {
        seed: 9,
        replications: 1,
        ..SimConfig::default()
    };
    let rep = run_greedy(&inst, &stream, &cfg).map_err(|e| e.to_string())?;
    let r = &rep.replications[0];
    let bid = land.optimal_bid(revenue).bid;
    Ok((r.wins as f64 / r.bids as f64, land.rho(bid).map_err(|e| e.to_string())?))
}

fn criterion_9() -> Outcome {
    let inst = market_instance(&MarketShape::default(), 3).map_err(|e| e.to_string())?;
    let fraction = 0.125;
    let scaled = inst.with_budget_fraction(fraction);
    let stream = generate_stream(&scaled, 5);
    let cfg = SimConfig {
        seed: 5,
        replications: 20,
        ..SimConfig::default()
    };
    let plan = plan_instance(&scaled, &PlannerConfig::default()).map_err(|e| e.to_string())?;
    let tp = run_two_phase(&scaled, &plan, &stream, &cfg).map_err(|e| e.to_string())?;
    let gr = run_greedy(&scaled, &stream, &cfg).map_err(|e| e.to_string())?;
    let mut bad = mechanics(&inst, &tp, fraction);
    bad.extend(mechanics(&inst, &gr, fraction));
    if run_two_phase(&scaled, &plan, &stream, &cfg).map_err(|e| e.to_string())? != tp
        || run_greedy(&scaled, &stream, &cfg).map_err(|e| e.to_string())? != gr
    {
        bad.push("replay is not deterministic".into());
    }
    let mut rates = Vec::new();
    for (land, rev) in [
        (
            BidLandscape::SecondPriceBeta {
                a: 2.0,
                b: 3.0,
                max_bid: 1.0,
            },
            0.4,
        ),
        (
            BidLandscape::UniformCompetitors {
                n: 2,
                alpha: 1.0,
                max_bid: 2.0,
            },
            1.5,
        ),
        (
            BidLandscape::ScaledFirstPrice {
                alpha: 0.8,
                max_bid: 1.0,
                win_curve: WinCurve::Exponential { rate: 3.0 },
            },
            0.7,
        ),
    ] {
        let (emp, rho) = win_rate(land, rev)?;
        if (emp - rho).abs() > 0.01 {
            bad.push(format!("win rate {emp:.4} vs ρ {rho:.4}"));
        }
        rates.push(format!("{emp:.4}/{rho:.4}"));
    }
    ensure(
        bad.is_empty(),
        format!("win rate empirical/ρ {}; {}", rates.join(" "), bad.join("; ")),
    )
}

fn criterion_10() -> Outcome {
    let mut r = rng(1010);
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for t in 0..100 {
        let n = r.random_range(1..=8);
        let m = r.random_range(1..=8);
        let lp = random_lp(&mut r, n, m, t % 10 == 9);
        let sol = lp.solve().map_err(|e| e.to_string())?;
        match (vertex_enumeration(&lp), sol.status) {
            (None, LpStatus::Infeasible) => {}
            (Some(v), LpStatus::Optimal) => {
                worst = worst.max((v - sol.value).abs());
                if (v - sol.value).abs() > 1e-8 || lp.max_violation(&sol.x) > 1e-8 {
                    bad.push(format!("LP {t}: simplex {} vs vertices {v}", sol.value));
                }
            }
            (v, s) => bad.push(format!("LP {t}: status {s:?}, vertex optimum {v:?}")),
        }
    }

    let mut worst_fw = 0.0f64;
    for t in 0..10 {
        let n_types = r.random_range(1..=4);
        let mut b = InstanceBuilder::new();
        for i in 0..n_types {
            b = b.impression(
                &format!("t{i}"),
                r.random_range(100.0..600.0),
                regular_landscape(&mut r),
            );
        }
        b = b.campaign("c", r.random_range(1.0..5.0), UtilitySpec::BudgetCap { budget: 1.0 });
        for i in 0..n_types {
            b = b.edge(&format!("t{i}"), "c", r.random_range(0.05..0.5));
        }
        let inst = b.build().map_err(|e| e.to_string())?;
        let free = eval_q(&inst, &[0.0]).map_err(|e| e.to_string())?.spend[0];
        let m = free * r.random_range(0.3..1.5);
        let tau = r.random_range(0.1..2.0) / m;
        let inst = inst.with_utilities(|_| UtilitySpec::QuadraticTarget { budget: m, tau });
        let out = two_phase(&inst, &SolveConfig::default(), &RecoveryConfig::default()).map_err(|e| e.to_string())?;
        if out.recovery.status != RecoveryStatus::Optimal {
            bad.push(format!("FW {t}: status {:?}", out.recovery.status));
            continue;
        }
        let plan = out.recovery.plan.as_ref().ok_or("no plan")?;
        let (mut profit, mut spend) = (Vec::new(), Vec::new());
        for (e, edge) in inst.edges().iter().enumerate() {
            let land = inst.edge_landscape(e);
            let s = inst.impressions()[edge.impression].supply;
            let rho = land.rho(plan.bid[e]).map_err(|e| e.to_string())?;
            let beta = if rho > 0.0 {
                land.beta_pay(plan.bid[e]).map_err(|e| e.to_string())?
            } else {
                0.0
            };
            profit.push((edge.revenue - beta) * s * rho);
            spend.push(edge.revenue * s * rho);
        }
        let oracle = quadratic_single_campaign_grid(&profit, &spend, m, tau, 20_001);
        let f = out.recovery.objective_value.to_f64();
        let d = (f - oracle).abs() / oracle.abs().max(1.0);
        worst_fw = worst_fw.max(d);
        if d > 1e-4 {
            bad.push(format!("FW {t}: {f} vs grid {oracle}"));
        }
    }
    ensure(
        bad.is_empty(),
        format!(
            "LP worst |Δ| {worst:.2e} over 100; Frank-Wolfe worst relative |Δ| {worst_fw:.2e} over 10 {}",
            bad.join("; ")
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("brute-force equivalence", criterion_1),
        ("zero duality gap", criterion_2),
        ("weak duality", criterion_3),
        ("closed-form bid agreement", criterion_4),
        ("conjugate correctness", criterion_5),
        ("subgradient validity", criterion_6),
        ("simulator trend", criterion_7),
        ("penalty-sweep trade-off", criterion_8),
        ("simulator mechanics", criterion_9),
        ("LP and Frank-Wolfe oracles", criterion_10),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", n + 1)
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
