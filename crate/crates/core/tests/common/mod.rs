//! Random instance generators and independent oracles shared by the
//! integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use bidalloc::auction::{BidLandscape, WinCurve};
use bidalloc::lp::{LinearProgram, LpStatus, Sense};
use bidalloc::{eval_q, Instance, InstanceBuilder, Plan, UtilitySpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A landscape drawn from every parametric family.
pub fn random_landscape<R: Rng>(rng: &mut R) -> BidLandscape {
    let max_bid = rng.random_range(0.5..2.0);
    match rng.random_range(0..6) {
        0 => BidLandscape::SecondPriceBeta {
            a: rng.random_range(1.0..4.0),
            b: rng.random_range(1.0..6.0),
            max_bid,
        },
        1 => BidLandscape::UniformCompetitors {
            n: rng.random_range(1..5),
            alpha: rng.random_range(0.5..=1.0),
            max_bid,
        },
        k => BidLandscape::ScaledFirstPrice {
            alpha: rng.random_range(0.5..=1.0),
            max_bid,
            win_curve: match k {
                2 => WinCurve::Power {
                    n: rng.random_range(0.5..3.0),
                },
                3 => WinCurve::Ratio {
                    c: rng.random_range(0.2..2.0) * max_bid,
                },
                4 => WinCurve::Exponential {
                    rate: rng.random_range(0.5..4.0) / max_bid,
                },
                _ => WinCurve::BetaCdf {
                    a: rng.random_range(1.0..3.0),
                    b: rng.random_range(1.0..4.0),
                },
            },
        },
    }
}

/// A landscape that passes the zero-gap condition check.
pub fn regular_landscape<R: Rng>(rng: &mut R) -> BidLandscape {
    loop {
        let l = random_landscape(rng);
        if l.check_conditions(256).passes() {
            return l;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UtilityMix {
    BudgetCapOnly,
    Mixed,
}

pub struct Shape {
    pub max_types: usize,
    pub max_campaigns: usize,
    pub utilities: UtilityMix,
    pub regular: bool,
}

impl Shape {
    pub fn small() -> Shape {
        Shape {
            max_types: 3,
            max_campaigns: 2,
            utilities: UtilityMix::BudgetCapOnly,
            regular: true,
        }
    }

    pub fn medium() -> Shape {
        Shape {
            max_types: 5,
            max_campaigns: 3,
            utilities: UtilityMix::Mixed,
            regular: false,
        }
    }
}

/// Random bipartite instance. Budgets are a random fraction (0.2 to 1.2) of
/// each campaign's unconstrained spend, so some bind and some do not.
pub fn random_instance<R: Rng>(rng: &mut R, shape: &Shape) -> Instance {
    let n_types = rng.random_range(1..=shape.max_types);
    let n_camps = rng.random_range(1..=shape.max_campaigns);
    let mut adj = vec![vec![false; n_camps]; n_types];
    for row in adj.iter_mut() {
        for cell in row.iter_mut() {
            *cell = rng.random_bool(0.7);
        }
    }
    for k in 0..n_camps {
        if !(0..n_types).any(|i| adj[i][k]) {
            adj[rng.random_range(0..n_types)][k] = true;
        }
    }
    let mut b = InstanceBuilder::new();
    for i in 0..n_types {
        let land = if shape.regular {
            regular_landscape(rng)
        } else {
            random_landscape(rng)
        };
        b = b.impression(&format!("t{i}"), rng.random_range(50.0..500.0), land);
    }
    for k in 0..n_camps {
        b = b.campaign(
            &format!("c{k}"),
            rng.random_range(1.0..5.0),
            UtilitySpec::BudgetCap { budget: 1.0 },
        );
    }
    for (i, row) in adj.iter().enumerate() {
        for (k, &on) in row.iter().enumerate() {
            if on {
                b = b.edge(&format!("t{i}"), &format!("c{k}"), rng.random_range(0.05..0.5));
            }
        }
    }
    let inst = b.build().expect("generated instance is valid");
    let free = eval_q(&inst, &vec![0.0; n_camps]).unwrap();
    let budgets: Vec<f64> = free
        .spend
        .iter()
        .map(|&v| rng.random_range(0.2..1.2) * v.max(1.0))
        .collect();
    let inst = inst.with_budgets(&budgets);
    match shape.utilities {
        UtilityMix::BudgetCapOnly => inst,
        UtilityMix::Mixed => {
            let kinds: Vec<u8> = (0..n_camps).map(|_| rng.random_range(0..3)).collect();
            let taus: Vec<f64> = (0..n_camps).map(|_| rng.random_range(0.01..2.0)).collect();
            let alphas: Vec<f64> = (0..n_camps).map(|_| rng.random_range(0.0..0.5)).collect();
            let ids: Vec<String> = inst.campaigns().iter().map(|c| c.id.clone()).collect();
            inst.with_utilities(|c| {
                let k = ids.iter().position(|id| *id == c.id).unwrap();
                match kinds[k] {
                    0 => UtilitySpec::BudgetCap { budget: c.budget },
                    1 => UtilitySpec::QuadraticTarget {
                        budget: c.budget,
                        tau: taus[k] / c.budget,
                    },
                    _ => UtilitySpec::SpendRange {
                        budget: c.budget,
                        alpha_spend: alphas[k],
                    },
                }
            })
        }
    }
}

/// A random plan scaled down until every campaign's spend is within budget.
pub fn random_feasible_plan<R: Rng>(rng: &mut R, inst: &Instance) -> Plan {
    let mut plan = Plan::zeros(inst.n_edges());
    for i in 0..inst.impressions().len() {
        let es = inst.edges_of_impression(i);
        let w: Vec<f64> = es.iter().map(|_| rng.random::<f64>()).collect();
        let total = w.iter().sum::<f64>() + rng.random::<f64>();
        for (j, &e) in es.iter().enumerate() {
            plan.x[e] = w[j] / total;
            plan.bid[e] = rng.random::<f64>() * inst.edge_landscape(e).max_bid();
        }
    }
    let spend = inst.expected_spend(&plan).unwrap();
    let budgets = inst.budgets();
    let worst = spend.iter().zip(&budgets).map(|(v, m)| v / m).fold(0.0f64, f64::max);
    if worst > 1.0 {
        let s = rng.random_range(0.5..1.0) / worst;
        plan.x.iter_mut().for_each(|x| *x *= s);
    }
    plan
}

// ---------------------------------------------------------------------------
// Linear programs by vertex enumeration.

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn feasible(lp: &LinearProgram, x: &[f64], tol: f64) -> bool {
    lp.max_violation(x) <= tol
}

/// Optimum of a bounded LP by enumerating basic solutions: every choice of
/// rows held tight, with the remaining degrees of freedom pinned at a bound.
/// `None` when no vertex is feasible. Bounds must be finite.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.n_vars();
    let m = lp.rows.len();
    let mut best: Option<f64> = None;
    for row_mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|r| row_mask >> r & 1 == 1).collect();
        if rows.len() > n {
            continue;
        }
        let n_pinned = n - rows.len();
        for pinned in combinations(n, n_pinned) {
            for side in 0u32..(1 << n_pinned) {
                let mut fixed = vec![None; n];
                for (j, &v) in pinned.iter().enumerate() {
                    fixed[v] = Some(if side >> j & 1 == 1 { lp.upper[v] } else { lp.lower[v] });
                }
                let free: Vec<usize> = (0..n).filter(|v| fixed[*v].is_none()).collect();
                let a: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&r| free.iter().map(|&v| lp.rows[r].coeffs[v]).collect())
                    .collect();
                let rhs: Vec<f64> = rows
                    .iter()
                    .map(|&r| {
                        lp.rows[r].rhs
                            - (0..n)
                                .filter_map(|v| fixed[v].map(|x| x * lp.rows[r].coeffs[v]))
                                .sum::<f64>()
                    })
                    .collect();
                let sol = if free.is_empty() {
                    Some(Vec::new())
                } else {
                    solve_square(a, rhs)
                };
                let Some(sol) = sol else { continue };
                let mut x = vec![0.0; n];
                for v in 0..n {
                    x[v] = fixed[v].unwrap_or(0.0);
                }
                for (j, &v) in free.iter().enumerate() {
                    x[v] = sol[j];
                }
                if feasible(lp, &x, 1e-9) {
                    let val = lp.value_at(&x);
                    if best.is_none_or(|b| val > b) {
                        best = Some(val);
                    }
                }
            }
        }
    }
    best
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            if n - v < k - cur.len() {
                break;
            }
            cur.push(v);
            go(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    go(0, n, k, &mut cur, &mut out);
    out
}

/// A random LP with box bounds. Feasible by construction around a random
/// interior point unless `infeasible` is set, in which case two rows clash.
pub fn random_lp<R: Rng>(rng: &mut R, n: usize, m: usize, infeasible: bool) -> LinearProgram {
    let lower: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..0.5)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.2..2.0)).collect();
    let x0: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(l, u)| rng.random_range(*l..*u))
        .collect();
    let mut lp = LinearProgram {
        objective: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        rows: Vec::new(),
        lower,
        upper,
    };
    for _ in 0..m {
        let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ax: f64 = coeffs.iter().zip(&x0).map(|(a, x)| a * x).sum();
        match rng.random_range(0..5) {
            0 => lp.add_row(coeffs, Sense::Eq, ax),
            1 => lp.add_row(coeffs, Sense::Ge, ax - rng.random_range(0.0..1.0)),
            _ => lp.add_row(coeffs, Sense::Le, ax + rng.random_range(0.0..1.0)),
        }
    }
    if infeasible {
        // a·x ≤ t and a·x ≥ t + 1
        let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let top: f64 = coeffs.iter().zip(&lp.upper).map(|(a, u)| a * u).sum();
        lp.add_row(coeffs.clone(), Sense::Ge, top + 0.5);
        lp.add_row(coeffs, Sense::Le, top + 1.0);
    }
    lp
}

// ---------------------------------------------------------------------------
// Exact optimum over a bid grid.

/// Per-edge bid levels on the grid: (bid, profit, spend) at x = 1.
fn grid_levels(inst: &Instance, grid: usize) -> Vec<Vec<(f64, f64, f64)>> {
    (0..inst.n_edges())
        .map(|e| {
            let edge = &inst.edges()[e];
            let land = inst.edge_landscape(e);
            let s = inst.impressions()[edge.impression].supply;
            (0..grid)
                .map(|g| {
                    let b = land.max_bid() * g as f64 / (grid - 1) as f64;
                    let rho = land.rho(b).unwrap();
                    let beta = if rho > 0.0 { land.beta_pay(b).unwrap() } else { 0.0 };
                    (b, (edge.revenue - beta) * s * rho, edge.revenue * s * rho)
                })
                .collect()
        })
        .collect()
}

/// Drops levels that are dominated by a cheaper level with at least as much
/// profit. Spend is non-decreasing in the bid, so a level survives only if
/// its profit beats every lower bid's.
fn undominated(levels: &[(f64, f64, f64)]) -> Vec<(f64, f64, f64)> {
    let mut best = 0.0;
    let mut out = Vec::new();
    for &l in levels {
        if l.1 > best {
            best = l.1;
            out.push(l);
        }
    }
    out
}

/// Allocation LP for fixed bids under budget caps, one variable per
/// (edge, level) column.
fn allocation_lp(inst: &Instance, cols: &[(usize, f64, f64)]) -> LinearProgram {
    let n = cols.len();
    let mut lp = LinearProgram::unit_box(n);
    lp.objective = cols.iter().map(|c| c.1).collect();
    for i in 0..inst.impressions().len() {
        let row: Vec<f64> = cols
            .iter()
            .map(|c| if inst.edges()[c.0].impression == i { 1.0 } else { 0.0 })
            .collect();
        if row.iter().any(|&a| a != 0.0) {
            lp.add_row(row, Sense::Le, 1.0);
        }
    }
    for (k, m) in inst.budgets().iter().enumerate() {
        let row: Vec<f64> = cols
            .iter()
            .map(|c| if inst.edges()[c.0].campaign == k { c.2 } else { 0.0 })
            .collect();
        if row.iter().any(|&a| a != 0.0) {
            lp.add_row(row, Sense::Le, *m);
        }
    }
    lp
}

/// Maximum of F over plans whose bids lie on a uniform `grid`-point mesh of
/// each `[0, max_bid]`, for budget-cap utilities.
///
/// Equivalent to solving the allocation LP for every bid combination: each
/// combination is an SOS1 restriction (at most one active level per edge)
/// of the LP over all (edge, level) columns, so branch-and-bound on that
/// restriction returns the same maximum.
pub fn grid_optimum(inst: &Instance, grid: usize) -> f64 {
    let levels: Vec<Vec<(f64, f64, f64)>> = grid_levels(inst, grid).iter().map(|l| undominated(l)).collect();
    let ranges: Vec<(usize, usize)> = levels.iter().map(|l| (0, l.len())).collect();
    let mut best = 0.0;
    branch(inst, &levels, ranges, &mut best);
    best
}

fn branch(inst: &Instance, levels: &[Vec<(f64, f64, f64)>], ranges: Vec<(usize, usize)>, best: &mut f64) {
    let mut cols = Vec::new();
    let mut owner = Vec::new();
    for (e, &(lo, hi)) in ranges.iter().enumerate() {
        for j in lo..hi {
            cols.push((e, levels[e][j].1, levels[e][j].2));
            owner.push((e, j));
        }
    }
    if cols.is_empty() {
        return;
    }
    let sol = allocation_lp(inst, &cols).solve().unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    if sol.value <= *best * (1.0 + 1e-12) {
        return;
    }
    // first edge carrying mass on two or more levels
    for e in 0..ranges.len() {
        let pos: Vec<usize> = owner
            .iter()
            .zip(&sol.x)
            .filter(|((ee, _), x)| *ee == e && **x > 1e-12)
            .map(|((_, j), _)| *j)
            .collect();
        if pos.len() >= 2 {
            let mid = pos[0] + (pos[pos.len() - 1] - pos[0]) / 2;
            let (lo, hi) = ranges[e];
            let mut left = ranges.clone();
            left[e] = (lo, mid + 1);
            let mut right = ranges;
            right[e] = (mid + 1, hi);
            branch(inst, levels, left, best);
            branch(inst, levels, right, best);
            return;
        }
    }
    *best = sol.value;
}

/// The same grid optimum by literal enumeration of every bid combination,
/// each allocation LP solved by vertex enumeration. Exponential; for tiny
/// instances only.
pub fn grid_optimum_literal(inst: &Instance, grid: usize) -> f64 {
    let levels = grid_levels(inst, grid);
    let n = inst.n_edges();
    let mut idx = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;
    loop {
        let cols: Vec<(usize, f64, f64)> = (0..n).map(|e| (e, levels[e][idx[e]].1, levels[e][idx[e]].2)).collect();
        let v = vertex_enumeration(&allocation_lp(inst, &cols)).expect("x = 0 is feasible");
        best = best.max(v);
        let mut e = 0;
        loop {
            if e == n {
                return best;
            }
            idx[e] += 1;
            if idx[e] < grid {
                break;
            }
            idx[e] = 0;
            e += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Quadratic recovery by a 1-D search over total spend.

/// max over x ∈ [0,1]^E of Σ p_e x_e − (τ/2)(Σ c_e x_e − m)² subject to
/// Σ c_e x_e ≤ m, for a single campaign whose edges sit on distinct types.
///
/// For fixed total spend v the best profit is a fractional knapsack filled
/// in order of profit per unit spend. That profit is concave in v, so the
/// optimum is a 1-D grid search over v with a final ternary refinement.
pub fn quadratic_single_campaign_grid(profit: &[f64], spend: &[f64], m: f64, tau: f64, points: usize) -> f64 {
    let mut items: Vec<(f64, f64)> = profit.iter().zip(spend).map(|(&p, &c)| (p, c)).collect();
    let free: f64 = items.iter().filter(|(_, c)| *c <= 0.0).map(|(p, _)| p.max(0.0)).sum();
    items.retain(|(_, c)| *c > 0.0);
    items.sort_by(|a, b| (b.0 / b.1).total_cmp(&(a.0 / a.1)));
    let cap = m.min(items.iter().map(|i| i.1).sum());
    let knap = |v: f64| {
        let mut left = v;
        let mut p = 0.0;
        for &(pi, ci) in &items {
            let take = left.min(ci);
            p += pi * take / ci;
            left -= take;
            if left <= 0.0 {
                break;
            }
        }
        p
    };
    let f = |v: f64| knap(v) - 0.5 * tau * (v - m).powi(2);
    // the objective is concave in v: scan, then refine the best bracket
    let step = cap / (points - 1) as f64;
    let best_j = (0..points)
        .max_by(|&a, &b| f(a as f64 * step).total_cmp(&f(b as f64 * step)))
        .unwrap();
    let (mut lo, mut hi) = (
        (best_j as f64 - 1.0).max(0.0) * step,
        ((best_j + 1) as f64 * step).min(cap),
    );
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    f(best_j as f64 * step).max(f(0.5 * (lo + hi))) + free
}
