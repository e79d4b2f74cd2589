//! Seeded synthetic instances.

use rand::seq::index::sample;
use rand::Rng;

use crate::auction::BidLandscape;
use crate::dual::eval_q;
use crate::error::Result;
use crate::instance::{Instance, InstanceBuilder};
use crate::rng::substream;
use crate::utility::UtilitySpec;

/// Knobs for [`market_instance`].
#[derive(Clone, Debug, PartialEq)]
pub struct MarketShape {
    pub campaigns: usize,
    /// Targeting degree of each impression type; its length is the number
    /// of types and its sum the number of edges.
    pub degrees: Vec<usize>,
    pub supply: (u32, u32),
    pub ctr: (f64, f64),
    pub cpc: (f64, f64),
    /// Full budget as a multiple of the campaign's unconstrained spend.
    pub budget_slack: f64,
}

impl Default for MarketShape {
    /// 4 campaigns, 23 types, 43 edges.
    fn default() -> Self {
        let mut degrees = vec![3; 3];
        degrees.extend([2; 14]);
        degrees.extend([1; 6]);
        MarketShape {
            campaigns: 4,
            degrees,
            supply: (300, 1500),
            ctr: (0.02, 0.15),
            cpc: (2.0, 6.0),
            budget_slack: 1.3,
        }
    }
}

/// A second-price market with Beta-distributed competition. Budgets are set
/// to `budget_slack` times what each campaign spends under the
/// unconstrained profit-maximizing plan, so a fraction of 1 leaves every
/// budget slack.
pub fn market_instance(shape: &MarketShape, seed: u64) -> Result<Instance> {
    let mut rng = substream(seed, "synthetic");
    let k = shape.campaigns;
    let ids: Vec<String> = (0..k).map(|c| format!("c{}", c + 1)).collect();
    let cpcs: Vec<f64> = (0..k).map(|_| rng.random_range(shape.cpc.0..=shape.cpc.1)).collect();

    let mut b = InstanceBuilder::new();
    for (c, id) in ids.iter().enumerate() {
        // placeholder budget, replaced below
        b = b.campaign(id, cpcs[c], UtilitySpec::BudgetCap { budget: 1.0 });
    }
    let mut uncovered: Vec<usize> = (0..k).collect();
    for (i, &deg) in shape.degrees.iter().enumerate() {
        let tid = format!("t{:02}", i + 1);
        let land = BidLandscape::SecondPriceBeta {
            a: rng.random_range(1.5..4.0),
            b: rng.random_range(3.0..8.0),
            max_bid: 1.0,
        };
        let supply = rng.random_range(shape.supply.0..=shape.supply.1) as f64;
        b = b.impression(&tid, supply, land);
        let mut chosen: Vec<usize> = sample(&mut rng, k, deg.min(k)).into_vec();
        // make sure every campaign ends up with at least one edge
        if let Some(c) = uncovered.pop() {
            if !chosen.contains(&c) {
                chosen[0] = c;
            }
        }
        for c in chosen {
            b = b.edge(&tid, &ids[c], rng.random_range(shape.ctr.0..shape.ctr.1));
        }
    }
    let inst = b.build()?;

    let free = eval_q(&inst, &vec![0.0; k])?;
    // campaigns that never win unconstrained still get a small budget
    let standalone: Vec<f64> = (0..k)
        .map(|c| {
            inst.edges_of_campaign(c)
                .iter()
                .map(|&e| {
                    let edge = &inst.edges()[e];
                    let land = inst.edge_landscape(e);
                    edge.revenue * inst.impressions()[edge.impression].supply * land.rho_unchecked(edge.revenue)
                })
                .sum()
        })
        .collect();
    let budgets: Vec<f64> = (0..k)
        .map(|c| shape.budget_slack * free.spend[c] + 0.1 * standalone[c])
        .collect();
    Ok(inst.with_budgets(&budgets))
}
