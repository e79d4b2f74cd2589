//! Planning instance: impression types, campaigns, the targeting graph, and
//! primal evaluation of allocation/bid plans.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::auction::BidLandscape;
use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::utility::UtilitySpec;

/// Slack allowed on simplex rows, bid bounds and utility domains.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpressionType {
    pub id: String,
    /// Expected arrivals over the horizon.
    pub supply: f64,
    pub max_bid: f64,
    pub landscape_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub id: String,
    pub budget: f64,
    /// Price charged per click.
    pub cpc: f64,
    pub utility: UtilitySpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub impression_id: String,
    pub campaign_id: String,
    pub ctr: f64,
    /// Expected revenue per won impression, cpc × ctr.
    pub revenue: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeEntry {
    pub id: String,
    #[serde(flatten)]
    pub model: BidLandscape,
}

/// The on-disk instance document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub impression_types: Vec<ImpressionType>,
    pub campaigns: Vec<Campaign>,
    pub edges: Vec<EdgeSpec>,
    pub landscapes: Vec<LandscapeEntry>,
}

impl InstanceDoc {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance documents always serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub entity: String,
    pub rule: &'static str,
    pub message: String,
    pub severity: Severity,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {} [{}]: {}", self.entity, self.rule, self.message)
    }
}

/// Checks every structural and numeric invariant of an instance document.
/// Returns an empty list iff all hold; isolated campaigns come back as
/// warnings.
pub fn validate(doc: &InstanceDoc) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |entity: String, rule: &'static str, message: String, severity| {
        out.push(Violation {
            entity,
            rule,
            message,
            severity,
        })
    };

    let mut landscapes: HashMap<&str, &BidLandscape> = HashMap::new();
    for l in &doc.landscapes {
        if landscapes.insert(&l.id, &l.model).is_some() {
            push(
                format!("landscape {}", l.id),
                "unique_id",
                "duplicate landscape id".into(),
                Severity::Error,
            );
        }
        if let Err(e) = l.model.validate() {
            push(
                format!("landscape {}", l.id),
                "landscape_model",
                e.to_string(),
                Severity::Error,
            );
        }
    }

    let mut impressions: HashSet<&str> = HashSet::new();
    for t in &doc.impression_types {
        let who = format!("impression_type {}", t.id);
        if !impressions.insert(&t.id) {
            push(
                who.clone(),
                "unique_id",
                "duplicate impression type id".into(),
                Severity::Error,
            );
        }
        if !(t.supply >= 0.0 && t.supply.is_finite()) {
            push(
                who.clone(),
                "supply_nonnegative",
                format!("supply {} < 0", t.supply),
                Severity::Error,
            );
        }
        if !(t.max_bid > 0.0 && t.max_bid.is_finite()) {
            push(
                who.clone(),
                "max_bid_positive",
                format!("max_bid {} <= 0", t.max_bid),
                Severity::Error,
            );
        }
        match landscapes.get(t.landscape_id.as_str()) {
            None => push(
                who,
                "landscape_resolves",
                format!("unknown landscape {:?}", t.landscape_id),
                Severity::Error,
            ),
            Some(l) => {
                let dom = l.max_bid();
                if (dom - t.max_bid).abs() > FEASIBILITY_TOL * t.max_bid.abs().max(1.0) {
                    push(
                        who,
                        "landscape_domain",
                        format!("landscape domain [0, {dom}] differs from max_bid {}", t.max_bid),
                        Severity::Error,
                    );
                }
            }
        }
    }

    let mut campaigns: HashMap<&str, &Campaign> = HashMap::new();
    for c in &doc.campaigns {
        let who = format!("campaign {}", c.id);
        if campaigns.insert(&c.id, c).is_some() {
            push(
                who.clone(),
                "unique_id",
                "duplicate campaign id".into(),
                Severity::Error,
            );
        }
        if !(c.budget > 0.0) {
            push(
                who.clone(),
                "budget_positive",
                format!("budget {} <= 0", c.budget),
                Severity::Error,
            );
        }
        if !(c.cpc > 0.0) {
            push(
                who.clone(),
                "cpc_positive",
                format!("cpc {} <= 0", c.cpc),
                Severity::Error,
            );
        }
        if let Err(e) = c.utility.check() {
            push(who.clone(), "utility_params", e.to_string(), Severity::Error);
        }
        if c.utility.budget() != c.budget {
            push(
                who,
                "utility_budget",
                format!(
                    "utility budget {} differs from campaign budget {}",
                    c.utility.budget(),
                    c.budget
                ),
                Severity::Error,
            );
        }
    }

    let mut pairs: HashSet<(&str, &str)> = HashSet::new();
    let mut targeted: HashSet<&str> = HashSet::new();
    for e in &doc.edges {
        let who = format!("edge ({}, {})", e.impression_id, e.campaign_id);
        if !pairs.insert((&e.impression_id, &e.campaign_id)) {
            push(who.clone(), "unique_edge", "duplicate edge".into(), Severity::Error);
        }
        if !impressions.contains(e.impression_id.as_str()) {
            push(
                who.clone(),
                "edge_endpoint",
                format!("unknown impression type {:?}", e.impression_id),
                Severity::Error,
            );
        }
        if !(0.0..=1.0).contains(&e.ctr) {
            push(
                who.clone(),
                "ctr_range",
                format!("ctr {} outside [0, 1]", e.ctr),
                Severity::Error,
            );
        }
        if !(e.revenue >= 0.0) {
            push(
                who.clone(),
                "revenue_nonnegative",
                format!("revenue {} < 0", e.revenue),
                Severity::Error,
            );
        }
        match campaigns.get(e.campaign_id.as_str()) {
            None => push(
                who,
                "edge_endpoint",
                format!("unknown campaign {:?}", e.campaign_id),
                Severity::Error,
            ),
            Some(c) => {
                targeted.insert(&e.campaign_id);
                let want = c.cpc * e.ctr;
                if (e.revenue - want).abs() > 1e-12 * want.abs().max(1.0) {
                    push(
                        who,
                        "revenue_identity",
                        format!("revenue {} != cpc {} x ctr {} = {want}", e.revenue, c.cpc, e.ctr),
                        Severity::Error,
                    );
                }
            }
        }
    }

    for c in &doc.campaigns {
        if !targeted.contains(c.id.as_str()) {
            push(
                format!("campaign {}", c.id),
                "isolated_campaign",
                "campaign targets no impression type".into(),
                Severity::Warning,
            );
        }
    }
    out
}

/// A resolved edge (i, k).
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub impression: usize,
    pub campaign: usize,
    pub ctr: f64,
    pub revenue: f64,
}

/// Allocation probabilities and bids, indexed like [`Instance::edges`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub x: Vec<f64>,
    pub bid: Vec<f64>,
}

impl Plan {
    pub fn zeros(n_edges: usize) -> Plan {
        Plan {
            x: vec![0.0; n_edges],
            bid: vec![0.0; n_edges],
        }
    }
}

/// One line of the plan file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub impression_id: String,
    pub campaign_id: String,
    pub x: f64,
    pub bid: f64,
}

/// Immutable, index-resolved planning instance.
#[derive(Clone, Debug)]
pub struct Instance {
    impressions: Vec<ImpressionType>,
    campaigns: Vec<Campaign>,
    edges: Vec<Edge>,
    landscapes: Vec<LandscapeEntry>,
    impression_landscape: Vec<usize>,
    by_impression: Vec<Vec<usize>>,
    by_campaign: Vec<Vec<usize>>,
    edge_index: HashMap<(usize, usize), usize>,
}

impl Instance {
    /// Resolves references. Fails on anything that prevents indexing
    /// (duplicates, dangling references, malformed landscapes); numeric
    /// invariants are left to [`validate`].
    pub fn new(doc: InstanceDoc) -> Result<Instance> {
        let InstanceDoc {
            impression_types,
            campaigns,
            edges,
            landscapes,
        } = doc;

        let mut landscape_idx = HashMap::new();
        for (j, l) in landscapes.iter().enumerate() {
            l.model
                .validate()
                .map_err(|e| Error::Config(format!("landscape {}: {e}", l.id)))?;
            if landscape_idx.insert(l.id.clone(), j).is_some() {
                return Err(Error::Config(format!("duplicate landscape id {}", l.id)));
            }
        }
        let mut imp_idx = HashMap::new();
        let mut impression_landscape = Vec::with_capacity(impression_types.len());
        for (i, t) in impression_types.iter().enumerate() {
            if imp_idx.insert(t.id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate impression type id {}", t.id)));
            }
            let j = *landscape_idx.get(&t.landscape_id).ok_or_else(|| {
                Error::Config(format!(
                    "impression type {}: unknown landscape {}",
                    t.id, t.landscape_id
                ))
            })?;
            impression_landscape.push(j);
        }
        let mut camp_idx = HashMap::new();
        for (k, c) in campaigns.iter().enumerate() {
            if camp_idx.insert(c.id.clone(), k).is_some() {
                return Err(Error::Config(format!("duplicate campaign id {}", c.id)));
            }
        }

        let mut resolved = Vec::with_capacity(edges.len());
        let mut edge_index = HashMap::new();
        let mut by_impression = vec![Vec::new(); impression_types.len()];
        let mut by_campaign = vec![Vec::new(); campaigns.len()];
        for e in edges {
            let i = *imp_idx
                .get(&e.impression_id)
                .ok_or_else(|| Error::Config(format!("edge references unknown impression type {}", e.impression_id)))?;
            let k = *camp_idx
                .get(&e.campaign_id)
                .ok_or_else(|| Error::Config(format!("edge references unknown campaign {}", e.campaign_id)))?;
            let idx = resolved.len();
            if edge_index.insert((i, k), idx).is_some() {
                return Err(Error::Config(format!(
                    "duplicate edge ({}, {})",
                    e.impression_id, e.campaign_id
                )));
            }
            by_impression[i].push(idx);
            by_campaign[k].push(idx);
            resolved.push(Edge {
                impression: i,
                campaign: k,
                ctr: e.ctr,
                revenue: e.revenue,
            });
        }

        Ok(Instance {
            impressions: impression_types,
            campaigns,
            edges: resolved,
            landscapes,
            impression_landscape,
            by_impression,
            by_campaign,
            edge_index,
        })
    }

    pub fn from_json(text: &str) -> Result<Instance> {
        Instance::new(InstanceDoc::from_json(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Instance> {
        Instance::new(InstanceDoc::read(path)?)
    }

    pub fn to_doc(&self) -> InstanceDoc {
        InstanceDoc {
            impression_types: self.impressions.clone(),
            campaigns: self.campaigns.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeSpec {
                    impression_id: self.impressions[e.impression].id.clone(),
                    campaign_id: self.campaigns[e.campaign].id.clone(),
                    ctr: e.ctr,
                    revenue: e.revenue,
                })
                .collect(),
            landscapes: self.landscapes.clone(),
        }
    }

    pub fn impressions(&self) -> &[ImpressionType] {
        &self.impressions
    }

    pub fn campaigns(&self) -> &[Campaign] {
        &self.campaigns
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edge indices of campaigns targeting impression type `i` (𝒦_i).
    pub fn edges_of_impression(&self, i: usize) -> &[usize] {
        &self.by_impression[i]
    }

    /// Edge indices of impression types targeted by campaign `k` (ℐ_k).
    pub fn edges_of_campaign(&self, k: usize) -> &[usize] {
        &self.by_campaign[k]
    }

    pub fn edge_between(&self, impression: usize, campaign: usize) -> Option<usize> {
        self.edge_index.get(&(impression, campaign)).copied()
    }

    pub fn landscape(&self, impression: usize) -> &BidLandscape {
        &self.landscapes[self.impression_landscape[impression]].model
    }

    pub fn edge_landscape(&self, e: usize) -> &BidLandscape {
        self.landscape(self.edges[e].impression)
    }

    pub fn landscapes(&self) -> &[LandscapeEntry] {
        &self.landscapes
    }

    pub fn budgets(&self) -> Vec<f64> {
        self.campaigns.iter().map(|c| c.budget).collect()
    }

    pub fn supplies(&self) -> Vec<f64> {
        self.impressions.iter().map(|t| t.supply).collect()
    }

    /// Copy with new per-campaign budgets; utilities follow.
    pub fn with_budgets(&self, budgets: &[f64]) -> Instance {
        assert_eq!(budgets.len(), self.campaigns.len());
        let mut out = self.clone();
        for (c, &m) in out.campaigns.iter_mut().zip(budgets) {
            c.budget = m;
            c.utility = c.utility.with_budget(m);
        }
        out
    }

    pub fn with_budget_fraction(&self, fraction: f64) -> Instance {
        let b: Vec<f64> = self.budgets().iter().map(|m| m * fraction).collect();
        self.with_budgets(&b)
    }

    /// Copy with utilities produced by `f` from each campaign.
    pub fn with_utilities(&self, f: impl Fn(&Campaign) -> UtilitySpec) -> Instance {
        let mut out = self.clone();
        for c in &mut out.campaigns {
            c.utility = f(c);
            c.budget = c.utility.budget();
        }
        out
    }

    pub fn with_supplies(&self, supplies: &[f64]) -> Instance {
        assert_eq!(supplies.len(), self.impressions.len());
        let mut out = self.clone();
        for (t, &s) in out.impressions.iter_mut().zip(supplies) {
            t.supply = s;
        }
        out
    }

    pub fn plan_records(&self, plan: &Plan) -> Vec<PlanRecord> {
        self.edges
            .iter()
            .enumerate()
            .map(|(e, edge)| PlanRecord {
                impression_id: self.impressions[edge.impression].id.clone(),
                campaign_id: self.campaigns[edge.campaign].id.clone(),
                x: plan.x[e],
                bid: plan.bid[e],
            })
            .collect()
    }

    /// Rebuilds a plan from records; edges missing from `records` get x = 0.
    pub fn plan_from_records(&self, records: &[PlanRecord]) -> Result<Plan> {
        let imp: HashMap<&str, usize> = self
            .impressions
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.as_str(), i))
            .collect();
        let camp: HashMap<&str, usize> = self
            .campaigns
            .iter()
            .enumerate()
            .map(|(k, c)| (c.id.as_str(), k))
            .collect();
        let mut plan = Plan::zeros(self.n_edges());
        for r in records {
            let e = imp
                .get(r.impression_id.as_str())
                .zip(camp.get(r.campaign_id.as_str()))
                .and_then(|(&i, &k)| self.edge_between(i, k))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "plan edge ({}, {}) is not in the instance",
                        r.impression_id, r.campaign_id
                    ))
                })?;
            plan.x[e] = r.x;
            plan.bid[e] = r.bid;
        }
        Ok(plan)
    }

    /// Lists violations of the feasible set: x ≥ 0, Σ_k x_ik ≤ 1 and
    /// 0 ≤ b_ik ≤ max_bid(i), each with [`FEASIBILITY_TOL`] slack.
    pub fn plan_violations(&self, plan: &Plan) -> Vec<String> {
        let mut out = Vec::new();
        if plan.x.len() != self.n_edges() || plan.bid.len() != self.n_edges() {
            out.push(format!(
                "plan has {} / {} entries for {} edges",
                plan.x.len(),
                plan.bid.len(),
                self.n_edges()
            ));
            return out;
        }
        for (i, t) in self.impressions.iter().enumerate() {
            let total: f64 = self.by_impression[i].iter().map(|&e| plan.x[e]).sum();
            if total > 1.0 + FEASIBILITY_TOL {
                out.push(format!("impression type {}: allocation sums to {total}", t.id));
            }
        }
        for (e, edge) in self.edges.iter().enumerate() {
            let max_bid = self.impressions[edge.impression].max_bid;
            if plan.x[e] < -FEASIBILITY_TOL || plan.x[e].is_nan() {
                out.push(format!("edge {e}: x = {}", plan.x[e]));
            }
            let tol = FEASIBILITY_TOL * max_bid.max(1.0);
            if !(plan.bid[e] >= -tol && plan.bid[e] <= max_bid + tol) {
                out.push(format!("edge {e}: bid {} outside [0, {max_bid}]", plan.bid[e]));
            }
        }
        out
    }

    fn check_plan_shape(&self, plan: &Plan) -> Result<()> {
        if plan.x.len() != self.n_edges() || plan.bid.len() != self.n_edges() {
            return Err(Error::Config(format!(
                "plan sized for {} edges, instance has {}",
                plan.x.len(),
                self.n_edges()
            )));
        }
        Ok(())
    }

    /// v_k = Σ_{i ∈ ℐ_k} r_ik · s_i · x_ik · ρ_i(b_ik).
    pub fn expected_spend(&self, plan: &Plan) -> Result<Vec<f64>> {
        self.check_plan_shape(plan)?;
        let mut v = vec![0.0; self.campaigns.len()];
        for (e, edge) in self.edges.iter().enumerate() {
            if plan.x[e] == 0.0 {
                continue;
            }
            let rho = self.edge_landscape(e).rho(plan.bid[e])?;
            v[edge.campaign] += edge.revenue * self.impressions[edge.impression].supply * plan.x[e] * rho;
        }
        Ok(v)
    }

    /// π(x, b) = Σ_e (r_ik − β_i(b_ik)) · s_i · x_ik · ρ_i(b_ik).
    pub fn expected_profit(&self, plan: &Plan) -> Result<f64> {
        self.check_plan_shape(plan)?;
        let mut total = 0.0;
        for (e, edge) in self.edges.iter().enumerate() {
            if plan.x[e] == 0.0 {
                continue;
            }
            let h = self.edge_landscape(e).h(edge.revenue, plan.bid[e])?;
            total += h * self.impressions[edge.impression].supply * plan.x[e];
        }
        Ok(total)
    }

    /// F(x, b) = π(x, b) + Σ_k u_k(v_k), or −∞ when any spend leaves its
    /// utility's domain (beyond rounding slack).
    pub fn objective(&self, plan: &Plan) -> Result<ExtReal> {
        let profit = self.expected_profit(plan)?;
        let spend = self.expected_spend(plan)?;
        let mut total = ExtReal::Finite(profit);
        for (c, &v) in self.campaigns.iter().zip(&spend) {
            total = total + c.utility.u_tolerant(v.max(0.0), FEASIBILITY_TOL)?;
        }
        Ok(total)
    }
}

/// Convenience builder. Each impression type gets its own landscape (id
/// equal to the impression id), and edge revenue is derived as cpc × ctr.
#[derive(Default)]
pub struct InstanceBuilder {
    doc: InstanceDoc,
}

impl InstanceBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn impression(mut self, id: &str, supply: f64, landscape: BidLandscape) -> Self {
        self.doc.impression_types.push(ImpressionType {
            id: id.into(),
            supply,
            max_bid: landscape.max_bid(),
            landscape_id: id.into(),
        });
        self.doc.landscapes.push(LandscapeEntry {
            id: id.into(),
            model: landscape,
        });
        self
    }

    pub fn campaign(mut self, id: &str, cpc: f64, utility: UtilitySpec) -> Self {
        self.doc.campaigns.push(Campaign {
            id: id.into(),
            budget: utility.budget(),
            cpc,
            utility,
        });
        self
    }

    pub fn edge(mut self, impression: &str, campaign: &str, ctr: f64) -> Self {
        let cpc = self
            .doc
            .campaigns
            .iter()
            .find(|c| c.id == campaign)
            .map(|c| c.cpc)
            .expect("declare the campaign before its edges");
        self.doc.edges.push(EdgeSpec {
            impression_id: impression.into(),
            campaign_id: campaign.into(),
            ctr,
            revenue: cpc * ctr,
        });
        self
    }

    pub fn doc(self) -> InstanceDoc {
        self.doc
    }

    pub fn build(self) -> Result<Instance> {
        Instance::new(self.doc)
    }
}
