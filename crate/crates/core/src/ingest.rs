//! Building instances from auction logs: CTR estimates, landscape fits,
//! Monte-Carlo payment curves and supply counts.
//!
//! Log format: UTF-8, tab-separated, header line
//! `impression_key  campaign_key  paying_price  clicked  split`, where
//! `clicked` is 0/1 (or true/false) and `split` is `train` or `test`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use statrs::function::beta::beta_reg;

use crate::auction::{conditional_mean_curve, BidLandscape};
use crate::error::{Error, Result};
use crate::instance::{Campaign, EdgeSpec, ImpressionType, Instance, InstanceDoc, LandscapeEntry};
use crate::rng::substream;
use crate::sim::ImpressionEvent;
use crate::utility::UtilitySpec;

pub const DEFAULT_MIN_COUNT: u64 = 5000;
pub const DEFAULT_MC_SAMPLES: usize = 100_000;
pub const DEFAULT_BID_GRID: usize = 128;
/// Fewest winning prices a landscape fit accepts.
pub const MIN_FIT_SAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub impression_key: String,
    pub campaign_key: String,
    pub paying_price: f64,
    #[serde(deserialize_with = "flag", serialize_with = "flag_out")]
    pub clicked: bool,
    pub split: Split,
}

fn flag<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(serde::de::Error::custom(format!("bad clicked flag {other:?}"))),
    }
}

fn flag_out<S: serde::Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Estimation(format!("log parse error: {e}"))
}

pub fn read_log(reader: impl Read) -> Result<Vec<LogRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let rec: LogRecord = rec.map_err(csv_err)?;
        if rec.impression_key.is_empty() || rec.campaign_key.is_empty() {
            return Err(Error::Estimation(format!("empty key in log record {rec:?}")));
        }
        if !(rec.paying_price >= 0.0) {
            return Err(Error::domain(rec.paying_price, "paying_price >= 0"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_log(writer: impl Write, records: &[LogRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(writer);
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CtrFit {
    pub ctr: BTreeMap<(String, String), f64>,
    pub warnings: Vec<String>,
}

/// Click rate per (impression, campaign) pair; pairs seen fewer than
/// `min_count` times get their campaign's pooled rate.
pub fn fit_ctr(records: &[LogRecord], min_count: u64) -> Result<CtrFit> {
    if records.is_empty() {
        return Err(Error::Estimation("no records to fit click rates".into()));
    }
    let mut pair: BTreeMap<(String, String), (u64, u64)> = BTreeMap::new();
    let mut camp: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in records {
        let p = pair
            .entry((r.impression_key.clone(), r.campaign_key.clone()))
            .or_default();
        p.0 += 1;
        p.1 += u64::from(r.clicked);
        let c = camp.entry(&r.campaign_key).or_default();
        c.0 += 1;
        c.1 += u64::from(r.clicked);
    }
    let mut fit = CtrFit::default();
    for ((i, k), (n, clicks)) in pair {
        let rate = if n >= min_count {
            clicks as f64 / n as f64
        } else {
            let (cn, cc) = camp[k.as_str()];
            cc as f64 / cn as f64
        };
        fit.ctr.insert((i, k), rate);
    }
    if fit.ctr.values().all(|&c| c == 0.0) {
        fit.warnings
            .push("no clicks in the log: every click rate is zero, so no revenue is possible".into());
    }
    Ok(fit)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Moments,
    TabulatedFallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeFit {
    pub landscape: BidLandscape,
    pub method: FitMethod,
}

/// Method-of-moments Beta fit of prices normalized by `max_bid` (location
/// fixed at zero). Falls back to the empirical CDF when the sample variance
/// rules out any Beta.
pub fn fit_beta_landscape(prices: &[f64], max_bid: f64) -> Result<LandscapeFit> {
    if prices.len() < MIN_FIT_SAMPLES {
        return Err(Error::Estimation(format!(
            "need at least {MIN_FIT_SAMPLES} winning prices, got {}",
            prices.len()
        )));
    }
    if let Some(&p) = prices.iter().find(|&&p| !(p > 0.0 && p <= max_bid)) {
        return Err(Error::domain(p, format!("(0, {max_bid}]")));
    }
    let n = prices.len() as f64;
    let xs: Vec<f64> = prices.iter().map(|p| p / max_bid).collect();
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let cap = mean * (1.0 - mean);
    // variance at round-off level means the prices are constant
    if var > 1e-12 * cap && var < cap {
        let common = cap / var - 1.0;
        return Ok(LandscapeFit {
            landscape: BidLandscape::SecondPriceBeta {
                a: mean * common,
                b: (1.0 - mean) * common,
                max_bid,
            },
            method: FitMethod::Moments,
        });
    }
    Ok(LandscapeFit {
        landscape: empirical_landscape(prices, max_bid, DEFAULT_BID_GRID),
        method: FitMethod::TabulatedFallback,
    })
}

fn bid_grid(max_bid: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|j| max_bid * j as f64 / (n - 1) as f64).collect()
}

/// Tabulated second-price landscape straight from observed prices.
fn empirical_landscape(prices: &[f64], max_bid: f64, grid: usize) -> BidLandscape {
    let bids = bid_grid(max_bid, grid);
    let curve = conditional_mean_curve(prices, &bids);
    // Win iff bid > price, so ρ at a grid point counts strictly smaller prices.
    let mut sorted = prices.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rho: Vec<f64> = bids
        .iter()
        .map(|&b| sorted.partition_point(|&p| p < b) as f64 / sorted.len() as f64)
        .collect();
    BidLandscape::TabulatedEmpirical {
        bids,
        rho,
        beta: curve.beta,
    }
}

/// Tabulates a fitted Beta landscape: ρ from the Beta CDF, β from
/// `samples` Monte-Carlo draws.
pub fn tabulate_with_monte_carlo<R: Rng + ?Sized>(
    a: f64,
    b: f64,
    max_bid: f64,
    samples: usize,
    grid: usize,
    rng: &mut R,
) -> Result<BidLandscape> {
    let dist = Beta::new(a, b).map_err(|e| Error::Estimation(format!("Beta({a}, {b}): {e}")))?;
    let draws: Vec<f64> = (0..samples).map(|_| max_bid * dist.sample(rng)).collect();
    let bids = bid_grid(max_bid, grid);
    let curve = crate::auction::monte_carlo_beta(&draws, &bids)?;
    let rho: Vec<f64> = bids
        .iter()
        .map(|&x| beta_reg(a, b, (x / max_bid).clamp(0.0, 1.0)))
        .collect();
    // Below the smallest draw there is no sample mean; use the small-bid
    // limit b·a/(a+1) of E[M | M ≤ b], then keep the curve monotone.
    let mut beta = Vec::with_capacity(bids.len());
    let mut running: f64 = 0.0;
    for ((&x, &p), &undef) in bids.iter().zip(&curve.beta).zip(&curve.undefined) {
        let v = if undef { x * a / (a + 1.0) } else { p };
        running = running.max(v.min(x));
        beta.push(running);
    }
    Ok(BidLandscape::TabulatedEmpirical { bids, rho, beta })
}

/// Occurrences of each impression key within `split`.
pub fn count_supply(records: &[LogRecord], split: Split) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for r in records.iter().filter(|r| r.split == split) {
        *out.entry(r.impression_key.clone()).or_insert(0) += 1;
    }
    out
}

/// How each campaign's utility is derived from its budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityTemplate {
    BudgetCap,
    /// τ_k = multiplier / m_k.
    QuadraticTarget {
        multiplier: f64,
    },
    SpendRange {
        alpha_spend: f64,
    },
}

impl UtilityTemplate {
    pub fn make(&self, budget: f64) -> UtilitySpec {
        match *self {
            UtilityTemplate::BudgetCap => UtilitySpec::BudgetCap { budget },
            UtilityTemplate::QuadraticTarget { multiplier } => UtilitySpec::QuadraticTarget {
                budget,
                tau: multiplier / budget,
            },
            UtilityTemplate::SpendRange { alpha_spend } => UtilitySpec::SpendRange { budget, alpha_spend },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions {
    pub min_count: u64,
    pub mc_samples: usize,
    pub grid: usize,
    pub seed: u64,
    /// CPC per campaign; campaigns without an entry use `default_cpc`.
    pub cpcs: BTreeMap<String, f64>,
    pub default_cpc: f64,
    /// Budgets per campaign; missing entries default to the campaign's
    /// total paying price on the test split.
    pub budgets: BTreeMap<String, f64>,
    pub utility: UtilityTemplate,
    /// Common bid cap; per type, the largest observed price when absent.
    pub max_bid: Option<f64>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            min_count: DEFAULT_MIN_COUNT,
            mc_samples: DEFAULT_MC_SAMPLES,
            grid: DEFAULT_BID_GRID,
            seed: 0,
            cpcs: BTreeMap::new(),
            default_cpc: 1.0,
            budgets: BTreeMap::new(),
            utility: UtilityTemplate::BudgetCap,
            max_bid: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BuildReport {
    pub instance: Instance,
    pub fit_methods: BTreeMap<String, FitMethod>,
    pub warnings: Vec<String>,
}

/// A type's fit, its tabulated landscape, and its bid cap.
type FittedType = (LandscapeFit, BidLandscape, f64);

/// Log → instance: edges are the observed pairs, click rates come from the
/// train split, landscapes are fitted per type on train prices and
/// tabulated with Monte-Carlo β, supplies are test-split counts.
pub fn build_instance(records: &[LogRecord], opts: &BuildOptions) -> Result<BuildReport> {
    let train: Vec<LogRecord> = records.iter().filter(|r| r.split == Split::Train).cloned().collect();
    if train.is_empty() {
        return Err(Error::Estimation("log has no train records".into()));
    }
    let mut warnings = Vec::new();
    let ctr = fit_ctr(&train, opts.min_count)?;
    warnings.extend(ctr.warnings.iter().cloned());
    let supply = count_supply(records, Split::Test);

    // prices per type, all splits for the bid cap, train for the fit
    let mut fit_prices: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut max_price: BTreeMap<&str, f64> = BTreeMap::new();
    for r in records {
        let m = max_price.entry(&r.impression_key).or_insert(0.0);
        *m = m.max(r.paying_price);
        if r.split == Split::Train && r.paying_price > 0.0 {
            fit_prices.entry(&r.impression_key).or_default().push(r.paying_price);
        }
    }
    let types: BTreeSet<&str> = records.iter().map(|r| r.impression_key.as_str()).collect();
    for t in supply.keys() {
        if !fit_prices.contains_key(t.as_str()) {
            warnings.push(format!("impression type {t} appears only in the test split"));
        }
    }

    let fitted: Vec<(String, Result<FittedType>)> = types
        .par_iter()
        .map(|&t| {
            let res = (|| {
                let prices = fit_prices.get(t).map(Vec::as_slice).unwrap_or(&[]);
                let max_bid = opts.max_bid.unwrap_or(max_price[t]);
                if !(max_bid > 0.0) {
                    return Err(Error::Estimation("all prices are zero".into()));
                }
                let capped: Vec<f64> = prices.iter().map(|p| p.min(max_bid)).collect();
                let fit = fit_beta_landscape(&capped, max_bid)?;
                let land = match fit.landscape {
                    BidLandscape::SecondPriceBeta { a, b, max_bid } => {
                        let mut rng = substream(opts.seed, &format!("monte_carlo:{t}"));
                        tabulate_with_monte_carlo(a, b, max_bid, opts.mc_samples, opts.grid, &mut rng)?
                    }
                    ref other => other.clone(),
                };
                Ok((fit, land, max_bid))
            })();
            (t.to_string(), res)
        })
        .collect();

    let mut doc = InstanceDoc::default();
    let mut fit_methods = BTreeMap::new();
    for (t, res) in fitted {
        match res {
            Ok((fit, land, max_bid)) => {
                fit_methods.insert(t.clone(), fit.method);
                doc.impression_types.push(ImpressionType {
                    id: t.clone(),
                    supply: supply.get(&t).copied().unwrap_or(0) as f64,
                    max_bid,
                    landscape_id: t.clone(),
                });
                doc.landscapes.push(LandscapeEntry { id: t, model: land });
            }
            Err(e) => warnings.push(format!("impression type {t} dropped: {e}")),
        }
    }
    let kept: BTreeSet<&str> = doc.impression_types.iter().map(|t| t.id.as_str()).collect();

    let mut test_spend: BTreeMap<&str, f64> = BTreeMap::new();
    let campaigns: BTreeSet<&str> = records.iter().map(|r| r.campaign_key.as_str()).collect();
    for r in records.iter().filter(|r| r.split == Split::Test) {
        *test_spend.entry(&r.campaign_key).or_insert(0.0) += r.paying_price;
    }
    let mut kept_campaigns = BTreeSet::new();
    for &k in &campaigns {
        let budget = opts
            .budgets
            .get(k)
            .copied()
            .unwrap_or_else(|| test_spend.get(k).copied().unwrap_or(0.0));
        if !(budget > 0.0) {
            warnings.push(format!("campaign {k} excluded: no budget and no test-split spend"));
            continue;
        }
        let cpc = opts.cpcs.get(k).copied().unwrap_or(opts.default_cpc);
        doc.campaigns.push(Campaign {
            id: k.to_string(),
            budget,
            cpc,
            utility: opts.utility.make(budget),
        });
        kept_campaigns.insert(k);
    }
    for k in opts.cpcs.keys().chain(opts.budgets.keys()) {
        if !campaigns.contains(k.as_str()) {
            warnings.push(format!("campaign {k} has no impressions in the log and is excluded"));
        }
    }

    let pairs: BTreeSet<(&str, &str)> = records
        .iter()
        .map(|r| (r.impression_key.as_str(), r.campaign_key.as_str()))
        .collect();
    for (i, k) in pairs {
        if !kept.contains(i) || !kept_campaigns.contains(k) {
            continue;
        }
        let theta = match ctr.ctr.get(&(i.to_string(), k.to_string())) {
            Some(&c) => c,
            None => {
                // pair never seen in train: campaign pooled rate, else zero
                let pooled = pooled_rate(&train, k);
                if pooled.is_none() {
                    warnings.push(format!("campaign {k} has no train records; click rate set to 0"));
                }
                pooled.unwrap_or(0.0)
            }
        };
        let cpc = doc.campaigns.iter().find(|c| c.id == k).map(|c| c.cpc).unwrap();
        doc.edges.push(EdgeSpec {
            impression_id: i.to_string(),
            campaign_id: k.to_string(),
            ctr: theta,
            revenue: cpc * theta,
        });
    }
    warnings.dedup();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(BuildReport {
        instance: Instance::new(doc)?,
        fit_methods,
        warnings,
    })
}

fn pooled_rate(train: &[LogRecord], campaign: &str) -> Option<f64> {
    let (n, c) = train
        .iter()
        .filter(|r| r.campaign_key == campaign)
        .fold((0u64, 0u64), |(n, c), r| (n + 1, c + u64::from(r.clicked)));
    (n > 0).then(|| c as f64 / n as f64)
}

/// Turns a simulated stream into a log: each event goes to a uniformly
/// chosen targeting campaign, pays its market price, clicks with the edge
/// CTR, and lands in train with probability `train_fraction`.
pub fn log_from_stream(
    instance: &Instance,
    stream: &[ImpressionEvent],
    train_fraction: f64,
    seed: u64,
) -> Vec<LogRecord> {
    let mut rng = substream(seed, "log");
    let mut out = Vec::with_capacity(stream.len());
    for ev in stream {
        let edges = instance.edges_of_impression(ev.impression);
        if edges.is_empty() {
            continue;
        }
        let e = edges[rng.random_range(0..edges.len())];
        let edge = &instance.edges()[e];
        out.push(LogRecord {
            impression_key: instance.impressions()[ev.impression].id.clone(),
            campaign_key: instance.campaigns()[edge.campaign].id.clone(),
            paying_price: ev.market_price,
            clicked: rng.random::<f64>() < edge.ctr,
            split: if rng.random::<f64>() < train_fraction {
                Split::Train
            } else {
                Split::Test
            },
        });
    }
    out
}
