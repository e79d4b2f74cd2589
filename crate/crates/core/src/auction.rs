//! Bid landscapes: win probability ρ(b), expected payment β(b), the per-edge
//! profit kernel h(z, b) = (z − β(b))·ρ(b), and optimal bidding.
//!
//! Every landscape is the distribution of the highest competing bid `M` on
//! `[0, max_bid]` plus a payment rule. A bid `b` wins iff `b > M`, so ρ is the
//! CDF of `M`. Second-price kinds pay `M`; first-price kinds pay `alpha·b`.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use statrs::function::beta::beta_reg;

/// Grid size for the generic optimal-bid scan.
pub const DEFAULT_BID_GRID: usize = 512;
/// Points used when checking monotonicity at construction.
const VALIDATION_GRID: usize = 1025;
/// Minimum sample count accepted by [`monte_carlo_beta`].
pub const MIN_MC_SAMPLES: usize = 1000;
const DOMAIN_TOL: f64 = 1e-9;

/// ρ-only sub-model used by scaled first-price landscapes. All curves live on
/// `[0, max_bid]` of the owning landscape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WinCurve {
    /// CDF of `max_bid · Beta(a, b)`.
    BetaCdf { a: f64, b: f64 },
    /// `(b / max_bid)^n`.
    Power { n: f64 },
    /// `b / (c + b)`.
    Ratio { c: f64 },
    /// `1 − exp(−rate·b)`.
    Exponential { rate: f64 },
    /// Piecewise-linear through `(bids, rho)`.
    Tabulated { bids: Vec<f64>, rho: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BidLandscape {
    /// Second price auction whose highest competing bid is `max_bid · Beta(a, b)`.
    SecondPriceBeta { a: f64, b: f64, max_bid: f64 },
    /// Scaled first price auction: the winner pays `alpha` times its bid.
    ScaledFirstPrice {
        alpha: f64,
        max_bid: f64,
        win_curve: WinCurve,
    },
    /// Scaled first price against `n` competitors bidding Uniform(0, max_bid).
    UniformCompetitors { n: u32, alpha: f64, max_bid: f64 },
    /// Second price auction described by monotone tables. `bids` must start
    /// at 0; the last bid is the domain end.
    TabulatedEmpirical {
        bids: Vec<f64>,
        rho: Vec<f64>,
        beta: Vec<f64>,
    },
}

/// How a won auction is settled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AuctionRule {
    SecondPrice,
    FirstPrice { alpha: f64 },
}

impl AuctionRule {
    pub fn payment(self, bid: f64, market_price: f64) -> f64 {
        match self {
            AuctionRule::SecondPrice => market_price,
            AuctionRule::FirstPrice { alpha } => alpha * bid,
        }
    }
}

/// Result of maximizing h(z, ·) over `[0, max_bid]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BidChoice {
    pub bid: f64,
    pub value: f64,
}

/// Finite-difference diagnostics for the zero-duality-gap conditions:
/// ρ strictly increasing and g(b) = (ρβ)'/ρ' strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub rho_strictly_increasing: bool,
    pub g_strictly_increasing: bool,
    pub grid_used: usize,
    /// Midpoints where Δρ ≤ 0.
    pub rho_witnesses: Vec<f64>,
    /// Midpoints where g is undefined or fails to increase.
    pub g_witnesses: Vec<f64>,
}

impl ConditionReport {
    pub fn passes(&self) -> bool {
        self.rho_strictly_increasing && self.g_strictly_increasing
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[j]) / (xs[j + 1] - xs[j]);
    ys[j] + t * (ys[j + 1] - ys[j])
}

/// Inverse of a piecewise-linear CDF. Mass above the table's last value maps
/// to `upper` (an unwinnable price).
fn interp_inverse(xs: &[f64], ys: &[f64], u: f64, upper: f64) -> f64 {
    if u < ys[0] {
        return xs[0];
    }
    let n = ys.len();
    if u >= ys[n - 1] {
        return upper;
    }
    let j = ys.partition_point(|&v| v <= u);
    // ys[j-1] <= u < ys[j]
    let (y0, y1) = (ys[j - 1], ys[j]);
    let t = (u - y0) / (y1 - y0);
    xs[j - 1] + t * (xs[j] - xs[j - 1])
}

fn check_table(name: &str, bids: &[f64], values: &[&[f64]], max_bid: f64) -> Result<()> {
    if bids.len() < 2 {
        return Err(Error::Landscape(format!("{name}: need at least 2 grid points")));
    }
    if values.iter().any(|v| v.len() != bids.len()) {
        return Err(Error::Landscape(format!("{name}: arrays differ in length")));
    }
    if bids[0] != 0.0 {
        return Err(Error::Landscape(format!("{name}: bids must start at 0")));
    }
    if bids.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Landscape(format!("{name}: bids must be strictly increasing")));
    }
    if (bids[bids.len() - 1] - max_bid).abs() > DOMAIN_TOL * max_bid.max(1.0) {
        return Err(Error::Landscape(format!(
            "{name}: last bid {} differs from max_bid {max_bid}",
            bids[bids.len() - 1]
        )));
    }
    for v in values {
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Landscape(format!("{name}: negative or non-finite entry")));
        }
        if v.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Landscape(format!("{name}: table is not monotone")));
        }
    }
    Ok(())
}

impl WinCurve {
    fn rho(&self, b: f64, max_bid: f64) -> f64 {
        match self {
            WinCurve::BetaCdf { a, b: bb } => beta_reg(*a, *bb, (b / max_bid).clamp(0.0, 1.0)),
            WinCurve::Power { n } => (b / max_bid).clamp(0.0, 1.0).powf(*n),
            WinCurve::Ratio { c } => b / (c + b),
            WinCurve::Exponential { rate } => -(-rate * b).exp_m1(),
            WinCurve::Tabulated { bids, rho } => interp(bids, rho, b),
        }
    }

    fn validate(&self, max_bid: f64) -> Result<()> {
        let ok = match self {
            WinCurve::BetaCdf { a, b } => *a > 0.0 && *b > 0.0,
            WinCurve::Power { n } => *n > 0.0,
            WinCurve::Ratio { c } => *c > 0.0,
            WinCurve::Exponential { rate } => *rate > 0.0,
            WinCurve::Tabulated { bids, rho } => {
                check_table("win curve", bids, &[rho], max_bid)?;
                rho.iter().all(|r| *r <= 1.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Landscape(format!("bad win curve parameters: {self:?}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, max_bid: f64) -> f64 {
        let m = match self {
            WinCurve::BetaCdf { a, b } => max_bid * Beta::new(*a, *b).unwrap().sample(rng),
            WinCurve::Power { n } => max_bid * rng.random::<f64>().powf(1.0 / n),
            WinCurve::Ratio { c } => {
                let u: f64 = rng.random();
                c * u / (1.0 - u)
            }
            WinCurve::Exponential { rate } => -(-rng.random::<f64>()).ln_1p() / rate,
            WinCurve::Tabulated { bids, rho } => interp_inverse(bids, rho, rng.random(), max_bid),
        };
        m.min(max_bid)
    }
}

impl BidLandscape {
    pub fn max_bid(&self) -> f64 {
        match self {
            BidLandscape::SecondPriceBeta { max_bid, .. }
            | BidLandscape::ScaledFirstPrice { max_bid, .. }
            | BidLandscape::UniformCompetitors { max_bid, .. } => *max_bid,
            BidLandscape::TabulatedEmpirical { bids, .. } => bids.last().copied().unwrap_or(0.0),
        }
    }

    pub fn rule(&self) -> AuctionRule {
        match self {
            BidLandscape::SecondPriceBeta { .. } | BidLandscape::TabulatedEmpirical { .. } => AuctionRule::SecondPrice,
            BidLandscape::ScaledFirstPrice { alpha, .. } | BidLandscape::UniformCompetitors { alpha, .. } => {
                AuctionRule::FirstPrice { alpha: *alpha }
            }
        }
    }

    /// Checks parameters and, on a dense grid, that ρ ∈ [0,1] is
    /// non-decreasing, β is non-decreasing and β(b) ≤ b.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Landscape(msg));
        match self {
            BidLandscape::SecondPriceBeta { a, b, max_bid } => {
                if !(*a > 0.0 && *b > 0.0 && *max_bid > 0.0) {
                    return bad(format!("second_price_beta needs a, b, max_bid > 0: {self:?}"));
                }
            }
            BidLandscape::ScaledFirstPrice {
                alpha,
                max_bid,
                win_curve,
            } => {
                if !(*alpha > 0.0 && *alpha <= 1.0 && *max_bid > 0.0) {
                    return bad(format!("scaled_first_price needs alpha in (0,1]: {self:?}"));
                }
                win_curve.validate(*max_bid)?;
            }
            BidLandscape::UniformCompetitors { n, alpha, max_bid } => {
                if !(*n >= 1 && *alpha > 0.0 && *alpha <= 1.0 && *max_bid > 0.0) {
                    return bad(format!("uniform_competitors parameters out of range: {self:?}"));
                }
            }
            BidLandscape::TabulatedEmpirical { bids, rho, beta } => {
                check_table(
                    "tabulated_empirical",
                    bids,
                    &[rho, beta],
                    bids.last().copied().unwrap_or(0.0),
                )?;
                if rho.iter().any(|r| *r > 1.0) {
                    return bad("tabulated_empirical: rho above 1".into());
                }
                if bids.iter().zip(beta).any(|(b, p)| *p > b + DOMAIN_TOL) {
                    return bad("tabulated_empirical: beta exceeds bid".into());
                }
            }
        }
        let max_bid = self.max_bid();
        let mut prev_rho = f64::NEG_INFINITY;
        let mut prev_beta = f64::NEG_INFINITY;
        for j in 0..VALIDATION_GRID {
            let b = max_bid * j as f64 / (VALIDATION_GRID - 1) as f64;
            let r = self.rho_unchecked(b);
            let p = self.beta_unchecked(b);
            if !(0.0..=1.0 + 1e-12).contains(&r) {
                return bad(format!("rho({b}) = {r} outside [0, 1]"));
            }
            // Conditional payment is only pinned down where ρ > 0.
            if r > 0.0 && p > b + 1e-9 * max_bid.max(1.0) {
                return bad(format!("beta({b}) = {p} exceeds the bid"));
            }
            if r < prev_rho - 1e-12 {
                return bad(format!("rho decreases at {b}"));
            }
            if r > 0.0 && p < prev_beta - 1e-9 * max_bid.max(1.0) {
                return bad(format!("beta decreases at {b}"));
            }
            prev_rho = prev_rho.max(r);
            if r > 0.0 {
                prev_beta = prev_beta.max(p);
            }
        }
        Ok(())
    }

    fn check_domain(&self, b: f64) -> Result<f64> {
        let max_bid = self.max_bid();
        let tol = DOMAIN_TOL * max_bid.max(1.0);
        if !(b >= -tol && b <= max_bid + tol) {
            return Err(Error::domain(b, format!("[0, {max_bid}]")));
        }
        Ok(b.clamp(0.0, max_bid))
    }

    /// Win probability ρ(b).
    pub fn rho(&self, b: f64) -> Result<f64> {
        Ok(self.rho_unchecked(self.check_domain(b)?))
    }

    /// Expected payment given a win, β(b). Zero where ρ(b) = 0.
    pub fn beta_pay(&self, b: f64) -> Result<f64> {
        Ok(self.beta_unchecked(self.check_domain(b)?))
    }

    /// Expected profit per entered auction, h(z, b) = (z − β(b))·ρ(b).
    pub fn h(&self, z: f64, b: f64) -> Result<f64> {
        Ok(self.h_unchecked(z, self.check_domain(b)?))
    }

    pub(crate) fn rho_unchecked(&self, b: f64) -> f64 {
        match self {
            BidLandscape::SecondPriceBeta { a, b: bb, max_bid } => beta_reg(*a, *bb, (b / max_bid).clamp(0.0, 1.0)),
            BidLandscape::ScaledFirstPrice { max_bid, win_curve, .. } => win_curve.rho(b, *max_bid),
            BidLandscape::UniformCompetitors { n, max_bid, .. } => (b / max_bid).clamp(0.0, 1.0).powi(*n as i32),
            BidLandscape::TabulatedEmpirical { bids, rho, .. } => interp(bids, rho, b),
        }
    }

    /// ρ(b)·β(b), the expected payment per entered auction.
    pub(crate) fn rho_beta_unchecked(&self, b: f64) -> f64 {
        match self {
            // E[M·1{M ≤ b}] = max_bid · a/(a+b) · I_x(a+1, b)
            BidLandscape::SecondPriceBeta { a, b: bb, max_bid } => {
                max_bid * a / (a + bb) * beta_reg(a + 1.0, *bb, (b / max_bid).clamp(0.0, 1.0))
            }
            BidLandscape::ScaledFirstPrice { alpha, .. } | BidLandscape::UniformCompetitors { alpha, .. } => {
                alpha * b * self.rho_unchecked(b)
            }
            BidLandscape::TabulatedEmpirical { bids, rho, beta } => interp(bids, rho, b) * interp(bids, beta, b),
        }
    }

    pub(crate) fn beta_unchecked(&self, b: f64) -> f64 {
        match self {
            BidLandscape::SecondPriceBeta { .. } => {
                let r = self.rho_unchecked(b);
                if r <= f64::MIN_POSITIVE {
                    0.0
                } else {
                    (self.rho_beta_unchecked(b) / r).min(b)
                }
            }
            BidLandscape::ScaledFirstPrice { alpha, .. } | BidLandscape::UniformCompetitors { alpha, .. } => {
                if self.rho_unchecked(b) > 0.0 {
                    alpha * b
                } else {
                    0.0
                }
            }
            BidLandscape::TabulatedEmpirical { bids, rho, beta } => {
                if interp(bids, rho, b) > 0.0 {
                    interp(bids, beta, b)
                } else {
                    0.0
                }
            }
        }
    }

    pub(crate) fn h_unchecked(&self, z: f64, b: f64) -> f64 {
        z * self.rho_unchecked(b) - self.rho_beta_unchecked(b)
    }

    /// Maximizes h(z, ·) over `[0, max_bid]`, in closed form when the kind
    /// admits one and numerically otherwise.
    pub fn optimal_bid(&self, z: f64) -> BidChoice {
        if let Some(c) = self.closed_form_bid(z) {
            return c;
        }
        self.numeric_bid(z, DEFAULT_BID_GRID)
    }

    /// Truthful bidding for second-price Beta landscapes, and
    /// `n·z / (alpha·(n+1))` against uniform competitors, both clamped to
    /// `[0, max_bid]`.
    pub fn closed_form_bid(&self, z: f64) -> Option<BidChoice> {
        let bid = match self {
            BidLandscape::SecondPriceBeta { max_bid, .. } => z.clamp(0.0, *max_bid),
            BidLandscape::UniformCompetitors { n, alpha, max_bid } => {
                let n = *n as f64;
                (n * z / (alpha * (n + 1.0))).clamp(0.0, *max_bid)
            }
            _ => return None,
        };
        Some(BidChoice {
            bid,
            value: self.h_unchecked(z, bid),
        })
    }

    /// Dense grid scan followed by golden-section refinement around the best
    /// grid point.
    pub fn numeric_bid(&self, z: f64, grid: usize) -> BidChoice {
        let grid = grid.max(3);
        let max_bid = self.max_bid();
        if z <= 0.0 && self.rho_unchecked(0.0) == 0.0 {
            // h(z, b) = zρ − ρβ ≤ 0 = h(z, 0)
            return BidChoice { bid: 0.0, value: 0.0 };
        }
        let step = max_bid / (grid - 1) as f64;
        let mut best_j = 0;
        let mut best = f64::NEG_INFINITY;
        for j in 0..grid {
            let v = self.h_unchecked(z, j as f64 * step);
            if v > best {
                best = v;
                best_j = j;
            }
        }
        let lo = best_j.saturating_sub(1) as f64 * step;
        let hi = ((best_j + 1).min(grid - 1) as f64 * step).min(max_bid);
        let (b, v) = golden_max(|b| self.h_unchecked(z, b), lo, hi, 1e-12 * max_bid.max(1.0));
        if v > best {
            BidChoice { bid: b, value: v }
        } else {
            BidChoice {
                bid: best_j as f64 * step,
                value: best,
            }
        }
    }

    /// Central differences of ρ and ρβ between consecutive points of a
    /// uniform grid over `[0, max_bid]`. Light-tailed landscapes whose ρ
    /// rounds to 1 before `max_bid` report witnesses in that flat tail.
    pub fn check_conditions(&self, grid_size: usize) -> ConditionReport {
        let n = grid_size.max(16);
        let max_bid = self.max_bid();
        let pts: Vec<f64> = (0..n).map(|j| max_bid * j as f64 / (n - 1) as f64).collect();
        let rho: Vec<f64> = pts.iter().map(|&b| self.rho_unchecked(b)).collect();
        let rb: Vec<f64> = pts.iter().map(|&b| self.rho_beta_unchecked(b)).collect();

        let mut rho_witnesses = Vec::new();
        let mut g_witnesses = Vec::new();
        let mut prev_g: Option<f64> = None;
        for j in 0..n - 1 {
            let mid = 0.5 * (pts[j] + pts[j + 1]);
            let d_rho = rho[j + 1] - rho[j];
            if d_rho <= 0.0 {
                rho_witnesses.push(mid);
                g_witnesses.push(mid);
                prev_g = None;
                continue;
            }
            let g = (rb[j + 1] - rb[j]) / d_rho;
            if let Some(p) = prev_g {
                if g <= p {
                    g_witnesses.push(mid);
                }
            }
            prev_g = Some(g);
        }
        ConditionReport {
            rho_strictly_increasing: rho_witnesses.is_empty(),
            g_strictly_increasing: g_witnesses.is_empty(),
            grid_used: n,
            rho_witnesses,
            g_witnesses,
        }
    }

    /// Draws the highest competing bid. Mass beyond `max_bid` is reported as
    /// `max_bid`, which no admissible bid beats.
    pub fn sample_competing_bid<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            BidLandscape::SecondPriceBeta { a, b, max_bid } => max_bid * Beta::new(*a, *b).unwrap().sample(rng),
            BidLandscape::ScaledFirstPrice { max_bid, win_curve, .. } => win_curve.sample(rng, *max_bid),
            BidLandscape::UniformCompetitors { n, max_bid, .. } => max_bid * rng.random::<f64>().powf(1.0 / *n as f64),
            BidLandscape::TabulatedEmpirical { bids, rho, .. } => {
                interp_inverse(bids, rho, rng.random(), bids[bids.len() - 1])
            }
        }
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let candidates = [(lo, f(lo)), (hi, f(hi)), (x1, f1), (x2, f2)];
    candidates
        .into_iter()
        .fold((lo, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc })
}

/// Empirical conditional-payment curve from observed winning prices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PaymentCurve {
    pub bids: Vec<f64>,
    pub beta: Vec<f64>,
    /// Grid points with no sample at or below them; β is 0 there by convention.
    pub undefined: Vec<bool>,
}

/// β̂(b) = mean of the samples ≤ b at every grid point, forced monotone.
pub fn monte_carlo_beta(samples: &[f64], b_grid: &[f64]) -> Result<PaymentCurve> {
    if samples.is_empty() {
        return Err(Error::Estimation("no winning-price samples".into()));
    }
    if samples.len() < MIN_MC_SAMPLES {
        return Err(Error::Estimation(format!(
            "need at least {MIN_MC_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    Ok(conditional_mean_curve(samples, b_grid))
}

pub(crate) fn conditional_mean_curve(samples: &[f64], b_grid: &[f64]) -> PaymentCurve {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for s in &sorted {
        acc += s;
        prefix.push(acc);
    }
    let mut beta = Vec::with_capacity(b_grid.len());
    let mut undefined = Vec::with_capacity(b_grid.len());
    let mut running: f64 = 0.0;
    for &b in b_grid {
        let count = sorted.partition_point(|&s| s <= b);
        if count == 0 {
            beta.push(0.0);
            undefined.push(true);
        } else {
            running = running.max(prefix[count] / count as f64);
            beta.push(running);
            undefined.push(false);
        }
    }
    PaymentCurve {
        bids: b_grid.to_vec(),
        beta,
        undefined,
    }
}

/// Fraction of samples at or below each grid point.
pub fn empirical_cdf(samples: &[f64], b_grid: &[f64]) -> Vec<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    b_grid
        .iter()
        .map(|&b| sorted.partition_point(|&s| s <= b) as f64 / n)
        .collect()
}
