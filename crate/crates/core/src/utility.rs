//! Campaign spending utilities u_k and their convex conjugates
//! p_k(λ) = sup_{v ≥ 0} { λ·v + u_k(v) }.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    /// 0 on `[0, m]`, −∞ above.
    BudgetCap { budget: f64 },
    /// −(τ/2)(v − m)² on `[0, m]`, −∞ above. `tau = 0` behaves as `BudgetCap`.
    QuadraticTarget { budget: f64, tau: f64 },
    /// 0 on `[alpha_spend·m, m]`, −∞ elsewhere.
    SpendRange { budget: f64, alpha_spend: f64 },
}

impl UtilitySpec {
    pub fn budget(&self) -> f64 {
        match *self {
            UtilitySpec::BudgetCap { budget }
            | UtilitySpec::QuadraticTarget { budget, .. }
            | UtilitySpec::SpendRange { budget, .. } => budget,
        }
    }

    /// Same family with a different budget.
    pub fn with_budget(&self, budget: f64) -> UtilitySpec {
        match *self {
            UtilitySpec::BudgetCap { .. } => UtilitySpec::BudgetCap { budget },
            UtilitySpec::QuadraticTarget { tau, .. } => UtilitySpec::QuadraticTarget { budget, tau },
            UtilitySpec::SpendRange { alpha_spend, .. } => UtilitySpec::SpendRange { budget, alpha_spend },
        }
    }

    /// Smallest spend with finite utility.
    pub fn min_spend(&self) -> f64 {
        match *self {
            UtilitySpec::SpendRange { budget, alpha_spend } => alpha_spend * budget,
            _ => 0.0,
        }
    }

    /// Quadratic penalty, if this spec has a non-degenerate one.
    pub fn quadratic_tau(&self) -> Option<f64> {
        match *self {
            UtilitySpec::QuadraticTarget { tau, .. } if tau > 0.0 => Some(tau),
            _ => None,
        }
    }

    pub fn check(&self) -> Result<()> {
        let ok = match *self {
            UtilitySpec::BudgetCap { budget } => budget > 0.0,
            UtilitySpec::QuadraticTarget { budget, tau } => budget > 0.0 && tau >= 0.0,
            UtilitySpec::SpendRange { budget, alpha_spend } => budget > 0.0 && (0.0..=1.0).contains(&alpha_spend),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("utility parameters out of range: {self:?}")))
        }
    }

    pub fn u(&self, v: f64) -> Result<ExtReal> {
        if !(v >= 0.0) {
            return Err(Error::domain(v, "[0, inf)"));
        }
        let m = self.budget();
        if v > m || v < self.min_spend() {
            return Ok(ExtReal::NegInf);
        }
        Ok(match *self {
            UtilitySpec::QuadraticTarget { tau, .. } => ExtReal::Finite(-0.5 * tau * (v - m) * (v - m)),
            _ => ExtReal::ZERO,
        })
    }

    /// `u` after snapping `v` into the finite domain when it lies within
    /// `tol·max(1, m)` of it. Used to score solver output, which can overshoot
    /// a budget row by rounding error.
    pub fn u_tolerant(&self, v: f64, tol: f64) -> Result<ExtReal> {
        let slack = tol * self.budget().max(1.0);
        let lo = self.min_spend();
        let hi = self.budget();
        let snapped = if v > hi && v <= hi + slack {
            hi
        } else if v < lo && v >= lo - slack {
            lo
        } else {
            v
        };
        self.u(snapped.max(0.0))
    }

    /// A λ below which the dual function cannot decrease along this
    /// campaign's coordinate: there p′ is 0 and the spend term only grows.
    pub fn dual_lower_bound(&self) -> f64 {
        match *self {
            UtilitySpec::BudgetCap { .. } => 0.0,
            UtilitySpec::QuadraticTarget { budget, tau } => -tau * budget,
            UtilitySpec::SpendRange { alpha_spend, .. } => {
                if alpha_spend == 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Convex conjugate p(λ).
    pub fn conjugate(&self, lambda: f64) -> f64 {
        match *self {
            UtilitySpec::BudgetCap { budget } => budget * lambda.max(0.0),
            UtilitySpec::QuadraticTarget { budget, tau } => {
                if tau == 0.0 || lambda >= 0.0 {
                    budget * lambda.max(0.0)
                } else if lambda >= -tau * budget {
                    lambda * budget + lambda * lambda / (2.0 * tau)
                } else {
                    -0.5 * tau * budget * budget
                }
            }
            UtilitySpec::SpendRange { budget, alpha_spend } => {
                if lambda >= 0.0 {
                    budget * lambda
                } else {
                    alpha_spend * budget * lambda
                }
            }
        }
    }

    /// The maximizing spend of the conjugate's sup, an element of ∂p(λ).
    /// At kinks the right limit is taken.
    pub fn conjugate_subgradient(&self, lambda: f64) -> f64 {
        match *self {
            UtilitySpec::BudgetCap { budget } => {
                if lambda >= 0.0 {
                    budget
                } else {
                    0.0
                }
            }
            UtilitySpec::QuadraticTarget { budget, tau } => {
                if tau == 0.0 {
                    if lambda >= 0.0 {
                        budget
                    } else {
                        0.0
                    }
                } else {
                    (budget + lambda / tau).clamp(0.0, budget)
                }
            }
            UtilitySpec::SpendRange { budget, alpha_spend } => {
                if lambda >= 0.0 {
                    budget
                } else {
                    alpha_spend * budget
                }
            }
        }
    }

    /// Biconjugacy gap: max over `v_grid` (finite-utility points only) of
    /// |u(v) − min_{z ∈ z_grid} (p(z) − z·v)|.
    pub fn fenchel_check(&self, v_grid: &[f64], z_grid: &[f64]) -> f64 {
        let mut gap: f64 = 0.0;
        for &v in v_grid {
            let Ok(ExtReal::Finite(uv)) = self.u(v) else {
                continue;
            };
            let inner = z_grid
                .iter()
                .map(|&z| self.conjugate(z) - z * v)
                .fold(f64::INFINITY, f64::min);
            gap = gap.max((uv - inner).abs());
        }
        gap
    }
}
