//! Double plans `(n1, k1, k2; n2, k3)` with a pooled second stage.
//!
//! Stage one draws `n1` items and computes `p*₁`: accept if `p*₁ ≤ k1`,
//! reject if `p*₁ > k2`, otherwise draw `n2` more and accept iff the pooled
//! estimate `p*_p ≤ k3`. Then
//!
//! `OC = L_(n1,k1) + P(A₂ᵘ) − P(A₂ˡ)`
//!
//! where `P(A₂ᵘ) = P(p*_p ≤ k3, p*₁ ≤ k2)` and `P(A₂ˡ)` has `k1` in place
//! of `k2`. The integration variables are the standardized stage means
//! `Yᵢ = √nᵢ(X̄ᵢ − μ)/σ` and chi-square variates `Wᵢ = (nᵢ − 1)Sᵢ²/σ²`.
//!
//! Two evaluation routes are offered, see [`OcMethod`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::{band_extreme, refine_extreme, BandExtreme, Extreme};
use crate::error::{Error, Result};
use crate::isoline::{
    mu_upper_unchecked, sigma0, FractionDefective, MaxSigmaTable, MuUpperTable, ProcessPoint,
    SpecLimits,
};
use crate::quadrature::{ChiSquareRule, GaussLegendre};
use crate::single_plan::{check_threshold, SingleOc, SinglePlan, MU_TABLE_ACCURACY};
use crate::special::{norm_cdf, norm_pdf, ChiSquare, Probability};

/// Standardized means beyond this bound carry negligible mass.
const Y_CLIP: f64 = 8.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDouble", into = "RawDouble")]
pub struct DoublePlan {
    n1: u32,
    k1: f64,
    k2: f64,
    n2: u32,
    k3: f64,
}

#[derive(Serialize, Deserialize)]
struct RawDouble {
    n1: u32,
    k1: f64,
    k2: f64,
    n2: u32,
    k3: f64,
}

impl TryFrom<RawDouble> for DoublePlan {
    type Error = Error;
    fn try_from(r: RawDouble) -> Result<Self> {
        Self::new(r.n1, r.k1, r.k2, r.n2, r.k3)
    }
}

impl From<DoublePlan> for RawDouble {
    fn from(p: DoublePlan) -> Self {
        Self {
            n1: p.n1,
            k1: p.k1,
            k2: p.k2,
            n2: p.n2,
            k3: p.k3,
        }
    }
}

impl DoublePlan {
    pub fn new(n1: u32, k1: f64, k2: f64, n2: u32, k3: f64) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::invalid(format!(
                "sample sizes must be at least 2, got n1={n1}, n2={n2}"
            )));
        }
        for k in [k1, k2, k3] {
            check_threshold(k)?;
        }
        if k1 > k2 {
            return Err(Error::invalid(format!(
                "need k1 <= k2, got k1={k1}, k2={k2}"
            )));
        }
        Ok(Self { n1, k1, k2, n2, k3 })
    }

    pub fn n1(&self) -> u32 {
        self.n1
    }
    pub fn k1(&self) -> f64 {
        self.k1
    }
    pub fn k2(&self) -> f64 {
        self.k2
    }
    pub fn n2(&self) -> u32 {
        self.n2
    }
    pub fn k3(&self) -> f64 {
        self.k3
    }
    pub fn total(&self) -> u32 {
        self.n1 + self.n2
    }
}

/// How the second-stage probability is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcMethod {
    /// Four-fold integral over `(w1, y1, y2, w2)` with nested bounds `F`,
    /// `[E1, E2]`, the `y2` range where `D ≥ 0`, and `[0, D]`; the
    /// innermost term is `Φ(C2) − Φ(C1)`, with `C1`, `C2` bounding the
    /// second-sample mean through the pooled standard deviation. This is
    /// the route that reproduces the published band tables.
    #[default]
    NestedBounds,
    /// Exact conditional probability: given `(w1, y1, y2)` the pooled
    /// test passes iff `W2 ≤ (N − 1)s*(|x̿ − μ₀|)²/σ² − w1 − Z2²`, where
    /// `s*(d)` is the largest standard deviation accepted at offset `d`.
    /// The innermost integral is a chi-square CDF.
    Conditional,
}

/// Numerical settings for the multi-dimensional integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub nodes_per_dim: usize,
    pub abs_tol: f64,
    pub mu_table_accuracy: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes_per_dim: 32,
            abs_tol: 1e-6,
            mu_table_accuracy: MU_TABLE_ACCURACY,
        }
    }
}

impl QuadratureConfig {
    pub fn new(nodes_per_dim: usize, abs_tol: f64) -> Result<Self> {
        let cfg = Self {
            nodes_per_dim,
            abs_tol,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_dim < 8 {
            return Err(Error::invalid(format!(
                "nodes_per_dim must be at least 8, got {}",
                self.nodes_per_dim
            )));
        }
        if !(self.abs_tol > 0.0) || !(self.mu_table_accuracy > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        Ok(())
    }

    /// Coarser companion rule used for error estimates.
    fn coarse(&self) -> Self {
        Self {
            nodes_per_dim: (self.nodes_per_dim * 3 / 4).max(8),
            ..*self
        }
    }
}

/// One point of the `(w1, y1, y2, w2)` integration domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2Frame {
    pub w1: f64,
    pub y1: f64,
    pub y2: f64,
    pub w2: f64,
}

/// Pooled standard deviation of both samples expressed through the frame:
/// `S = σ√(N(W1 + W2) + (√n2 Y1 − √n1 Y2)²) / √((N − 1)N)`.
pub fn pooled_sd(frame: &A2Frame, n1: u32, n2: u32, sigma: f64) -> f64 {
    let (a, b) = (n1 as f64, n2 as f64);
    let n = a + b;
    let contrast = b.sqrt() * frame.y1 - a.sqrt() * frame.y2;
    sigma * ((n * (frame.w1 + frame.w2) + contrast * contrast) / ((n - 1.0) * n)).sqrt()
}

/// Bounds of the nested integral for one plan, process point and
/// first-stage threshold.
#[derive(Debug, Clone, Copy)]
pub struct A2Bounds {
    pub n1: f64,
    pub n2: f64,
    pub mu: f64,
    pub sigma: f64,
    pub mid: f64,
    /// `σ₀` of the first-stage threshold and of `k3`.
    pub sigma0_first: f64,
    pub sigma0_pooled: f64,
}

impl A2Bounds {
    fn total(&self) -> f64 {
        self.n1 + self.n2
    }

    /// `F = (n1 − 1)(σ₀(k)/σ)²`: beyond it the first-stage interval is empty.
    pub fn f(&self) -> f64 {
        (self.n1 - 1.0) * (self.sigma0_first / self.sigma).powi(2)
    }

    /// `[E1, E2]` for `y1` given the half-width of the first-stage interval.
    pub fn e(&self, half_first: f64) -> (f64, f64) {
        let c = self.n1.sqrt() / self.sigma;
        (
            c * (self.mid - half_first - self.mu),
            c * (self.mid + half_first - self.mu),
        )
    }

    /// `N(N − 1)(σ₀(k3)/σ)² − N w1`; the `(y1, y2)` contrast must stay
    /// below its square root for `D ≥ 0`.
    pub fn contrast_budget(&self, w1: f64) -> f64 {
        let n = self.total();
        n * (n - 1.0) * (self.sigma0_pooled / self.sigma).powi(2) - n * w1
    }

    /// `D(w1, y1, y2)`: the largest `w2` keeping `S ≤ σ₀(k3)`.
    pub fn d(&self, w1: f64, y1: f64, y2: f64) -> f64 {
        let q = self.n2.sqrt() * y1 - self.n1.sqrt() * y2;
        (self.contrast_budget(w1) - q * q) / self.total()
    }

    /// `(C1, C2)` for the second-sample mean given half-width of the
    /// pooled acceptance interval at `S`.
    pub fn c(&self, y1: f64, half_pooled: f64) -> (f64, f64) {
        let n = self.total();
        let base = self.sigma * self.n1.sqrt() * y1 + n * self.mu;
        let scale = self.sigma * self.n2.sqrt();
        (
            (n * (self.mid - half_pooled) - base) / scale,
            (n * (self.mid + half_pooled) - base) / scale,
        )
    }
}

/// Which first-stage threshold bounds the `A₂` event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `p*₁ ≤ k2`.
    Upper,
    /// `p*₁ ≤ k1`.
    Lower,
}

/// `Φ(b) − Φ(a)` without cancellation in the upper tail.
#[inline]
fn normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        norm_cdf(-a) - norm_cdf(-b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    }
}

/// Value with a quadrature error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcEstimate {
    pub value: f64,
    pub error: f64,
}

/// OC and ASN evaluator for one double plan under fixed limits.
///
/// Holds the memoized acceptance-interval tables for all three thresholds
/// and the fixed quadrature rules, so repeated evaluation (bands, searches)
/// pays the setup once.
#[derive(Debug, Clone)]
pub struct DoubleOc {
    plan: DoublePlan,
    lim: SpecLimits,
    cfg: QuadratureConfig,
    method: OcMethod,
    first_lower: SingleOc,
    first_upper: SingleOc,
    table_k1: MuUpperTable,
    table_k2: MuUpperTable,
    table_k3: MuUpperTable,
    max_sigma_k3: Option<MaxSigmaTable>,
    w1_rule: ChiSquareRule,
    w2_rule: ChiSquareRule,
    chi2: ChiSquare,
    y_rule: GaussLegendre,
    y2_rule: GaussLegendre,
}

impl DoubleOc {
    pub fn new(
        plan: DoublePlan,
        lim: &SpecLimits,
        cfg: QuadratureConfig,
        method: OcMethod,
    ) -> Result<Self> {
        cfg.validate()?;
        let acc = cfg.mu_table_accuracy;
        let m = cfg.nodes_per_dim;
        let first = |k| SingleOc::with_accuracy(SinglePlan::unchecked(plan.n1, k), lim, acc);
        let (first_lower, first_upper) = (first(plan.k1), first(plan.k2));
        let y2_nodes = match method {
            OcMethod::NestedBounds => m,
            OcMethod::Conditional => 2 * m,
        };
        Ok(Self {
            plan,
            lim: *lim,
            cfg,
            method,
            first_lower,
            first_upper,
            table_k1: MuUpperTable::new(plan.k1, lim, acc),
            table_k2: MuUpperTable::new(plan.k2, lim, acc),
            table_k3: MuUpperTable::new(plan.k3, lim, acc),
            max_sigma_k3: match method {
                OcMethod::Conditional => Some(MaxSigmaTable::new(plan.k3, lim, acc)),
                OcMethod::NestedBounds => None,
            },
            w1_rule: ChiSquareRule::new(ChiSquare::for_sample_size(plan.n1), m),
            w2_rule: ChiSquareRule::new(ChiSquare::for_sample_size(plan.n2), m),
            chi2: ChiSquare::for_sample_size(plan.n2),
            y_rule: GaussLegendre::new(m),
            y2_rule: GaussLegendre::new(y2_nodes),
        })
    }

    pub fn plan(&self) -> DoublePlan {
        self.plan
    }

    pub fn config(&self) -> QuadratureConfig {
        self.cfg
    }

    pub fn method(&self) -> OcMethod {
        self.method
    }

    fn bounds(&self, branch: Branch, mu: f64, sigma: f64) -> A2Bounds {
        let table = match branch {
            Branch::Upper => &self.table_k2,
            Branch::Lower => &self.table_k1,
        };
        A2Bounds {
            n1: self.plan.n1 as f64,
            n2: self.plan.n2 as f64,
            mu,
            sigma,
            mid: self.lim.midpoint(),
            sigma0_first: table.sigma0(),
            sigma0_pooled: self.table_k3.sigma0(),
        }
    }

    /// `P(A₂ᵘ)` or `P(A₂ˡ)` at `(μ, σ)`.
    pub fn prob_a2(&self, branch: Branch, mu: f64, sigma: f64) -> Result<f64> {
        check_point(mu, sigma)?;
        let v = match self.method {
            OcMethod::NestedBounds => self.a2_nested(branch, mu, sigma),
            OcMethod::Conditional => self.a2_conditional(branch, mu, sigma),
        };
        Ok(v.clamp(0.0, 1.0))
    }

    fn first_stage_nodes(&self, branch: Branch, b: &A2Bounds) -> Vec<(f64, f64, f64, f64)> {
        let table = match branch {
            Branch::Upper => &self.table_k2,
            Branch::Lower => &self.table_k1,
        };
        let scale = b.sigma / (b.n1 - 1.0).sqrt();
        self.w1_rule
            .nodes(b.f())
            .filter_map(|(w1, ww1)| {
                let half = table.half_interval(scale * w1.sqrt());
                if half <= 0.0 {
                    return None;
                }
                let (e1, e2) = b.e(half);
                let (e1, e2) = (e1.max(-Y_CLIP), e2.min(Y_CLIP));
                (e2 > e1).then_some((w1, ww1, e1, e2))
            })
            .collect()
    }

    fn a2_nested(&self, branch: Branch, mu: f64, sigma: f64) -> f64 {
        let b = self.bounds(branch, mu, sigma);
        let (rn1, rn2) = (b.n1.sqrt(), b.n2.sqrt());
        let n = b.n1 + b.n2;
        let pooled_scale = sigma / ((n - 1.0) * n).sqrt();
        let outer = self.first_stage_nodes(branch, &b);
        outer
            .par_iter()
            .map(|&(w1, ww1, e1, e2)| {
                let budget = b.contrast_budget(w1);
                if !(budget > 0.0) {
                    return 0.0;
                }
                let radius = budget.sqrt();
                let mut acc_y1 = 0.0;
                for (y1, wy1) in self.y_rule.mapped(e1, e2) {
                    let c = rn2 * y1;
                    let lo = ((c - radius) / rn1).max(-Y_CLIP);
                    let hi = ((c + radius) / rn1).min(Y_CLIP);
                    if !(hi > lo) {
                        continue;
                    }
                    let mut acc_y2 = 0.0;
                    for (y2, wy2) in self.y_rule.mapped(lo, hi) {
                        let q = c - rn1 * y2;
                        let q2 = q * q;
                        let d = (budget - q2) / n;
                        let mut acc_w2 = 0.0;
                        for (w2, ww2) in self.w2_rule.nodes(d) {
                            let s = pooled_scale * (n * (w1 + w2) + q2).sqrt();
                            let half = self.table_k3.half_interval(s);
                            if half <= 0.0 {
                                continue;
                            }
                            let (c1, c2) = b.c(y1, half);
                            acc_w2 += ww2 * normal_mass(c1, c2);
                        }
                        acc_y2 += wy2 * norm_pdf(y2) * acc_w2;
                    }
                    acc_y1 += wy1 * norm_pdf(y1) * acc_y2;
                }
                ww1 * acc_y1
            })
            .sum()
    }

    fn a2_conditional(&self, branch: Branch, mu: f64, sigma: f64) -> f64 {
        let b = self.bounds(branch, mu, sigma);
        let max_sigma = self
            .max_sigma_k3
            .as_ref()
            .expect("conditional route builds the inverse table");
        let (rn1, rn2) = (b.n1.sqrt(), b.n2.sqrt());
        let n = b.n1 + b.n2;
        let rn = n.sqrt();
        let outer = self.first_stage_nodes(branch, &b);
        // Pooled mean x̿ = μ + σ(√n1 y1 + √n2 y2)/N must lie inside (L, U).
        let (u_lo, u_hi) = (
            n * (self.lim.lower() - mu) / sigma,
            n * (self.lim.upper() - mu) / sigma,
        );
        outer
            .par_iter()
            .map(|&(w1, ww1, e1, e2)| {
                let mut acc_y1 = 0.0;
                for (y1, wy1) in self.y_rule.mapped(e1, e2) {
                    let lo = ((u_lo - rn1 * y1) / rn2).max(-Y_CLIP);
                    let hi = ((u_hi - rn1 * y1) / rn2).min(Y_CLIP);
                    if !(hi > lo) {
                        continue;
                    }
                    let mut acc_y2 = 0.0;
                    for (y2, wy2) in self.y2_rule.mapped(lo, hi) {
                        let xbar = mu + sigma * (rn1 * y1 + rn2 * y2) / n;
                        let s_star = max_sigma.eval(xbar - b.mid);
                        let z2 = (rn2 * y1 - rn1 * y2) / rn;
                        let w_star = (n - 1.0) * (s_star / sigma).powi(2) - w1 - z2 * z2;
                        if w_star > 0.0 {
                            acc_y2 += wy2 * norm_pdf(y2) * self.chi2.cdf(w_star);
                        }
                    }
                    acc_y1 += wy1 * norm_pdf(y1) * acc_y2;
                }
                ww1 * acc_y1
            })
            .sum()
    }

    /// First-stage acceptance `L_(n1, k1)(μ, σ)`.
    pub fn first_stage_oc(&self, mu: f64, sigma: f64) -> Result<f64> {
        self.first_lower.eval(mu, sigma)
    }

    /// OC as `L_(n1,k1) + P(A₂ᵘ) − P(A₂ˡ)`.
    pub fn eval(&self, mu: f64, sigma: f64) -> Result<f64> {
        let single = self.first_lower.eval(mu, sigma)?;
        if self.plan.k1 == self.plan.k2 {
            return Ok(single);
        }
        let up = self.prob_a2(Branch::Upper, mu, sigma)?;
        let low = self.prob_a2(Branch::Lower, mu, sigma)?;
        Ok((single + up - low).clamp(0.0, 1.0))
    }

    /// OC with an error estimate from a coarser companion rule; fails with
    /// [`Error::Quadrature`] when the estimate exceeds `abs_tol`.
    pub fn eval_with_error(&self, mu: f64, sigma: f64) -> Result<OcEstimate> {
        let fine = self.eval(mu, sigma)?;
        let coarse =
            Self::new(self.plan, &self.lim, self.cfg.coarse(), self.method)?.eval(mu, sigma)?;
        let error = (fine - coarse).abs();
        if error > self.cfg.abs_tol {
            return Err(Error::Quadrature {
                estimate: error,
                tolerance: self.cfg.abs_tol,
            });
        }
        Ok(OcEstimate { value: fine, error })
    }

    /// OC at the upper-branch point of the iso-p-line at `sigma`.
    pub fn eval_on_isoline(&self, p: f64, sigma: f64) -> Result<f64> {
        let s0 = sigma0(p, &self.lim);
        if sigma > s0 * (1.0 + 1e-12) {
            return Err(Error::EmptyAcceptanceInterval { sigma, sigma0: s0 });
        }
        self.eval(mu_upper_unchecked(sigma, p, &self.lim), sigma)
    }

    pub fn band_extreme(&self, p: f64, mode: Extreme) -> Result<BandExtreme> {
        band_extreme(|s| self.eval_on_isoline(p, s), sigma0(p, &self.lim), mode)
    }

    /// Re-locates an extreme found under another rule by searching
    /// `σ* · [1/spread, spread]`, capped at `σ₀(p)`.
    pub fn refine_band_extreme(
        &self,
        p: f64,
        near: f64,
        spread: f64,
        mode: Extreme,
    ) -> Result<BandExtreme> {
        let s0 = sigma0(p, &self.lim);
        let hi = (near * spread).min(s0);
        refine_extreme(
            &|s| self.eval_on_isoline(p, s),
            (near / spread).min(hi * 0.999),
            hi,
            mode,
        )
    }

    /// `n1 + n2·(L_(n1,k2) − L_(n1,k1))`.
    pub fn asn(&self, mu: f64, sigma: f64) -> Result<f64> {
        let cont = (self.first_upper.eval(mu, sigma)? - self.first_lower.eval(mu, sigma)?).max(0.0);
        Ok(self.plan.n1 as f64 + self.plan.n2 as f64 * cont)
    }

    /// ASN with the summed adaptive-quadrature error of the two first-stage
    /// OCs, scaled by `n2`.
    pub fn asn_with_error(&self, mu: f64, sigma: f64) -> Result<OcEstimate> {
        let (hi, e_hi) = self.first_upper.eval_with_error(mu, sigma)?;
        let (lo, e_lo) = self.first_lower.eval_with_error(mu, sigma)?;
        Ok(OcEstimate {
            value: self.plan.n1 as f64 + self.plan.n2 as f64 * (hi - lo).max(0.0),
            error: self.plan.n2 as f64 * (e_hi + e_lo),
        })
    }
}

fn check_point(mu: f64, sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "invalid process point ({mu}, {sigma})"
        )))
    }
}

pub fn prob_a2_upper(
    plan: DoublePlan,
    pt: ProcessPoint,
    lim: &SpecLimits,
    cfg: QuadratureConfig,
) -> Result<Probability> {
    DoubleOc::new(plan, lim, cfg, OcMethod::NestedBounds)?
        .prob_a2(Branch::Upper, pt.mu, pt.sigma)
        .map(Probability::saturating)
}

pub fn prob_a2_lower(
    plan: DoublePlan,
    pt: ProcessPoint,
    lim: &SpecLimits,
    cfg: QuadratureConfig,
) -> Result<Probability> {
    DoubleOc::new(plan, lim, cfg, OcMethod::NestedBounds)?
        .prob_a2(Branch::Lower, pt.mu, pt.sigma)
        .map(Probability::saturating)
}

pub fn oc_double(
    plan: DoublePlan,
    pt: ProcessPoint,
    lim: &SpecLimits,
    cfg: QuadratureConfig,
) -> Result<Probability> {
    DoubleOc::new(plan, lim, cfg, OcMethod::NestedBounds)?
        .eval(pt.mu, pt.sigma)
        .map(Probability::saturating)
}

pub fn band_extreme_double(
    plan: DoublePlan,
    p: FractionDefective,
    mode: Extreme,
    lim: &SpecLimits,
    cfg: QuadratureConfig,
) -> Result<BandExtreme> {
    DoubleOc::new(plan, lim, cfg, OcMethod::NestedBounds)?.band_extreme(p.value(), mode)
}

/// ASN evaluator; needs only the two first-stage single-plan OCs.
#[derive(Debug, Clone)]
pub struct DoubleAsn {
    plan: DoublePlan,
    lim: SpecLimits,
    lower: SingleOc,
    upper: SingleOc,
}

impl DoubleAsn {
    pub fn new(plan: DoublePlan, lim: &SpecLimits) -> Result<Self> {
        Ok(Self {
            plan,
            lim: *lim,
            lower: SingleOc::new(SinglePlan::unchecked(plan.n1, plan.k1), lim),
            upper: SingleOc::new(SinglePlan::unchecked(plan.n1, plan.k2), lim),
        })
    }

    pub fn eval(&self, mu: f64, sigma: f64) -> Result<f64> {
        check_point(mu, sigma)?;
        let cont = (self.upper.eval(mu, sigma)? - self.lower.eval(mu, sigma)?).max(0.0);
        Ok(self.plan.n1 as f64 + self.plan.n2 as f64 * cont)
    }

    /// Global maximum over `μ ≥ μ₀` (the ASN is symmetric about `μ₀`).
    ///
    /// Coarse 48×48 grid in `(ln σ, z)` with `μ = U − σz`, then Nelder–Mead.
    /// Working in `z` keeps the grid resolving the continuation ridge,
    /// which narrows in `μ` like `σ` as `σ → 0`.
    pub fn max(&self) -> Result<(ProcessPoint, f64)> {
        let mid = self.lim.midpoint();
        let hw = self.lim.half_width();
        let s_hi = 4.0 * sigma0(self.plan.k2, &self.lim);
        let s_lo = 1e-4 * s_hi;
        let upper = self.lim.upper();
        let mu_cap = mid + 3.0 * (self.lim.upper() - self.lim.lower());
        let to_point = |x: [f64; 2]| -> (f64, f64) {
            let sigma = x[0].exp().clamp(s_lo, s_hi);
            let z_hi = hw / sigma;
            let z_lo = (upper - mu_cap) / sigma;
            let z = x[1].clamp(z_lo, z_hi);
            (upper - sigma * z, sigma)
        };
        let objective = |x: [f64; 2]| -> f64 {
            let (mu, sigma) = to_point(x);
            self.eval(mu, sigma).map(|v| -v).unwrap_or(f64::INFINITY)
        };
        const GRID: usize = 48;
        let cells: Vec<[f64; 2]> = (0..GRID)
            .flat_map(|i| {
                let ls = s_lo.ln() + (s_hi / s_lo).ln() * i as f64 / (GRID - 1) as f64;
                let sigma = ls.exp();
                let z_hi = (hw / sigma).min(10.0);
                let z_lo = ((upper - mu_cap) / sigma).max(-6.0);
                (0..GRID).map(move |j| [ls, z_lo + (z_hi - z_lo) * j as f64 / (GRID - 1) as f64])
            })
            .collect();
        let values: Vec<f64> = cells.par_iter().map(|&x| objective(x)).collect();
        let (best, _) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty grid");
        let start = cells[best];
        let step = [(s_hi / s_lo).ln() / GRID as f64, 0.25];
        // Restart once with a smaller simplex; both runs start at or below
        // the best grid value, so the result never falls behind the grid.
        let (x, _) = nelder_mead(objective, start, step, 1e-10, 400);
        let (x, fx) = nelder_mead(objective, x, [0.1 * step[0], 0.05], 1e-12, 400);
        let (mu, sigma) = to_point(x);
        Ok((ProcessPoint::new(mu, sigma)?, -fx))
    }
}

pub fn asn_double(plan: DoublePlan, pt: ProcessPoint, lim: &SpecLimits) -> Result<f64> {
    DoubleAsn::new(plan, lim)?.eval(pt.mu, pt.sigma)
}

pub fn asn_max(plan: DoublePlan, lim: &SpecLimits) -> Result<(ProcessPoint, f64)> {
    DoubleAsn::new(plan, lim)?.max()
}

/// Minimal two-dimensional Nelder–Mead with standard coefficients.
fn nelder_mead(
    f: impl Fn([f64; 2]) -> f64,
    start: [f64; 2],
    step: [f64; 2],
    ftol: f64,
    max_iter: usize,
) -> ([f64; 2], f64) {
    let mut simplex = [
        start,
        [start[0] + step[0], start[1]],
        [start[0], start[1] + step[1]],
    ];
    let mut values = simplex.map(&f);
    let lerp =
        |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..max_iter {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);
        if (values[2] - values[0]).abs() <= ftol {
            break;
        }
        let centroid = lerp(simplex[0], simplex[1], 0.5);
        let reflected = lerp(centroid, simplex[2], -1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = lerp(centroid, simplex[2], -2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let contracted = lerp(centroid, simplex[2], 0.5);
            let fc = f(contracted);
            if fc < values[2] {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = lerp(simplex[0], simplex[i], 0.5);
                    values[i] = f(simplex[i]);
                }
            }
        }
    }
    let best = (0..3)
        .min_by(|&i, &j| values[i].total_cmp(&values[j]))
        .expect("three vertices");
    (simplex[best], values[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lim() -> SpecLimits {
        SpecLimits::new(1.0, 9.0).unwrap()
    }

    fn example1() -> DoublePlan {
        DoublePlan::new(23, 0.013681, 0.039455, 18, 0.026617).unwrap()
    }

    fn cfg(m: usize) -> QuadratureConfig {
        QuadratureConfig::new(m, 1e-6).unwrap()
    }

    #[test]
    fn plan_validation() {
        assert!(DoublePlan::new(1, 0.01, 0.02, 5, 0.02).is_err());
        assert!(DoublePlan::new(10, 0.03, 0.02, 5, 0.02).is_err());
        assert!(DoublePlan::new(10, 0.01, 0.6, 5, 0.02).is_err());
        assert!(QuadratureConfig::new(4, 1e-6).is_err());
    }

    #[test]
    fn pooled_sd_closed_forms() {
        let f = A2Frame {
            w1: 0.0,
            y1: 1.3,
            y2: 1.3 * (7f64 / 5.0).sqrt(),
            w2: 0.0,
        };
        assert!(pooled_sd(&f, 5, 7, 2.0).abs() < 1e-12);
        let n1 = 9u32;
        let w = (n1 - 1) as f64;
        let f = A2Frame {
            w1: w,
            y1: 0.4,
            y2: 0.4,
            w2: w,
        };
        let expect = (2.0 * w / (2.0 * n1 as f64 - 1.0)).sqrt();
        assert!((pooled_sd(&f, n1, n1, 1.0) - expect).abs() < 1e-14);
    }

    #[test]
    fn pooled_sd_matches_direct_sample() {
        // Two samples with prescribed means and variances built from
        // symmetric deviations.
        let (n1, n2, mu, sigma) = (4u32, 6u32, 2.0, 1.5);
        let (m1, v1, m2, v2) = (2.7, 0.8, 1.1, 2.3);
        let sample = |m: f64, v: f64, n: u32| -> Vec<f64> {
            let h = n / 2;
            let dev = (v * (n - 1) as f64 / n as f64).sqrt();
            (0..n)
                .map(|i| if i < h { m - dev } else { m + dev })
                .collect()
        };
        let mut all = sample(m1, v1, n1);
        all.extend(sample(m2, v2, n2));
        let nn = all.len() as f64;
        let mean = all.iter().sum::<f64>() / nn;
        let direct = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nn - 1.0)).sqrt();
        let frame = A2Frame {
            w1: (n1 - 1) as f64 * v1 / (sigma * sigma),
            y1: (n1 as f64).sqrt() * (m1 - mu) / sigma,
            y2: (n2 as f64).sqrt() * (m2 - mu) / sigma,
            w2: (n2 - 1) as f64 * v2 / (sigma * sigma),
        };
        assert!((pooled_sd(&frame, n1, n2, sigma) - direct).abs() < 1e-12);
    }

    #[test]
    fn equal_first_stage_thresholds_reduce_to_single_plan() {
        let l = lim();
        let plan = DoublePlan::new(23, 0.02, 0.02, 18, 0.026).unwrap();
        let oc = DoubleOc::new(plan, &l, cfg(16), OcMethod::NestedBounds).unwrap();
        let single = SingleOc::new(SinglePlan::new(23, 0.02).unwrap(), &l);
        let up = oc.prob_a2(Branch::Upper, 6.0, 1.0).unwrap();
        let low = oc.prob_a2(Branch::Lower, 6.0, 1.0).unwrap();
        assert_eq!(up, low);
        assert!((oc.eval(6.0, 1.0).unwrap() - single.eval(6.0, 1.0).unwrap()).abs() < 1e-15);
        assert_eq!(
            DoubleAsn::new(plan, &l).unwrap().eval(6.0, 1.0).unwrap(),
            23.0
        );
    }

    #[test]
    fn empty_first_stage_gives_zero() {
        let l = lim();
        let plan = example1();
        let oc = DoubleOc::new(plan, &l, cfg(16), OcMethod::NestedBounds).unwrap();
        // F shrinks like 1/σ²; far above σ₀(k2) it drops below the retained
        // chi-square bulk and the first stage can no longer pass.
        let s = 100.0 * sigma0(plan.k2(), &l);
        assert_eq!(oc.prob_a2(Branch::Upper, 5.0, s).unwrap(), 0.0);
        let tiny_k3 = DoublePlan::new(23, 0.013681, 0.039455, 18, 1e-300).unwrap();
        let oc = DoubleOc::new(tiny_k3, &l, cfg(16), OcMethod::NestedBounds).unwrap();
        assert!(oc.prob_a2(Branch::Upper, 5.0, 1.0).unwrap() < 1e-12);
    }

    #[test]
    fn symmetric_in_the_mean() {
        let l = lim();
        for method in [OcMethod::NestedBounds, OcMethod::Conditional] {
            let oc = DoubleOc::new(example1(), &l, cfg(16), method).unwrap();
            for (mu, s) in [(6.2, 1.1), (7.9, 0.5)] {
                let a = oc.eval(mu, s).unwrap();
                let b = oc.eval(l.reflect(mu), s).unwrap();
                assert!((a - b).abs() < 1e-10, "{method:?} {a} {b}");
            }
        }
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let (x, fx) = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2),
            [0.0, 0.0],
            [0.5, 0.5],
            1e-16,
            500,
        );
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] + 2.0).abs() < 1e-5 && fx < 1e-10);
    }
}
