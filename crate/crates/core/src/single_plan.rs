//! Single plans `(n, k)`: accept when `p* = Φ((L − x̄)/s) + Φ((x̄ − U)/s) ≤ k`.
//!
//! Given `S = s`, the lot passes iff `x̄` lies in the acceptance interval
//! `[μ̇(s, k), μ(s, k)]`, which is empty once `s > σ₀(k)`. With
//! `T = (n − 1)S²/σ² ~ χ²(n − 1)` independent of `x̄`,
//!
//! `L(μ, σ) = ∫₀^B [Φ(√n(μ(s,k) − μ)/σ) − Φ(√n(μ̇(s,k) − μ)/σ)] g(t) dt`
//!
//! with `s = σ√(t/(n − 1))` and `B = (n − 1)(σ₀(k)/σ)²`.

use serde::{Deserialize, Serialize};

use crate::band::{band_extreme, BandExtreme, Extreme};
use crate::error::{Error, Result};
use crate::isoline::{
    mu_upper_unchecked, sigma0, FractionDefective, MuUpperTable, ProcessPoint, SpecLimits,
};
use crate::one_sided::{check_levels, design_one_sided_single};
use crate::quadrature::{integrate_adaptive, CHI2_TAIL};
use crate::roots::brent;
use crate::special::{norm_cdf, ChiSquare, Probability};

/// Default accuracy of memoized isoline tables, relative to the natural
/// scale of the tabulated quantity.
pub const MU_TABLE_ACCURACY: f64 = 1e-11;

const SINGLE_ABS_TOL: f64 = 1e-10;
const SINGLE_MAX_INTERVALS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSingle", into = "RawSingle")]
pub struct SinglePlan {
    n: u32,
    k: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSingle {
    n: u32,
    k: f64,
}

impl TryFrom<RawSingle> for SinglePlan {
    type Error = Error;
    fn try_from(r: RawSingle) -> Result<Self> {
        Self::new(r.n, r.k)
    }
}

impl From<SinglePlan> for RawSingle {
    fn from(p: SinglePlan) -> Self {
        Self { n: p.n, k: p.k }
    }
}

impl SinglePlan {
    /// Thresholds are limited to `(0, 0.5]`. Above 0.5 a sample mean
    /// outside `[L, U]` can pass when `s` is small, and the acceptance
    /// region is no longer bounded by the specification limits.
    pub fn new(n: u32, k: f64) -> Result<Self> {
        if n <= 3 {
            return Err(Error::invalid(format!("single plan needs n > 3, got {n}")));
        }
        check_threshold(k)?;
        Ok(Self { n, k })
    }

    /// First stages of double plans may use `n ∈ {2, 3}`.
    pub(crate) fn unchecked(n: u32, k: f64) -> Self {
        Self { n, k }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn k(&self) -> f64 {
        self.k
    }
}

pub(crate) fn check_threshold(k: f64) -> Result<()> {
    if k > 0.0 && k <= 0.5 {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold {k} outside (0, 0.5]")))
    }
}

/// Two-point OC condition: `OC ≥ 1 − alpha` at `p1`, `OC ≤ beta` at `p2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignRequirement {
    pub p1: FractionDefective,
    pub p2: FractionDefective,
    pub alpha: Probability,
    pub beta: Probability,
}

impl DesignRequirement {
    pub fn new(p1: f64, p2: f64, alpha: f64, beta: f64) -> Result<Self> {
        check_levels(p1, p2, alpha, beta)?;
        Ok(Self {
            p1: FractionDefective::new(p1)?,
            p2: FractionDefective::new(p2)?,
            alpha: Probability::new(alpha)?,
            beta: Probability::new(beta)?,
        })
    }

    pub(crate) fn levels(&self) -> (f64, f64, f64, f64) {
        (
            self.p1.value(),
            self.p2.value(),
            self.alpha.value(),
            self.beta.value(),
        )
    }
}

/// OC evaluator for one single plan under fixed limits; holds the memoized
/// acceptance-interval table for `k`.
#[derive(Debug, Clone)]
pub struct SingleOc {
    plan: SinglePlan,
    lim: SpecLimits,
    chi: ChiSquare,
    v_lo: f64,
    v_hi: f64,
    v_mode: f64,
    table: MuUpperTable,
}

impl SingleOc {
    pub fn new(plan: SinglePlan, lim: &SpecLimits) -> Self {
        Self::with_accuracy(plan, lim, MU_TABLE_ACCURACY)
    }

    pub fn with_accuracy(plan: SinglePlan, lim: &SpecLimits, accuracy: f64) -> Self {
        let chi = ChiSquare::for_sample_size(plan.n);
        let (lo, hi) = chi.support(CHI2_TAIL);
        Self {
            plan,
            lim: *lim,
            chi,
            v_lo: lo.sqrt(),
            v_hi: hi.sqrt(),
            v_mode: chi.mode().sqrt(),
            table: MuUpperTable::new(plan.k, lim, accuracy),
        }
    }

    pub fn plan(&self) -> SinglePlan {
        self.plan
    }

    /// Acceptance probability at `(μ, σ)` with its quadrature error estimate.
    pub fn eval_with_error(&self, mu: f64, sigma: f64) -> Result<(f64, f64)> {
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(Error::invalid(format!(
                "invalid process point ({mu}, {sigma})"
            )));
        }
        let n = self.plan.n as f64;
        let dof = n - 1.0;
        let root_n = n.sqrt();
        let mid = self.lim.midpoint();
        let b = dof * (self.table.sigma0() / sigma).powi(2);
        let top = b.sqrt().min(self.v_hi);
        if !(top > self.v_lo) {
            return Ok((0.0, 0.0));
        }
        // v = √t; the sample standard deviation is σ v / √(n − 1).
        let scale = sigma / dof.sqrt();
        let integrand = |v: f64| {
            let half = self.table.half_interval(scale * v);
            if half <= 0.0 {
                return 0.0;
            }
            let hi = root_n * (mid + half - mu) / sigma;
            let lo = root_n * (mid - half - mu) / sigma;
            let mass = if lo > 0.0 {
                norm_cdf(-lo) - norm_cdf(-hi)
            } else {
                norm_cdf(hi) - norm_cdf(lo)
            };
            mass * self.chi.sqrt_pdf(v)
        };
        let est = integrate_adaptive(
            integrand,
            self.v_lo,
            top,
            &[self.v_mode],
            SINGLE_ABS_TOL,
            SINGLE_MAX_INTERVALS,
        )?;
        Ok((est.value.clamp(0.0, 1.0), est.error))
    }

    pub fn eval(&self, mu: f64, sigma: f64) -> Result<f64> {
        self.eval_with_error(mu, sigma).map(|r| r.0)
    }

    /// OC at the upper-branch point of the iso-p-line at `sigma`.
    pub fn eval_on_isoline(&self, p: f64, sigma: f64) -> Result<f64> {
        let s0 = sigma0(p, &self.lim);
        if sigma > s0 * (1.0 + 1e-12) {
            return Err(Error::EmptyAcceptanceInterval { sigma, sigma0: s0 });
        }
        self.eval(mu_upper_unchecked(sigma, p, &self.lim), sigma)
    }

    /// Extreme of the OC band at fraction defective `p`.
    pub fn band_extreme(&self, p: f64, mode: Extreme) -> Result<BandExtreme> {
        let s0 = sigma0(p, &self.lim);
        band_extreme(|s| self.eval_on_isoline(p, s), s0, mode)
    }
}

pub fn oc_single(plan: SinglePlan, pt: ProcessPoint, lim: &SpecLimits) -> Result<Probability> {
    SingleOc::new(plan, lim)
        .eval(pt.mu, pt.sigma)
        .map(Probability::saturating)
}

pub fn oc_single_on_isoline(
    plan: SinglePlan,
    p: FractionDefective,
    sigma: f64,
    lim: &SpecLimits,
) -> Result<Probability> {
    SingleOc::new(plan, lim)
        .eval_on_isoline(p.value(), sigma)
        .map(Probability::saturating)
}

pub fn band_extreme_single(
    plan: SinglePlan,
    p: FractionDefective,
    mode: Extreme,
    lim: &SpecLimits,
) -> Result<BandExtreme> {
    SingleOc::new(plan, lim).band_extreme(p.value(), mode)
}

/// Outcome of [`design_single`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleDesign {
    pub plan: SinglePlan,
    /// Levels handed to the one-sided design at the final iteration.
    pub alpha_star: f64,
    pub beta_star: f64,
    /// Band extremes of the two-sided OC at `p1` (min) and `p2` (max).
    pub min_oc_p1: BandExtreme,
    pub max_oc_p2: BandExtreme,
    /// Achieved levels `1 − min OC(p1)` and `max OC(p2)`.
    pub alpha_eff: f64,
    pub beta_eff: f64,
    pub iterations: u32,
}

/// Decrement of the design levels per tightening step.
pub const LEVEL_STEP: f64 = 0.001;
const MAX_TIGHTENING_STEPS: u32 = 500;

/// Single plan meeting the two-point condition on both OC bands.
///
/// Starts from the one-sided design at levels `(α*, β*) = (α, β)`, whose
/// threshold sits mid-way in its feasible window, translates `l` to
/// `k = Φ(l/√n)`, and lowers `α*` in steps of [`LEVEL_STEP`] while the `p1`
/// condition fails. `β*` is lowered only when `p1` holds and `p2` fails.
pub fn design_single(req: &DesignRequirement, lim: &SpecLimits) -> Result<SingleDesign> {
    let (p1, p2, alpha, beta) = req.levels();
    let (mut a_star, mut b_star) = (alpha, beta);
    for iteration in 1..=MAX_TIGHTENING_STEPS {
        let one = design_one_sided_single(p1, p2, a_star, b_star)?;
        let k = norm_cdf(one.l / (one.n as f64).sqrt());
        let plan = SinglePlan::new(one.n.max(4), k)?;
        let oc = SingleOc::new(plan, lim);
        let lo = oc.band_extreme(p1, Extreme::Min)?;
        let hi = oc.band_extreme(p2, Extreme::Max)?;
        let ok_p1 = lo.value >= 1.0 - alpha;
        let ok_p2 = hi.value <= beta;
        if ok_p1 && ok_p2 {
            return Ok(SingleDesign {
                plan,
                alpha_star: a_star,
                beta_star: b_star,
                min_oc_p1: lo,
                max_oc_p2: hi,
                alpha_eff: 1.0 - lo.value,
                beta_eff: hi.value,
                iterations: iteration,
            });
        }
        if !ok_p1 {
            a_star = round_level(a_star - LEVEL_STEP);
        } else {
            b_star = round_level(b_star - LEVEL_STEP);
        }
        if a_star <= 0.0 || b_star <= 0.0 {
            break;
        }
    }
    Err(Error::NoConvergence(format!(
        "single-plan tightening stopped at alpha*={a_star}, beta*={b_star}"
    )))
}

/// Keeps stepped levels on the 0.001 lattice.
pub(crate) fn round_level(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Thresholds meeting each band condition for sample size `n`:
/// `k ≥ k_lo` gives `min OC(p1) ≥ 1 − α`, `k ≤ k_hi` gives
/// `max OC(p2) ≤ β`. The plan size is feasible iff `k_lo ≤ k_hi`.
pub fn feasible_k_interval(
    n: u32,
    req: &DesignRequirement,
    lim: &SpecLimits,
) -> Result<(f64, f64)> {
    let (p1, p2, alpha, beta) = req.levels();
    let band = |k: f64, p: f64, mode: Extreme| -> f64 {
        let plan = SinglePlan::new(n, k).expect("bracket stays inside (0, 0.5)");
        SingleOc::new(plan, lim)
            .band_extreme(p, mode)
            .map(|b| b.value)
            .unwrap_or(f64::NAN)
    };
    let k_lo = brent(
        |k| band(k, p1, Extreme::Min) - (1.0 - alpha),
        1e-6,
        0.45,
        1e-12,
    )
    .ok_or_else(|| Error::NoConvergence("k bracket for the p1 condition".into()))?;
    let k_hi = brent(|k| band(k, p2, Extreme::Max) - beta, 1e-6, 0.45, 1e-12)
        .ok_or_else(|| Error::NoConvergence("k bracket for the p2 condition".into()))?;
    Ok((k_lo, k_hi))
}
