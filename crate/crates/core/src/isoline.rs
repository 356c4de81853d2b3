//! Geometry of the fraction-defective surface `p(μ, σ)`.
//!
//! For a fixed level `p`, the set of means with `p(μ, σ) ≤ p` is the
//! interval `[mu_lower(σ, p), mu_upper(σ, p)]`, symmetric about the
//! midpoint of the specification limits, and empty once `σ > σ₀(p)`.

use serde::{Deserialize, Serialize};

use crate::chebyshev::Chebyshev;
use crate::error::{Error, Result};
use crate::roots::newton_bracketed;
use crate::special::{norm_cdf, norm_pdf, norm_quantile};

/// Lower and upper specification limits, `lower < upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLimits", into = "RawLimits")]
pub struct SpecLimits {
    lower: f64,
    upper: f64,
}

#[derive(Serialize, Deserialize)]
struct RawLimits {
    lower: f64,
    upper: f64,
}

impl TryFrom<RawLimits> for SpecLimits {
    type Error = Error;
    fn try_from(raw: RawLimits) -> Result<Self> {
        Self::new(raw.lower, raw.upper)
    }
}

impl From<SpecLimits> for RawLimits {
    fn from(lim: SpecLimits) -> Self {
        Self {
            lower: lim.lower,
            upper: lim.upper,
        }
    }
}

impl SpecLimits {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::invalid(format!(
                "specification limits require lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// `μ₀ = (L + U) / 2`.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    /// Mirror image `L + U − μ`.
    pub fn reflect(&self, mu: f64) -> f64 {
        self.lower + self.upper - mu
    }
}

/// A hypothesis `(μ, σ)` about the production process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessPoint {
    pub mu: f64,
    pub sigma: f64,
}

impl ProcessPoint {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::invalid(format!("process mean {mu} is not finite")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "process standard deviation must be positive, got {sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }
}

/// A fraction defective level in the open interval `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FractionDefective(f64);

impl FractionDefective {
    pub fn new(p: f64) -> Result<Self> {
        if p > 0.0 && p < 1.0 {
            Ok(Self(p))
        } else {
            Err(Error::invalid(format!(
                "fraction defective must lie in (0, 1), got {p}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FractionDefective {
    type Error = Error;
    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<FractionDefective> for f64 {
    fn from(p: FractionDefective) -> f64 {
        p.0
    }
}

/// `p(μ, σ) = Φ((L − μ)/σ) + Φ((μ − U)/σ)`.
#[inline]
pub fn fraction_defective_at(mu: f64, sigma: f64, lim: &SpecLimits) -> f64 {
    norm_cdf((lim.lower - mu) / sigma) + norm_cdf((mu - lim.upper) / sigma)
}

pub fn fraction_defective(pt: ProcessPoint, lim: &SpecLimits) -> f64 {
    fraction_defective_at(pt.mu, pt.sigma, lim)
}

/// Largest σ for which some mean attains fraction defective `≤ p`.
pub fn sigma0(p: f64, lim: &SpecLimits) -> f64 {
    (lim.lower - lim.upper) / (2.0 * norm_quantile(0.5 * p))
}

/// Right end of the acceptance interval `M(σ, p)`.
pub fn mu_upper(sigma: f64, p: FractionDefective, lim: &SpecLimits) -> Result<f64> {
    let s0 = sigma0(p.0, lim);
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if sigma > s0 {
        return Err(Error::EmptyAcceptanceInterval { sigma, sigma0: s0 });
    }
    Ok(mu_upper_unchecked(sigma, p.0, lim))
}

/// Left end of the acceptance interval, `L + U − mu_upper`.
pub fn mu_lower(sigma: f64, p: FractionDefective, lim: &SpecLimits) -> Result<f64> {
    mu_upper(sigma, p, lim).map(|m| lim.reflect(m))
}

/// Root of `p(μ, σ) = p` on `[μ₀, ∞)`; returns `μ₀` for `σ ≥ σ₀(p)`.
pub(crate) fn mu_upper_unchecked(sigma: f64, p: f64, lim: &SpecLimits) -> f64 {
    let mid = lim.midpoint();
    let s0 = sigma0(p, lim);
    if sigma >= s0 || s0 - sigma < 1e-12 * s0 {
        return mid;
    }
    // The upper-tail term alone equals p at U + σΦ⁻¹(p).
    let hi = (lim.upper + sigma * norm_quantile(p)).max(mid);
    let g = |mu: f64| {
        let a = (lim.lower - mu) / sigma;
        let b = (mu - lim.upper) / sigma;
        (
            norm_cdf(a) + norm_cdf(b) - p,
            (norm_pdf(b) - norm_pdf(a)) / sigma,
        )
    };
    if g(hi).0 <= 0.0 {
        return hi;
    }
    newton_bracketed(g, mid, hi, 1e-15 * lim.half_width())
}

/// Below this σ the lower-tail term at the one-sided solution is under
/// `1e-18·p`, so `mu_upper(σ, p) = U + σΦ⁻¹(p)` in double precision.
fn one_sided_cutoff(p: f64, lim: &SpecLimits) -> f64 {
    let z_eps = norm_quantile(1e-18 * p);
    (lim.upper - lim.lower) / (-norm_quantile(p) - z_eps)
}

/// Memoized `s ↦ mu_upper(s, p)` for one level `p`.
///
/// Interpolates in `u = sqrt(σ₀ − s)`, which absorbs the square-root
/// behavior at `σ₀`. Below the one-sided cutoff the closed form is exact.
#[derive(Debug, Clone)]
pub struct MuUpperTable {
    lim: SpecLimits,
    z_p: f64,
    sigma0: f64,
    cutoff: f64,
    cheb: Chebyshev,
}

impl MuUpperTable {
    pub fn new(p: f64, lim: &SpecLimits, accuracy: f64) -> Self {
        let s0 = sigma0(p, lim);
        let cutoff = one_sided_cutoff(p, lim).min(s0);
        let u_max = (s0 - cutoff).max(0.0).sqrt();
        let cheb = Chebyshev::fit(
            |u| mu_upper_unchecked(s0 - u * u, p, lim) - lim.midpoint(),
            0.0,
            u_max.max(1e-300),
            accuracy * lim.half_width(),
            512,
        );
        Self {
            lim: *lim,
            z_p: norm_quantile(p),
            sigma0: s0,
            cutoff,
            cheb,
        }
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// Degree of the interpolant; evaluation cost grows linearly with it.
    pub fn degree(&self) -> usize {
        self.cheb.degree()
    }

    /// `mu_upper(s, p)`; `μ₀` when `s ≥ σ₀`, `U` at `s = 0`.
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        if s <= self.cutoff {
            return self.lim.upper + s.max(0.0) * self.z_p;
        }
        if s >= self.sigma0 {
            return self.lim.midpoint();
        }
        self.lim.midpoint() + self.cheb.eval((self.sigma0 - s).sqrt())
    }

    /// Half-width `mu_upper(s) − μ₀` of the acceptance interval.
    #[inline]
    pub fn half_interval(&self, s: f64) -> f64 {
        self.eval(s) - self.lim.midpoint()
    }
}

/// Memoized inverse of the isoline: for an offset `d = |x − μ₀|`, the
/// largest `s` with `p(μ₀ + d, s) ≤ p`. Zero once `d` reaches the half-width.
#[derive(Debug, Clone)]
pub struct MaxSigmaTable {
    half_width: f64,
    neg_z_p: f64,
    d_cut: f64,
    sigma0: f64,
    cheb: Chebyshev,
}

impl MaxSigmaTable {
    pub fn new(p: f64, lim: &SpecLimits, accuracy: f64) -> Self {
        let s0 = sigma0(p, lim);
        let cutoff = one_sided_cutoff(p, lim).min(s0);
        let hw = lim.half_width();
        let z_p = norm_quantile(p);
        let d_cut = (hw + cutoff * z_p).max(0.0);
        let lim = *lim;
        let cheb = Chebyshev::fit(
            |d| max_sigma_unchecked(d, p, &lim),
            0.0,
            d_cut.max(1e-300),
            accuracy * s0,
            512,
        );
        Self {
            half_width: hw,
            neg_z_p: -z_p,
            d_cut,
            sigma0: s0,
            cheb,
        }
    }

    #[inline]
    pub fn eval(&self, d: f64) -> f64 {
        let d = d.abs();
        if d >= self.half_width {
            return 0.0;
        }
        if d >= self.d_cut {
            return (self.half_width - d) / self.neg_z_p;
        }
        self.cheb.eval(d).min(self.sigma0)
    }
}

/// Solves `p(μ₀ + d, s) = p` for `s`; `p(μ₀ + d, ·)` increases on `(0, ∞)`
/// when `d < (U − L)/2`.
pub(crate) fn max_sigma_unchecked(d: f64, p: f64, lim: &SpecLimits) -> f64 {
    let hw = lim.half_width();
    let d = d.abs();
    if d >= hw {
        return 0.0;
    }
    let s0 = sigma0(p, lim);
    if d == 0.0 {
        return s0;
    }
    let gap = hw - d;
    let lo = gap / -norm_quantile(0.5 * p);
    let hi = (gap / -norm_quantile(p)).min(s0);
    if !(hi > lo) {
        return hi;
    }
    let x = lim.midpoint() + d;
    let g = |s: f64| {
        let a = (lim.lower - x) / s;
        let b = (x - lim.upper) / s;
        (
            norm_cdf(a) + norm_cdf(b) - p,
            -(a * norm_pdf(a) + b * norm_pdf(b)) / s,
        )
    };
    newton_bracketed(g, lo, hi, 1e-15 * s0)
}
