//! Standard normal and chi-square primitives.
//!
//! The normal CDF uses W. J. Cody's rational Chebyshev approximations
//! (relative error below 1e-15 across the real line). The quantile starts
//! from Wichura's AS 241 (PPND16) and is polished with Newton steps against
//! the CDF. Chi-square densities are evaluated in log space so degrees of
//! freedom in the hundreds do not overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::invalid(format!(
                "probability {value} outside [0, 1]"
            )))
        }
    }

    /// Clamps tiny quadrature overshoots back into `[0, 1]`.
    pub fn saturating(value: f64) -> Self {
        Self(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Degrees of freedom of a chi-square law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DegreesOfFreedom(u32);

impl DegreesOfFreedom {
    pub fn new(r: u32) -> Result<Self> {
        if r >= 1 {
            Ok(Self(r))
        } else {
            Err(Error::invalid("degrees of freedom must be at least 1"))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function, unchecked.
///
/// Non-finite input propagates (`NaN` stays `NaN`, infinities map to 0 or 1).
pub fn norm_cdf(x: f64) -> f64 {
    const A: [f64; 5] = [
        2.235_252_035_460_683_9e0,
        1.610_282_310_685_558_8e2,
        1.067_689_485_460_370_9e3,
        1.815_498_125_334_356_1e4,
        6.568_233_791_820_745e-2,
    ];
    const B: [f64; 4] = [
        4.720_258_190_468_824e1,
        9.760_985_517_377_767e2,
        1.026_093_220_861_897_8e4,
        4.550_778_933_502_673e4,
    ];
    const C: [f64; 9] = [
        3.989_415_120_881_346_7e-1,
        8.883_149_794_388_376,
        9.350_665_613_217_785e1,
        5.972_702_763_948_003e2,
        2.494_537_585_290_372_6e3,
        6.848_190_450_536_283e3,
        1.160_265_143_764_735e4,
        9.842_714_838_383_978e3,
        1.076_557_677_372_019_2e-8,
    ];
    const D: [f64; 8] = [
        2.226_668_804_432_811_6e1,
        2.353_879_017_826_25e2,
        1.519_377_599_407_554_8e3,
        6.485_558_298_266_761e3,
        1.861_557_164_088_51e4,
        3.490_095_272_114_598e4,
        3.891_200_328_609_327e4,
        1.968_542_967_685_999e4,
    ];
    const P: [f64; 6] = [
        2.158_985_340_579_569_9e-1,
        1.274_011_611_602_473_6e-1,
        2.223_527_787_064_980_7e-2,
        1.421_619_193_227_893_5e-3,
        2.911_287_495_116_879e-5,
        2.307_344_176_494_017_3e-2,
    ];
    const Q: [f64; 5] = [
        1.284_260_096_144_911_2e0,
        4.682_382_124_808_651e-1,
        6.598_813_786_892_855e-2,
        3.782_396_332_027_582_4e-3,
        7.297_515_550_839_662e-5,
    ];

    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= 0.662_91 {
        let xsq = if y > 1.11e-16 { x * x } else { 0.0 };
        let mut xnum = A[4] * xsq;
        let mut xden = xsq;
        for i in 0..3 {
            xnum = (xnum + A[i]) * xsq;
            xden = (xden + B[i]) * xsq;
        }
        return 0.5 + x * (xnum + A[3]) / (xden + B[3]);
    }
    let tail = if y <= 32f64.sqrt() {
        let mut xnum = C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + C[i]) * y;
            xden = (xden + D[i]) * y;
        }
        let r = (xnum + C[7]) / (xden + D[7]);
        gauss_tail_scale(y) * r
    } else if y < 38.5 {
        let xsq = 1.0 / (x * x);
        let mut xnum = P[5] * xsq;
        let mut xden = xsq;
        for i in 0..4 {
            xnum = (xnum + P[i]) * xsq;
            xden = (xden + Q[i]) * xsq;
        }
        let r = xsq * (xnum + P[4]) / (xden + Q[4]);
        gauss_tail_scale(y) * (FRAC_1_SQRT_2PI - r) / y
    } else {
        0.0
    };
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

// exp(-y^2/2) split so the leading factor is exact in binary.
#[inline]
fn gauss_tail_scale(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq * 0.5).exp() * (-del * 0.5).exp()
}

/// Checked standard normal distribution function.
pub fn std_normal_cdf(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(Error::invalid(format!(
            "normal cdf argument {x} is not finite"
        )));
    }
    Ok(Probability::saturating(norm_cdf(x)))
}

/// Standard normal quantile, unchecked. Returns `±inf` at 0 and 1.
pub fn norm_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let mut x = ppnd16(p);
    // Newton polish; the lower-tail form keeps relative accuracy for small p.
    for _ in 0..2 {
        let dens = norm_pdf(x);
        if dens <= 0.0 || !x.is_finite() {
            break;
        }
        let err = if x <= 0.0 {
            norm_cdf(x) - p
        } else {
            (1.0 - p) - norm_cdf(-x)
        };
        x -= err / dens;
    }
    x
}

/// Checked standard normal quantile on the open interval `(0, 1)`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "normal quantile requires 0 < p < 1, got {p}"
        )));
    }
    Ok(norm_quantile(p))
}

// Wichura (1988), algorithm AS 241. Coefficients in ascending powers.
// Relative accuracy about 1e-16 on its own; used unpolished where speed
// matters more than the last ulp.
pub(crate) fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        133.141_667_891_784_38,
        1_971.590_950_306_551_3,
        13_731.693_765_509_461,
        45_921.953_931_549_87,
        67_265.770_927_008_7,
        33_430.575_583_588_13,
        2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_91,
        687.187_007_492_057_9,
        5_394.196_021_424_751,
        21_213.794_301_586_597,
        39_307.895_800_092_71,
        28_729.085_735_721_943,
        5_226.495_278_852_546,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        0.241_780_725_177_450_6,
        0.022_723_844_989_269_184,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        0.689_767_334_985_1,
        0.148_103_976_427_480_07,
        0.015_198_666_563_616_457,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_5,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        0.296_560_571_828_504_9,
        0.026_532_189_526_576_124,
        0.001_242_660_947_388_078_4,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_888,
        0.136_929_880_922_735_8,
        0.014_875_361_290_850_615,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    fn horner(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        horner(&C, r - 1.6) / horner(&D, r - 1.6)
    } else {
        horner(&E, r - 5.0) / horner(&F, r - 5.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma function `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    gamma_p_with_ln_gamma(a, x, ln_gamma(a))
}

/// `P(a, x)` with a caller-supplied `ln Γ(a)`, for tight loops over fixed `a`.
pub fn gamma_p_with_ln_gamma(a: f64, x: f64, ln_gamma_a: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma_a;
    if x < a + 1.0 {
        // Series.
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum * log_prefix.exp()).min(1.0)
    } else {
        // Continued fraction for Q (modified Lentz).
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - log_prefix.exp() * h).max(0.0)
    }
}

/// Chi-square law with `r` degrees of freedom, with its normalizing
/// constant cached for repeated density evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ChiSquare {
    dof: f64,
    half_dof: f64,
    ln_gamma_half: f64,
    ln_norm: f64,
}

impl ChiSquare {
    pub fn new(r: DegreesOfFreedom) -> Self {
        let dof = r.get() as f64;
        let half_dof = 0.5 * dof;
        let ln_gamma_half = ln_gamma(half_dof);
        Self {
            dof,
            half_dof,
            ln_gamma_half,
            ln_norm: -half_dof * std::f64::consts::LN_2 - ln_gamma_half,
        }
    }

    /// Convenience constructor for sample sizes `n ≥ 2` (dof = n − 1).
    pub fn for_sample_size(n: u32) -> Self {
        Self::new(DegreesOfFreedom(n.saturating_sub(1).max(1)))
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    /// Density `g_r(t)`. For `r = 1` this is `+inf` at `t = 0`.
    #[inline]
    pub fn pdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        if t == 0.0 {
            return match self.dof as u32 {
                1 => f64::INFINITY,
                2 => 0.5,
                _ => 0.0,
            };
        }
        (self.ln_norm + (self.half_dof - 1.0) * t.ln() - 0.5 * t).exp()
    }

    /// Density of `V = sqrt(T)`, i.e. `2 v g_r(v^2)`; finite at 0 for every r.
    #[inline]
    pub fn sqrt_pdf(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return if self.dof as u32 == 1 {
                2.0 * self.ln_norm.exp()
            } else {
                0.0
            };
        }
        2.0 * (self.ln_norm + (self.dof - 1.0) * v.ln() - 0.5 * v * v).exp()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        gamma_p_with_ln_gamma(self.half_dof, 0.5 * t, self.ln_gamma_half)
    }

    pub fn mode(&self) -> f64 {
        (self.dof - 2.0).max(0.0)
    }

    /// Quantile by safeguarded Newton iteration on the CDF.
    pub fn quantile(&self, prob: f64) -> f64 {
        if prob <= 0.0 {
            return 0.0;
        }
        if prob >= 1.0 {
            return f64::INFINITY;
        }
        let mut lo = 0.0;
        let mut hi = self.dof + 10.0 * (2.0 * self.dof).sqrt() + 100.0;
        while self.cdf(hi) < prob {
            lo = hi;
            hi *= 2.0;
        }
        // Wilson–Hilferty start.
        let z = norm_quantile(prob);
        let h = 2.0 / (9.0 * self.dof);
        let mut t = (self.dof * (1.0 - h + z * h.sqrt()).powi(3)).clamp(lo, hi);
        if !(t > lo && t < hi) {
            t = 0.5 * (lo + hi);
        }
        for _ in 0..200 {
            let f = self.cdf(t) - prob;
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let dens = self.pdf(t);
            let mut next = if dens > 0.0 { t - f / dens } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() <= 1e-15 * t.max(1e-300) || hi - lo <= 1e-15 * hi {
                return next;
            }
            t = next;
        }
        t
    }

    /// Central mass interval `[q(ε), q(1 − ε)]` outside of which the
    /// density carries less than `2ε` probability.
    pub fn support(&self, eps: f64) -> (f64, f64) {
        (self.quantile(eps), self.quantile(1.0 - eps))
    }
}

/// Checked chi-square density.
pub fn chi2_pdf(t: f64, r: DegreesOfFreedom) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!(
            "chi-square density argument {t} < 0"
        )));
    }
    Ok(ChiSquare::new(r).pdf(t))
}
