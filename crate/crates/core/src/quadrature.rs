//! Gauss–Legendre rules and an adaptive Gauss–Kronrod integrator.

use crate::error::{Error, Result};
use crate::special::ChiSquare;

/// An n-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integral value with an absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Estimate {
        value: kronrod * h,
        error: ((kronrod - gauss) * h).abs(),
    }
}

/// Globally adaptive Gauss–Kronrod (7/15) integration on `[a, b]`, with
/// optional interior break points.
///
/// Returns [`Error::Quadrature`] if the error estimate stays above
/// `abs_tol` after `max_intervals` subdivisions.
pub fn integrate_adaptive(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    max_intervals: usize,
) -> Result<Estimate> {
    if !(b > a) {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
        });
    }
    let mut cuts: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut pieces: Vec<(f64, f64, Estimate)> = cuts
        .windows(2)
        .map(|w| (w[0], w[1], gk15(&mut f, w[0], w[1])))
        .collect();
    loop {
        let total_err: f64 = pieces.iter().map(|p| p.2.error).sum();
        if total_err <= abs_tol {
            break;
        }
        if pieces.len() >= max_intervals {
            return Err(Error::Quadrature {
                estimate: total_err,
                tolerance: abs_tol,
            });
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2.error.total_cmp(&y.1 .2.error))
            .expect("non-empty");
        let (lo, hi, _) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            // Interval cannot be split further in floating point.
            return Err(Error::Quadrature {
                estimate: total_err,
                tolerance: abs_tol,
            });
        }
        pieces.push((lo, mid, gk15(&mut f, lo, mid)));
        pieces.push((mid, hi, gk15(&mut f, mid, hi)));
    }
    Ok(Estimate {
        value: pieces.iter().map(|p| p.2.value).sum(),
        error: pieces.iter().map(|p| p.2.error).sum(),
    })
}

/// Tail mass ignored when truncating chi-square integrals.
pub(crate) const CHI2_TAIL: f64 = 1e-14;

/// Fixed-node rule for `∫_0^upper f(w) g_r(w) dw`.
///
/// Works in `v = sqrt(w)`, where the weight `2 v g_r(v^2)` is smooth for
/// every `r`, and clips the range to the chi-square bulk.
#[derive(Debug, Clone)]
pub struct ChiSquareRule {
    chi: ChiSquare,
    v_lo: f64,
    v_hi: f64,
    rule: GaussLegendre,
}

impl ChiSquareRule {
    pub fn new(chi: ChiSquare, nodes: usize) -> Self {
        let (lo, hi) = chi.support(CHI2_TAIL);
        Self {
            chi,
            v_lo: lo.sqrt(),
            v_hi: hi.sqrt(),
            rule: GaussLegendre::new(nodes),
        }
    }

    pub fn chi(&self) -> &ChiSquare {
        &self.chi
    }

    /// Upper end of the retained bulk, in the original `w` scale.
    pub fn bulk_upper(&self) -> f64 {
        self.v_hi * self.v_hi
    }

    /// Nodes `(w, weight)` with weights including the chi-square density,
    /// for the range `[0, upper]`. Empty when the range misses the bulk.
    pub fn nodes(&self, upper: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let top = if upper.is_finite() {
            upper.max(0.0).sqrt().min(self.v_hi)
        } else {
            self.v_hi
        };
        let (a, b) = if top > self.v_lo {
            (self.v_lo, top)
        } else {
            (0.0, 0.0)
        };
        let active = b > a;
        self.rule
            .mapped(a, b)
            .filter(move |_| active)
            .map(move |(v, w)| (v * v, w * self.chi.sqrt_pdf(v)))
    }

    pub fn integrate(&self, upper: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes(upper).map(|(w, wt)| wt * f(w)).sum()
    }
}
