//! Operating characteristics of plans for an upper specification limit only.
//!
//! With only `U` in force the estimator is `Φ((x̄ − U)/s)`, and a threshold
//! `k` corresponds to `l = √n Φ⁻¹(k)`: the lot passes a stage when
//! `T = √n (x̄ − U)/s ≤ l`. Writing `Y = √n (x̄ − μ)/σ`, `W = (n − 1) s²/σ²`
//! and `δ = √n (U − μ)/σ`, the condition is `Y ≤ δ + l √(W/(n − 1))`, so the
//! OC depends on the process only through `p = Φ((μ − U)/σ)`.
//!
//! For the pooled second stage, rotate the standardized sample means
//! `(Y₁, Y₂)` into `Z₁ = (√n₁ Y₁ + √n₂ Y₂)/√N` (pooled mean) and
//! `Z₂ = (√n₂ Y₁ − √n₁ Y₂)/√N` (between-sample contrast). Conditional on the
//! first sample and `W₂`, the acceptance set in `Y₂` is solved in closed
//! form, leaving a three-fold integral over `(w₁, y₁, w₂)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{ChiSquareRule, GaussLegendre};
use crate::roots::{brent, golden_min};
use crate::special::{norm_cdf, norm_pdf, norm_quantile, ChiSquare};

/// Standardized means beyond this are treated as impossible.
pub(crate) const Y_CLIP: f64 = 8.5;

/// A double plan for an upper specification limit, thresholds on the
/// `T` scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneSidedDoublePlan {
    pub n1: u32,
    pub l1: f64,
    pub l2: f64,
    pub n2: u32,
    pub l3: f64,
}

impl OneSidedDoublePlan {
    pub fn new(n1: u32, l1: f64, l2: f64, n2: u32, l3: f64) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::invalid("sample sizes must be at least 2"));
        }
        if !(l1.is_finite() && l2.is_finite() && l3.is_finite()) || l1 > l2 {
            return Err(Error::invalid(format!(
                "one-sided thresholds need l1 <= l2, got l1={l1}, l2={l2}"
            )));
        }
        Ok(Self { n1, l1, l2, n2, l3 })
    }
}

/// `δ/√n = (U − μ)/σ` for a process with fraction defective `p`.
#[inline]
fn standardized_margin(p: f64) -> f64 {
    -norm_quantile(p)
}

/// Single-stage acceptance probability `P(T ≤ l)` for a process with
/// fraction defective `p` above `U`.
#[derive(Debug, Clone)]
pub struct OneSidedSingleOc {
    n: u32,
    rule: ChiSquareRule,
}

impl OneSidedSingleOc {
    pub fn new(n: u32, nodes: usize) -> Self {
        Self {
            n,
            rule: ChiSquareRule::new(ChiSquare::for_sample_size(n), nodes),
        }
    }

    /// Acceptance probability at margin `z = (U − μ)/σ`.
    pub fn eval_margin(&self, l: f64, z: f64) -> f64 {
        let nf = self.n as f64;
        let delta = nf.sqrt() * z;
        let dof = nf - 1.0;
        self.rule
            .integrate(f64::INFINITY, |w| norm_cdf(delta + l * (w / dof).sqrt()))
    }

    pub fn eval(&self, l: f64, p: f64) -> f64 {
        self.eval_margin(l, standardized_margin(p))
    }

    /// The `l` with `P(T ≤ l) = target` at fraction defective `p`.
    pub fn solve_threshold(&self, p: f64, target: f64) -> Option<f64> {
        let f = |l: f64| self.eval(l, p) - target;
        let (mut lo, mut hi) = (-10.0, 10.0);
        let mut tries = 0;
        while f(lo) > 0.0 && tries < 60 {
            lo *= 2.0;
            tries += 1;
        }
        while f(hi) < 0.0 && tries < 120 {
            hi *= 2.0;
            tries += 1;
        }
        brent(f, lo, hi, 1e-13)
    }
}

/// Single-stage one-sided OC, `P(Φ((x̄ − U)/s) ≤ Φ(l/√n))`.
pub fn oc_one_sided_single(n: u32, l: f64, p: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("sample size must be at least 2"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "fraction defective {p} outside (0, 1)"
        )));
    }
    Ok(OneSidedSingleOc::new(n, 64).eval(l, p))
}

/// Acceptance probability of a one-sided double plan with a pooled second
/// stage.
#[derive(Debug, Clone)]
pub struct OneSidedDoubleOc {
    n1: u32,
    n2: u32,
    w1_rule: ChiSquareRule,
    w2_rule: ChiSquareRule,
    y_rule: GaussLegendre,
    first: OneSidedSingleOc,
}

impl OneSidedDoubleOc {
    pub fn new(n1: u32, n2: u32, nodes: usize) -> Self {
        Self {
            n1,
            n2,
            w1_rule: ChiSquareRule::new(ChiSquare::for_sample_size(n1), nodes),
            w2_rule: ChiSquareRule::new(ChiSquare::for_sample_size(n2), nodes),
            y_rule: GaussLegendre::new(nodes),
            first: OneSidedSingleOc::new(n1, nodes.max(48)),
        }
    }

    pub fn eval(&self, plan: &OneSidedDoublePlan, p: f64) -> f64 {
        self.eval_margin(plan.l1, plan.l2, plan.l3, standardized_margin(p))
    }

    /// OC at margin `z = (U − μ)/σ` for thresholds `(l1, l2, l3)`.
    pub fn eval_margin(&self, l1: f64, l2: f64, l3: f64, z: f64) -> f64 {
        self.first.eval_margin(l1, z) + self.second_stage(l1, l2, l3, z)
    }

    /// `P(l1 < T₁ ≤ l2, T_pooled ≤ l3)`.
    pub fn second_stage(&self, l1: f64, l2: f64, l3: f64, z: f64) -> f64 {
        if !(l2 > l1) {
            return 0.0;
        }
        let n1 = self.n1 as f64;
        let n2 = self.n2 as f64;
        let n = n1 + n2;
        let delta1 = n1.sqrt() * z;
        let line = PooledLine::new(n1, n2, l3, n.sqrt() * z);
        let dof1 = n1 - 1.0;
        self.w1_rule.integrate(f64::INFINITY, |w1| {
            let r = (w1 / dof1).sqrt();
            let a = (delta1 + l1 * r).max(-Y_CLIP);
            let b = (delta1 + l2 * r).min(Y_CLIP);
            if !(b > a) {
                return 0.0;
            }
            self.y_rule.integrate(a, b, |y1| {
                norm_pdf(y1)
                    * self
                        .w2_rule
                        .integrate(f64::INFINITY, |w2| line.accept_mass(y1, w1 + w2))
            })
        })
    }
}

/// Second-stage acceptance along the line traced by `Y₂` for fixed first
/// sample: `Z₁ − δ_N ≤ c √(A + Z₂²)`, with `c = l3/√(N − 1)` and
/// `A = W₁ + W₂`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PooledLine {
    s1: f64,
    s2: f64,
    c: f64,
    delta_n: f64,
}

impl PooledLine {
    pub(crate) fn new(n1: f64, n2: f64, l3: f64, delta_n: f64) -> Self {
        let n = n1 + n2;
        Self {
            s1: (n1 / n).sqrt(),
            s2: (n2 / n).sqrt(),
            c: l3 / (n - 1.0).sqrt(),
            delta_n,
        }
    }

    /// Standard normal mass of `{t : f(t) ≤ 0}` where
    /// `f(t) = a1 + s2 t − δ_N − c √(A + (a2 − s1 t)²)`.
    pub(crate) fn accept_mass(&self, y1: f64, chi_sum: f64) -> f64 {
        let alpha0 = self.s1 * y1 - self.delta_n;
        let a2 = self.s2 * y1;
        let (b1, b2, c) = (self.s2, self.s1, self.c);
        let f = |t: f64| alpha0 + b1 * t - c * (chi_sum + (a2 - b2 * t).powi(2)).sqrt();

        // Squaring f = 0 gives qa t² + qb t + qc = 0.
        let c2 = c * c;
        let qa = b1 * b1 - c2 * b2 * b2;
        let qb = 2.0 * (alpha0 * b1 + c2 * a2 * b2);
        let qc = alpha0 * alpha0 - c2 * (chi_sum + a2 * a2);
        let mut cuts = [0.0f64; 3];
        let mut m = 0;
        let scale = qa.abs().max(qb.abs()).max(qc.abs());
        if qa.abs() <= 1e-14 * scale {
            if qb != 0.0 {
                cuts[m] = -qc / qb;
                m += 1;
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                let q = -0.5 * (qb + sq.copysign(qb));
                if q != 0.0 {
                    cuts[m] = q / qa;
                    m += 1;
                    cuts[m] = qc / q;
                    m += 1;
                } else {
                    cuts[m] = 0.0;
                    m += 1;
                }
            }
        }
        if c == 0.0 {
            m = 0;
            cuts[m] = -alpha0 / b1;
            m += 1;
        }
        let cuts = &mut cuts[..m];
        cuts.sort_by(f64::total_cmp);

        let mut mass = 0.0;
        let mut left = f64::NEG_INFINITY;
        for i in 0..=cuts.len() {
            let right = if i < cuts.len() {
                cuts[i]
            } else {
                f64::INFINITY
            };
            if right > left {
                let probe = match (left.is_finite(), right.is_finite()) {
                    (true, true) => 0.5 * (left + right),
                    (false, true) => right - 1.0 - right.abs(),
                    (true, false) => left + 1.0 + left.abs(),
                    (false, false) => 0.0,
                };
                if f(probe) <= 0.0 {
                    mass += norm_cdf(right) - norm_cdf(left);
                }
            }
            left = right;
        }
        mass.clamp(0.0, 1.0)
    }
}

/// Expected sample size of a one-sided double plan at margin `z`.
pub fn asn_one_sided_margin(first: &OneSidedSingleOc, n2: u32, l1: f64, l2: f64, z: f64) -> f64 {
    let cont = (first.eval_margin(l2, z) - first.eval_margin(l1, z)).max(0.0);
    first.n as f64 + n2 as f64 * cont
}

/// Maximum ASN over all fraction defective levels, with the maximizing `p`.
pub fn asn_max_one_sided(first: &OneSidedSingleOc, n2: u32, l1: f64, l2: f64) -> (f64, f64) {
    let n1 = first.n as f64;
    // Continuation peaks where the stage-one window straddles Y = 0.
    let centre = -0.5 * (l1 + l2) / n1.sqrt();
    let span = 12.0 / n1.sqrt() + 0.5 * (l2 - l1).abs() / n1.sqrt();
    let grid: Vec<f64> = (0..=80)
        .map(|i| centre - span + 2.0 * span * i as f64 / 80.0)
        .collect();
    let (best, _) = grid
        .iter()
        .map(|&z| asn_one_sided_margin(first, n2, l1, l2, z))
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let (z, neg) = golden_min(
        |z| -asn_one_sided_margin(first, n2, l1, l2, z),
        lo,
        hi,
        1e-9,
    );
    (norm_cdf(-z), -neg)
}

pub fn asn_max_one_sided_plan(plan: &OneSidedDoublePlan) -> (f64, f64) {
    let first = OneSidedSingleOc::new(plan.n1, 64);
    asn_max_one_sided(&first, plan.n2, plan.l1, plan.l2)
}

/// Single plan for an upper limit on the `T` scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneSidedSinglePlan {
    pub n: u32,
    pub l: f64,
}

/// For sample size `n`, the thresholds `(l_α, l_β)` meeting the two OC
/// conditions with equality. A threshold in `[l_α, l_β]` satisfies both.
pub fn threshold_window(n: u32, p1: f64, p2: f64, alpha: f64, beta: f64) -> Option<(f64, f64)> {
    let oc = OneSidedSingleOc::new(n, 64);
    Some((
        oc.solve_threshold(p1, 1.0 - alpha)?,
        oc.solve_threshold(p2, beta)?,
    ))
}

/// Smallest single plan meeting `OC(p1) ≥ 1 − alpha` and `OC(p2) ≤ beta`,
/// with the threshold in the middle of the feasible window.
pub fn design_one_sided_single(
    p1: f64,
    p2: f64,
    alpha: f64,
    beta: f64,
) -> Result<OneSidedSinglePlan> {
    check_levels(p1, p2, alpha, beta)?;
    let feasible = |n: u32| -> Result<(bool, f64, f64)> {
        let (la, lb) = threshold_window(n, p1, p2, alpha, beta)
            .ok_or_else(|| Error::NoConvergence(format!("threshold solve failed at n={n}")))?;
        Ok((la <= lb, la, lb))
    };
    // Normal approximation for a known-σ plan, inflated for the estimated σ.
    let (z1, z2) = (norm_quantile(p1), norm_quantile(p2));
    let (za, zb) = (norm_quantile(alpha), norm_quantile(beta));
    let k = 0.5 * (z1 + z2);
    let guess = ((za + zb) / (z1 - z2)).powi(2) * (1.0 + 0.5 * k * k);
    let mut n = (guess.ceil() as u32).max(2);
    if feasible(n)?.0 {
        while n > 2 && feasible(n - 1)?.0 {
            n -= 1;
        }
    } else {
        loop {
            n += 1;
            if n > 100_000 {
                return Err(Error::Infeasible(
                    "no sample size up to 100000 suffices".into(),
                ));
            }
            if feasible(n)?.0 {
                break;
            }
        }
    }
    let (_, la, lb) = feasible(n)?;
    Ok(OneSidedSinglePlan {
        n,
        l: 0.5 * (la + lb),
    })
}

pub(crate) fn check_levels(p1: f64, p2: f64, alpha: f64, beta: f64) -> Result<()> {
    if !(p1 > 0.0 && p1 < p2 && p2 < 1.0) {
        return Err(Error::Infeasible(format!(
            "need 0 < p1 < p2 < 1, got p1={p1}, p2={p2}"
        )));
    }
    if !(alpha > 0.0 && beta > 0.0 && alpha + beta < 1.0) {
        return Err(Error::Infeasible(format!(
            "need alpha, beta > 0 with alpha + beta < 1, got alpha={alpha}, beta={beta}"
        )));
    }
    Ok(())
}

/// OC of a one-sided double plan at fraction defective `p`.
pub fn oc_one_sided_double(plan: &OneSidedDoublePlan, p: f64, nodes: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "fraction defective {p} outside (0, 1)"
        )));
    }
    Ok(OneSidedDoubleOc::new(plan.n1, plan.n2, nodes).eval(plan, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_design_window_is_minimal() {
        let plan = design_one_sided_single(0.01, 0.06, 0.082, 0.1).unwrap();
        let (la, lb) = threshold_window(plan.n, 0.01, 0.06, 0.082, 0.1).unwrap();
        assert!(la <= lb);
        let (la, lb) = threshold_window(plan.n - 1, 0.01, 0.06, 0.082, 0.1).unwrap();
        assert!(la > lb);
    }

    #[test]
    fn median_symmetry() {
        let v = oc_one_sided_single(23, 0.0, 0.5).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_stage_matches_noncentral_t() {
        // P(T ≤ l) with T noncentral t(ν = n − 1, −√n z); statrs only has the
        // central case, so check the z = 0 slice against it.
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let t = StudentsT::new(0.0, 1.0, 22.0).unwrap();
        for l in [-2.0, -0.7, 0.0, 1.3] {
            let got = OneSidedSingleOc::new(23, 64).eval_margin(l, 0.0);
            assert!((got - t.cdf(l)).abs() < 1e-10, "l={l} got={got}");
        }
    }

    #[test]
    fn equal_first_stage_thresholds_reduce_to_single() {
        let plan = OneSidedDoublePlan::new(23, -10.0, -10.0, 18, -12.0).unwrap();
        let v = oc_one_sided_double(&plan, 0.03, 24).unwrap();
        let s = oc_one_sided_single(23, -10.0, 0.03).unwrap();
        assert!((v - s).abs() < 1e-12);
    }

    #[test]
    fn lenient_second_stage_approaches_stage_one_upper_threshold() {
        let plan = OneSidedDoublePlan::new(23, -10.6, -8.6, 18, 500.0).unwrap();
        let v = oc_one_sided_double(&plan, 0.03, 64).unwrap();
        let s = oc_one_sided_single(23, -8.6, 0.03).unwrap();
        assert!((v - s).abs() < 1e-7, "v={v} s={s}");
    }

    #[test]
    fn accept_mass_matches_brute_force() {
        let line = PooledLine::new(23.0, 18.0, -12.4, 41f64.sqrt() * 2.0);
        for (y1, a) in [(0.3, 30.0), (-1.2, 45.0), (2.5, 20.0), (0.0, 60.0)] {
            let got = line.accept_mass(y1, a);
            let gl = GaussLegendre::new(4000);
            let n1 = 23f64;
            let n2 = 18f64;
            let n = n1 + n2;
            let brute = gl.integrate(-10.0, 10.0, |t| {
                let z1 = (n1.sqrt() * y1 + n2.sqrt() * t) / n.sqrt();
                let z2 = (n2.sqrt() * y1 - n1.sqrt() * t) / n.sqrt();
                let ok = z1 - 2.0 * n.sqrt() <= -12.4 * ((a + z2 * z2) / (n - 1.0)).sqrt();
                if ok {
                    norm_pdf(t)
                } else {
                    0.0
                }
            });
            assert!(
                (got - brute).abs() < 2e-3,
                "y1={y1} got={got} brute={brute}"
            );
        }
    }
}
