//! ASN-minimax double plans.
//!
//! The two-sided plan is obtained from a one-sided AM plan (upper limit
//! only) through `k̃ᵢ = Φ(lᵢ/√n)`: the one-sided OC is what the two-sided
//! band tends to as `σ → 0`, so the translated plan is a good candidate.
//! Its band extremes are then checked, and the one-sided design levels
//! `(α**, β**)` are tightened until both band conditions hold.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::band::{BandExtreme, Extreme};
use crate::double_plan::{DoubleAsn, DoubleOc, DoublePlan, OcMethod, QuadratureConfig};
use crate::error::{Error, Result};
use crate::isoline::{ProcessPoint, SpecLimits};
use crate::one_sided::{
    asn_max_one_sided, check_levels, design_one_sided_single, threshold_window, OneSidedDoubleOc,
    OneSidedDoublePlan, OneSidedSingleOc,
};
use crate::roots::{brent, golden_min};
use crate::single_plan::{design_single, round_level, DesignRequirement, SingleDesign, LEVEL_STEP};
use crate::special::{norm_cdf, norm_quantile};

/// Quadrature nodes per dimension for the final one-sided OC solve.
pub const ONE_SIDED_NODES: usize = 48;
/// Coarser rule used while comparing sample sizes.
const SEARCH_NODES: usize = 32;
const SEARCH_XTOL: f64 = 2e-3;
const POLISH_XTOL: f64 = 1e-4;

/// One-sided AM plan with its constraint values and maximum ASN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneSidedAmDesign {
    pub plan: OneSidedDoublePlan,
    pub n_max: f64,
    /// Fraction defective at which the ASN peaks.
    pub p_at_max: f64,
    pub oc_p1: f64,
    pub oc_p2: f64,
}

/// Levels of the one-sided problem.
#[derive(Debug, Clone, Copy)]
struct Levels {
    z1: f64,
    z2: f64,
    accept: f64,
    reject: f64,
}

impl Levels {
    fn new(p1: f64, p2: f64, alpha: f64, beta: f64) -> Self {
        Self {
            z1: -norm_quantile(p1),
            z2: -norm_quantile(p2),
            accept: 1.0 - alpha,
            reject: beta,
        }
    }
}

/// Best plan for fixed sample sizes.
#[derive(Debug, Clone, Copy)]
struct SizeOptimum {
    l: [f64; 3],
    n_max: f64,
    p_at_max: f64,
}

struct SizeSearch<'a> {
    levels: Levels,
    n1: u32,
    n2: u32,
    oc: OneSidedDoubleOc,
    first: &'a OneSidedSingleOc,
}

impl SizeSearch<'_> {
    fn residual(&self, l1: f64, l2: f64, l3: f64) -> [f64; 2] {
        [
            self.oc.eval_margin(l1, l2, l3, self.levels.z1) - self.levels.accept,
            self.oc.eval_margin(l1, l2, l3, self.levels.z2) - self.levels.reject,
        ]
    }

    /// Newton iteration for `(l2, l3)` with a forward-difference Jacobian
    /// and backtracking.
    fn newton(&self, l1: f64, guess: [f64; 2]) -> Option<[f64; 2]> {
        let mut x = guess;
        x[0] = x[0].max(l1 + 1e-6);
        let mut r = self.residual(l1, x[0], x[1]);
        let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
        const H: f64 = 1e-5;
        for it in 0..40 {
            if norm(r) < 1e-11 {
                return Some(x);
            }
            // Converging runs are quadratic; anything still far off here is
            // stuck and the nested solve takes over.
            if it >= 12 && norm(r) > 1e-6 {
                return None;
            }
            let r2 = self.residual(l1, x[0] + H, x[1]);
            let r3 = self.residual(l1, x[0], x[1] + H);
            let j = [
                [(r2[0] - r[0]) / H, (r3[0] - r[0]) / H],
                [(r2[1] - r[1]) / H, (r3[1] - r[1]) / H],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !(det.abs() > 1e-300) {
                return None;
            }
            let dx = [
                (j[1][1] * r[0] - j[0][1] * r[1]) / det,
                (j[0][0] * r[1] - j[1][0] * r[0]) / det,
            ];
            let mut t = 1.0;
            loop {
                let cand = [(x[0] - t * dx[0]).max(l1 + 1e-9), x[1] - t * dx[1]];
                let rc = self.residual(l1, cand[0], cand[1]);
                if norm(rc) < norm(r) {
                    x = cand;
                    r = rc;
                    break;
                }
                t *= 0.5;
                if t < 1e-3 {
                    return (norm(r) < 1e-8).then_some(x);
                }
            }
        }
        (norm(r) < 1e-8).then_some(x)
    }

    /// Slower but monotone route: `l3(l2)` from the `p2` equality, then
    /// `l2` from the `p1` equality.
    fn nested(&self, l1: f64) -> Option<[f64; 2]> {
        let (z1, z2) = (self.levels.z1, self.levels.z2);
        let l3_for = |l2: f64| -> Option<f64> {
            let f = |l3: f64| self.oc.eval_margin(l1, l2, l3, z2) - self.levels.reject;
            let (mut lo, mut hi) = (-20.0 * (self.n1 + self.n2) as f64, 0.0);
            while f(hi) < 0.0 {
                hi = 2.0 * hi.abs() + 10.0;
                if hi > 1e4 {
                    return None;
                }
            }
            if f(lo) > 0.0 {
                lo *= 4.0;
                if f(lo) > 0.0 {
                    return None;
                }
            }
            brent(f, lo, hi, 1e-12)
        };
        let g = |l2: f64| -> f64 {
            match l3_for(l2) {
                Some(l3) => self.oc.eval_margin(l1, l2, l3, z1) - self.levels.accept,
                None => f64::NAN,
            }
        };
        // l2 must let the first stage alone exceed β at p2.
        let l_b = self
            .first
            .solve_threshold(norm_cdf(-z2), self.levels.reject)?;
        let lo = l1.max(l_b) + 1e-6;
        let mut hi = lo + 1.0;
        let mut tries = 0;
        while !(g(hi) > 0.0) {
            hi += 2.0;
            tries += 1;
            if tries > 15 {
                return None;
            }
        }
        if !(g(lo) < 0.0) {
            return None;
        }
        let l2 = brent(g, lo, hi, 1e-11)?;
        Some([l2, l3_for(l2)?])
    }

    fn solve(&self, l1: f64, guess: Option<[f64; 2]>) -> Option<[f64; 2]> {
        guess
            .and_then(|g| self.newton(l1, g))
            .or_else(|| self.nested(l1))
    }

    fn n_max(&self, l1: f64, l2: f64) -> (f64, f64) {
        asn_max_one_sided(self.first, self.n2, l1, l2)
    }

    /// Golden-section search over `l1` for the smallest maximum ASN.
    ///
    /// Without a hint, `l1` is scanned over `[l_b − 4, l_b]`, where `l_b`
    /// is the threshold at which the first stage alone accepts `β` at `p2`.
    /// With a hint the search stays within `radius` of it.
    fn optimize(&self, hint: Option<[f64; 3]>, radius: f64, xtol: f64) -> Option<SizeOptimum> {
        let warm = std::cell::Cell::new(hint.map(|h| [h[1], h[2]]));
        let objective = |l1: f64| -> f64 {
            match self.solve(l1, warm.get()) {
                Some(x) => {
                    warm.set(Some(x));
                    self.n_max(l1, x[0]).1
                }
                None => f64::INFINITY,
            }
        };
        let (a, b) = match hint {
            Some(h) => (h[0] - radius, h[0] + radius),
            None => {
                let l_b = self
                    .first
                    .solve_threshold(norm_cdf(-self.levels.z2), self.levels.reject)?;
                let grid: Vec<f64> = (0..=8).map(|i| l_b - 4.0 + 0.5 * i as f64).collect();
                let mut best = (f64::INFINITY, 0usize);
                for (i, &l1) in grid.iter().enumerate().rev() {
                    let v = objective(l1);
                    if v < best.0 {
                        best = (v, i);
                    }
                }
                if !best.0.is_finite() {
                    return None;
                }
                (
                    grid[best.1.saturating_sub(1)],
                    grid[(best.1 + 1).min(grid.len() - 1)],
                )
            }
        };
        // Failed solves are slow and give golden search nothing to compare,
        // so first halve the bracket towards a solvable end until its
        // midpoint solves. No solvable end means infeasible sizes.
        let (mut a, mut b) = (a, b);
        if hint.is_some() {
            let (mut fa, mut fb) = (None, None);
            for _ in 0..6 {
                if objective(0.5 * (a + b)).is_finite() {
                    break;
                }
                let left = *fa.get_or_insert_with(|| objective(a).is_finite());
                let right = *fb.get_or_insert_with(|| objective(b).is_finite());
                match (left, right) {
                    (false, false) => return None,
                    (true, _) => {
                        b = 0.5 * (a + b);
                        fb = Some(false);
                    }
                    (false, true) => {
                        a = 0.5 * (a + b);
                        fa = Some(false);
                    }
                }
            }
        }
        let (l1, fx) = golden_min(objective, a, b, xtol);
        if !fx.is_finite() {
            return None;
        }
        let x = self.solve(l1, warm.get())?;
        let (p_at_max, n_max) = self.n_max(l1, x[0]);
        Some(SizeOptimum {
            l: [l1, x[0], x[1]],
            n_max,
            p_at_max,
        })
    }
}

/// One-sided AM double plan for levels `(α**, β**)`.
///
/// For each `(n1, n2)` the `p1` and `p2` conditions are met with equality,
/// leaving `l1` free; `l1` is chosen to minimize the maximum ASN. The
/// sample sizes are then improved by a local search on the integer grid,
/// started near `(0.65 n, 0.5 n)` for the one-sided single plan size `n`
/// unless a start is given.
pub fn design_one_sided_am(req: &DesignRequirement) -> Result<OneSidedAmDesign> {
    design_one_sided_am_from(req, None, ONE_SIDED_NODES)
}

pub fn design_one_sided_am_from(
    req: &DesignRequirement,
    start: Option<(u32, u32)>,
    nodes: usize,
) -> Result<OneSidedAmDesign> {
    let (p1, p2, alpha, beta) = req.levels();
    check_levels(p1, p2, alpha, beta)?;
    let levels = Levels::new(p1, p2, alpha, beta);
    let start = match start {
        Some(s) => s,
        None => {
            let single = design_one_sided_single(p1, p2, alpha, beta)?;
            let n = single.n as f64;
            (
                ((0.65 * n).round() as u32).max(2),
                ((0.5 * n).round() as u32).max(2),
            )
        }
    };

    let mut firsts: HashMap<u32, OneSidedSingleOc> = HashMap::new();
    let mut cache: HashMap<(u32, u32), Option<SizeOptimum>> = HashMap::new();
    let search_nodes = SEARCH_NODES.min(nodes);
    let mut evaluate = |n1: u32, n2: u32, hint: Option<[f64; 3]>| -> Option<SizeOptimum> {
        if n1 < 2 || n2 < 2 {
            return None;
        }
        if let Some(v) = cache.get(&(n1, n2)) {
            return *v;
        }
        let first = firsts
            .entry(n1)
            .or_insert_with(|| OneSidedSingleOc::new(n1, 64))
            .clone();
        let search = SizeSearch {
            levels,
            n1,
            n2,
            oc: OneSidedDoubleOc::new(n1, n2, search_nodes),
            first: &first,
        };
        // A neighbor's optimum is a good hint, but sizes shift l1 by more
        // than the local radius near the boundary, so retry from scratch.
        let v = search
            .optimize(hint, 0.5, SEARCH_XTOL)
            .or_else(|| hint.and_then(|_| search.optimize(None, 0.0, SEARCH_XTOL)));
        cache.insert((n1, n2), v);
        v
    };

    let mut at = start;
    let mut best = evaluate(at.0, at.1, None);
    let mut budget = 200;
    while best.is_none() {
        // Too small to be feasible; grow both sizes.
        at = (at.0 + 1, at.1 + 1);
        best = evaluate(at.0, at.1, None);
        budget -= 1;
        if budget == 0 {
            return Err(Error::Infeasible(format!(
                "no feasible one-sided double plan near n1={}, n2={}",
                start.0, start.1
            )));
        }
    }
    let mut best = best.expect("loop exits with a plan");
    loop {
        let mut improved = false;
        for (d1, d2) in [
            (-1i32, 0i32),
            (1, 0),
            (0, -1),
            (0, 1),
            (-1, -1),
            (1, 1),
            (-1, 1),
            (1, -1),
        ] {
            let n1 = at.0 as i32 + d1;
            let n2 = at.1 as i32 + d2;
            if n1 < 2 || n2 < 2 {
                continue;
            }
            if let Some(c) = evaluate(n1 as u32, n2 as u32, Some(best.l)) {
                if c.n_max < best.n_max - 1e-9 {
                    best = c;
                    at = (n1 as u32, n2 as u32);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
        budget -= 1;
        if budget == 0 {
            return Err(Error::NoConvergence(
                "sample-size search exceeded its budget".into(),
            ));
        }
    }

    // Polish the winning sizes on the finer rule.
    let first = OneSidedSingleOc::new(at.0, 64);
    let polish = SizeSearch {
        levels,
        n1: at.0,
        n2: at.1,
        oc: OneSidedDoubleOc::new(at.0, at.1, nodes),
        first: &first,
    };
    let best = polish
        .optimize(Some(best.l), 0.05, POLISH_XTOL)
        .ok_or_else(|| Error::NoConvergence("final threshold solve failed".into()))?;
    let plan = OneSidedDoublePlan::new(at.0, best.l[0], best.l[1], at.1, best.l[2])?;
    Ok(OneSidedAmDesign {
        plan,
        n_max: best.n_max,
        p_at_max: best.p_at_max,
        oc_p1: polish.oc.eval(&plan, p1),
        oc_p2: polish.oc.eval(&plan, p2),
    })
}

/// `k̃₁ = Φ(l1/√n1)`, `k̃₂ = Φ(l2/√n1)`, `k̃₃ = Φ(l3/√(n1 + n2))`.
pub fn translate_to_two_sided(plan: &OneSidedDoublePlan) -> Result<DoublePlan> {
    let r1 = (plan.n1 as f64).sqrt();
    let rn = ((plan.n1 + plan.n2) as f64).sqrt();
    DoublePlan::new(
        plan.n1,
        norm_cdf(plan.l1 / r1),
        norm_cdf(plan.l2 / r1),
        plan.n2,
        norm_cdf(plan.l3 / rn),
    )
}

/// Inverse of [`translate_to_two_sided`].
pub fn translate_to_one_sided(plan: &DoublePlan) -> Result<OneSidedDoublePlan> {
    let r1 = (plan.n1() as f64).sqrt();
    let rn = (plan.total() as f64).sqrt();
    OneSidedDoublePlan::new(
        plan.n1(),
        r1 * norm_quantile(plan.k1()),
        r1 * norm_quantile(plan.k2()),
        plan.n2(),
        rn * norm_quantile(plan.k3()),
    )
}

/// One attempt of the tightening loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TighteningRow {
    pub alpha_star2: f64,
    pub beta_star2: f64,
    pub one_sided: OneSidedDoublePlan,
    pub candidate: DoublePlan,
    /// Maximum ASN of the one-sided plan over `p`.
    pub n_max: f64,
    pub min_oc_p1: BandExtreme,
    pub max_oc_p2: BandExtreme,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TighteningTrace {
    pub rows: Vec<TighteningRow>,
}

/// Outcome of [`design_two_sided_am`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedDesign {
    pub plan: DoublePlan,
    /// Maximum of the two-sided ASN and where it is attained.
    pub n_max: f64,
    pub n_max_at: ProcessPoint,
    pub single: SingleDesign,
    pub trace: TighteningTrace,
}

/// Failure of the tightening loop, with the rows computed so far.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{source}")]
pub struct TighteningFailure {
    pub source: Error,
    pub trace: TighteningTrace,
}

/// Settings for [`design_two_sided_am`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TighteningConfig {
    pub quadrature: QuadratureConfig,
    /// Route for the two-sided band checks.
    pub oc_method: OcMethod,
    pub one_sided_nodes: usize,
    pub max_steps: usize,
}

impl Default for TighteningConfig {
    fn default() -> Self {
        Self {
            quadrature: QuadratureConfig::default(),
            oc_method: OcMethod::NestedBounds,
            one_sided_nodes: ONE_SIDED_NODES,
            max_steps: 100,
        }
    }
}

/// Two-sided AM double plan.
///
/// `α**` starts at the single-plan design level `α*` and `β**` at `β`. At
/// each step the one-sided AM plan for `(α**, β**)` is translated and its
/// bands checked: if the `p2` maximum exceeds `β`, `β**` drops by
/// [`LEVEL_STEP`]; otherwise, if the `p1` minimum is below `1 − α`, `α**`
/// drops by the same step. The first candidate meeting both is returned.
pub fn design_two_sided_am(
    req: &DesignRequirement,
    lim: &SpecLimits,
    cfg: &TighteningConfig,
) -> std::result::Result<TwoSidedDesign, TighteningFailure> {
    let mut trace = TighteningTrace::default();
    let fail = |source: Error, trace: &TighteningTrace| TighteningFailure {
        source,
        trace: trace.clone(),
    };
    let single = design_single(req, lim).map_err(|e| fail(e, &trace))?;
    let (p1, p2, alpha, beta) = req.levels();
    let (mut a2, mut b2) = (single.alpha_star, beta);
    let mut start = None;
    for _ in 0..cfg.max_steps {
        if !(a2 > 0.0 && b2 > 0.0) {
            break;
        }
        let levels = DesignRequirement::new(p1, p2, a2, b2).map_err(|e| fail(e, &trace))?;
        let one = design_one_sided_am_from(&levels, start, cfg.one_sided_nodes)
            .map_err(|e| fail(e, &trace))?;
        start = Some((one.plan.n1, one.plan.n2));
        let candidate = translate_to_two_sided(&one.plan).map_err(|e| fail(e, &trace))?;
        let oc = DoubleOc::new(candidate, lim, cfg.quadrature, cfg.oc_method)
            .map_err(|e| fail(e, &trace))?;
        let max_oc_p2 = oc
            .band_extreme(p2, Extreme::Max)
            .map_err(|e| fail(e, &trace))?;
        let min_oc_p1 = oc
            .band_extreme(p1, Extreme::Min)
            .map_err(|e| fail(e, &trace))?;
        trace.rows.push(TighteningRow {
            alpha_star2: a2,
            beta_star2: b2,
            one_sided: one.plan,
            candidate,
            n_max: one.n_max,
            min_oc_p1,
            max_oc_p2,
        });
        if max_oc_p2.value > beta {
            b2 = round_level(b2 - LEVEL_STEP);
            continue;
        }
        if min_oc_p1.value < 1.0 - alpha {
            a2 = round_level(a2 - LEVEL_STEP);
            continue;
        }
        let (n_max_at, n_max) = DoubleAsn::new(candidate, lim)
            .and_then(|a| a.max())
            .map_err(|e| fail(e, &trace))?;
        return Ok(TwoSidedDesign {
            plan: candidate,
            n_max,
            n_max_at,
            single,
            trace,
        });
    }
    Err(fail(
        Error::NoConvergence(format!(
            "tightening stopped at alpha**={a2}, beta**={b2} without meeting both band conditions"
        )),
        &trace,
    ))
}

/// `(l_α, l_β)` window of a one-sided single plan; re-exported for callers
/// that seed their own searches.
pub fn one_sided_single_window(n: u32, req: &DesignRequirement) -> Option<(f64, f64)> {
    let (p1, p2, alpha, beta) = req.levels();
    threshold_window(n, p1, p2, alpha, beta)
}
