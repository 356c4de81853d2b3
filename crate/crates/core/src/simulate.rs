//! Monte-Carlo oracle: runs the sampling plans literally on simulated lots.
//!
//! Replicates are split into fixed-size batches. Batch `b` draws from a
//! ChaCha8 stream keyed by `(seed, b)`, so results are reproducible and
//! independent of how batches are scheduled across threads. Counts are
//! integers, so the merge is exact.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::double_plan::DoublePlan;
use crate::error::{Error, Result};
use crate::isoline::{ProcessPoint, SpecLimits};
use crate::single_plan::SinglePlan;
use crate::special::{norm_cdf, ppnd16, Probability};

const BATCH: u64 = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub acceptance_rate: Probability,
    pub asn_estimate: f64,
    pub replicates: u64,
    pub se_acceptance: f64,
    pub se_asn: f64,
    pub seed: u64,
}

/// Normal sample generator on one stream.
struct Sampler {
    rng: ChaCha8Rng,
    mu: f64,
    sigma: f64,
    /// Sums are accumulated around this shift to keep them small.
    shift: f64,
}

impl Sampler {
    fn new(seed: u64, batch: u64, pt: ProcessPoint, shift: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(batch);
        Self {
            rng,
            mu: pt.mu,
            sigma: pt.sigma,
            shift,
        }
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Shifted sum and sum of squares of `n` draws.
    fn draw(&mut self, n: u32) -> Moments {
        let offset = self.mu - self.shift;
        let mut m = Moments::default();
        for _ in 0..n {
            let d = offset + self.sigma * ppnd16(self.uniform());
            m.n += 1;
            m.sum += d;
            m.sum_sq += d * d;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u32,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn merge(self, o: Moments) -> Moments {
        Moments {
            n: self.n + o.n,
            sum: self.sum + o.sum,
            sum_sq: self.sum_sq + o.sum_sq,
        }
    }

    /// `p* = Φ((L − x̄)/s) + Φ((x̄ − U)/s)` for the shifted moments.
    fn estimate(&self, shift: f64, lim: &SpecLimits) -> f64 {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - self.sum * mean) / (n - 1.0)).max(0.0);
        let s = var.sqrt();
        let xbar = shift + mean;
        if s == 0.0 {
            return if xbar > lim.lower() && xbar < lim.upper() {
                0.0
            } else {
                1.0
            };
        }
        norm_cdf((lim.lower() - xbar) / s) + norm_cdf((xbar - lim.upper()) / s)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    accepted: u64,
    items: u64,
    items_sq: u64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            accepted: self.accepted + o.accepted,
            items: self.items + o.items,
            items_sq: self.items_sq + o.items_sq,
        }
    }

    fn record(&mut self, accepted: bool, items: u32) {
        self.accepted += accepted as u64;
        self.items += items as u64;
        self.items_sq += (items as u64) * (items as u64);
    }
}

fn run(
    replicates: u64,
    seed: u64,
    pt: ProcessPoint,
    lim: &SpecLimits,
    lot: impl Fn(&mut Sampler, &mut Tally) + Sync,
) -> Result<SimulationResult> {
    if replicates == 0 {
        return Err(Error::invalid("replicates must be at least 1"));
    }
    let batches = replicates.div_ceil(BATCH);
    let shift = lim.midpoint();
    let tally = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut sampler = Sampler::new(seed, b, pt, shift);
            let mut t = Tally::default();
            let count = BATCH.min(replicates - b * BATCH);
            for _ in 0..count {
                lot(&mut sampler, &mut t);
            }
            t
        })
        .reduce(Tally::default, Tally::merge);
    let r = replicates as f64;
    let rate = tally.accepted as f64 / r;
    let mean_items = tally.items as f64 / r;
    let var_items = (tally.items_sq as f64 / r - mean_items * mean_items).max(0.0);
    let denom = (r - 1.0).max(1.0);
    Ok(SimulationResult {
        acceptance_rate: Probability::saturating(rate),
        asn_estimate: mean_items,
        replicates,
        se_acceptance: (rate * (1.0 - rate) * r / denom).sqrt() / r.sqrt(),
        se_asn: (var_items * r / denom).sqrt() / r.sqrt(),
        seed,
    })
}

/// Simulates the double plan: stage one decides on `p*₁` against `k1` and
/// `k2`; otherwise `n2` more items are drawn and the pooled estimate is
/// compared with `k3`.
pub fn simulate_double_plan(
    plan: &DoublePlan,
    pt: ProcessPoint,
    lim: &SpecLimits,
    replicates: u64,
    seed: u64,
) -> Result<SimulationResult> {
    let shift = lim.midpoint();
    run(replicates, seed, pt, lim, |s, t| {
        let first = s.draw(plan.n1());
        let p1 = first.estimate(shift, lim);
        if p1 <= plan.k1() {
            t.record(true, plan.n1());
        } else if p1 > plan.k2() {
            t.record(false, plan.n1());
        } else {
            let pooled = first.merge(s.draw(plan.n2()));
            t.record(pooled.estimate(shift, lim) <= plan.k3(), plan.total());
        }
    })
}

pub fn simulate_single_plan(
    plan: &SinglePlan,
    pt: ProcessPoint,
    lim: &SpecLimits,
    replicates: u64,
    seed: u64,
) -> Result<SimulationResult> {
    let shift = lim.midpoint();
    run(replicates, seed, pt, lim, |s, t| {
        let m = s.draw(plan.n());
        t.record(m.estimate(shift, lim) <= plan.k(), plan.n());
    })
}
