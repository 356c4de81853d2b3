//! Extremes of an OC profile along an iso-p-line.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::roots::golden_min;

/// Which extreme of a band to locate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extreme {
    Min,
    Max,
}

/// Location and value of a band extreme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandExtreme {
    pub sigma_star: f64,
    pub value: f64,
}

pub const BAND_GRID_POINTS: usize = 64;
/// Lower end of the band grid relative to `σ₀(p)`.
pub const BAND_SIGMA_FLOOR: f64 = 1e-3;

/// Geometric grid on `[σ₀·floor, σ₀]`, strictly increasing, ending at `σ₀`.
pub fn geometric_sigma_grid(sigma0: f64, points: usize, floor: f64) -> Vec<f64> {
    let lo = (sigma0 * floor).ln();
    let hi = sigma0.ln();
    (0..points)
        .map(|i| {
            if i + 1 == points {
                sigma0
            } else {
                (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

/// Coarse grid search followed by golden-section refinement in `ln σ`
/// around the best grid cell.
pub fn band_extreme<F>(profile: F, sigma0: f64, mode: Extreme) -> Result<BandExtreme>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let grid = geometric_sigma_grid(sigma0, BAND_GRID_POINTS, BAND_SIGMA_FLOOR);
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&s| profile(s))
        .collect::<Result<_>>()?;
    let sign = match mode {
        Extreme::Min => 1.0,
        Extreme::Max => -1.0,
    };
    let (best, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| (sign * a.1).total_cmp(&(sign * b.1)))
        .expect("non-empty grid");
    let mut result = BandExtreme {
        sigma_star: grid[best],
        value: values[best],
    };
    let refined = refine_extreme(
        &profile,
        grid[best.saturating_sub(1)],
        grid[(best + 1).min(grid.len() - 1)],
        mode,
    )?;
    if sign * refined.value < sign * result.value {
        result = refined;
    }
    Ok(result)
}

/// Golden-section search for the extreme on `[lo, hi]` in `ln σ`. Used on
/// its own to re-locate a known extreme under a finer rule.
pub fn refine_extreme<F>(profile: &F, lo: f64, hi: f64, mode: Extreme) -> Result<BandExtreme>
where
    F: Fn(f64) -> Result<f64>,
{
    let sign = match mode {
        Extreme::Min => 1.0,
        Extreme::Max => -1.0,
    };
    let mut failure = None;
    let (x, fx) = golden_min(
        |t| match profile(t.exp()) {
            Ok(v) => sign * v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        lo.ln(),
        hi.ln(),
        1e-4,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let mut best = BandExtreme {
        sigma_star: x.exp(),
        value: sign * fx,
    };
    // golden_min never probes the bracket ends; band minima often sit at σ₀.
    for end in [lo, hi] {
        let v = profile(end)?;
        if sign * v < sign * best.value {
            best = BandExtreme {
                sigma_star: end,
                value: v,
            };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_increasing_and_ends_at_sigma0() {
        let g = geometric_sigma_grid(2.0, 64, 1e-3);
        assert_eq!(g.len(), 64);
        assert_eq!(*g.last().unwrap(), 2.0);
        assert!((g[0] - 2e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn finds_interior_and_endpoint_extremes() {
        let f = |s: f64| Ok((s.ln() - 0.3f64.ln()).powi(2));
        let m = band_extreme(f, 1.0, Extreme::Min).unwrap();
        assert!((m.sigma_star - 0.3).abs() < 1e-3);
        let m = band_extreme(Ok, 1.0, Extreme::Max).unwrap();
        assert_eq!(m.sigma_star, 1.0);
        assert_eq!(m.value, 1.0);
        let m = refine_extreme(&|s: f64| Ok(-s), 0.5, 1.0, Extreme::Min).unwrap();
        assert_eq!((m.sigma_star, m.value), (1.0, -1.0));
    }
}
