//! Tail-onset selection from the empirical mean excess function.
//!
//! For a GPD tail the mean excess `e(v) = E[W - v | W > v]` is linear in
//! `v`. Candidates are the 50%..95% sample quantiles; the onset is the
//! smallest candidate from which the mean-excess points are consistent with
//! a straight line.

use crate::error::{Error, Result};
use crate::evt::gpd::MIN_EXCEEDANCES;

pub const MIN_SAMPLES: usize = 100;
/// R² that qualifies a mean-excess segment as linear.
pub const MIN_R_SQUARED: f64 = 0.98;
/// Residual band, in standard errors of each mean-excess point, that also
/// qualifies a segment; a flat MEF has R² near 0 yet is exactly linear.
pub const NOISE_BAND: f64 = 3.0;
/// Mean-excess points with fewer exceedances are too noisy to include.
const MIN_POINT_EXCEEDANCES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MefPoint {
    pub u: f64,
    pub mean_excess: f64,
    pub std_error: f64,
    pub exceedances: usize,
}

/// `sorted[floor(p (n - 1))]`.
pub fn lower_quantile(sorted: &[f64], p: f64) -> f64 {
    let idx = (p * (sorted.len() - 1) as f64).floor() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Empirical mean excess at each candidate quantile (50%..95%, step 1%).
pub fn mean_excess_points(sorted: &[f64]) -> Vec<MefPoint> {
    let mut out: Vec<MefPoint> = Vec::new();
    for pct in 50..=95 {
        let u = lower_quantile(sorted, pct as f64 / 100.0);
        if out.last().is_some_and(|p| p.u == u) {
            continue;
        }
        let start = sorted.partition_point(|&w| w <= u);
        let ex = &sorted[start..];
        if ex.is_empty() {
            continue;
        }
        let n = ex.len() as f64;
        let mean = ex.iter().map(|w| w - u).sum::<f64>() / n;
        let var = if ex.len() > 1 {
            ex.iter().map(|w| (w - u - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        out.push(MefPoint {
            u,
            mean_excess: mean,
            std_error: (var / n).sqrt(),
            exceedances: ex.len(),
        });
    }
    out
}

fn is_linear(points: &[MefPoint]) -> bool {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.u).sum::<f64>() / n;
    let my = points.iter().map(|p| p.mean_excess).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.u - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.u - mx) * (p.mean_excess - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.mean_excess - my).powi(2)).sum();
    if sxx == 0.0 {
        return false;
    }
    let slope = sxy / sxx;
    let residual = |p: &MefPoint| p.mean_excess - (my + slope * (p.u - mx));
    let sse: f64 = points.iter().map(|p| residual(p).powi(2)).sum();
    if syy > 0.0 && 1.0 - sse / syy >= MIN_R_SQUARED {
        return true;
    }
    points
        .iter()
        .all(|p| residual(p).abs() <= NOISE_BAND * p.std_error)
}

/// Smallest candidate onset with a linear mean-excess function above it.
///
/// Falls back to the 90th percentile, or to the largest candidate that
/// still leaves enough exceedances for a fit.
pub fn estimate_tail_onset(samples: &[f64]) -> Result<f64> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples, at least {MIN_SAMPLES} needed for tail-onset estimation",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::InsufficientData("all samples are equal".into()));
    }
    let points: Vec<MefPoint> = mean_excess_points(&sorted)
        .into_iter()
        .filter(|p| p.exceedances >= MIN_POINT_EXCEEDANCES)
        .collect();
    for (i, p) in points.iter().enumerate() {
        if p.exceedances < MIN_EXCEEDANCES {
            break;
        }
        let rest = &points[i..];
        if rest.len() >= 3 && is_linear(rest) {
            return Ok(p.u);
        }
    }
    let p90 = lower_quantile(&sorted, 0.9);
    if sorted.iter().filter(|&&w| w > p90).count() >= MIN_EXCEEDANCES {
        return Ok(p90);
    }
    points
        .iter()
        .rev()
        .find(|p| p.exceedances >= MIN_EXCEEDANCES)
        .map(|p| p.u)
        .ok_or_else(|| {
            Error::InsufficientData(format!("no candidate onset leaves {MIN_EXCEEDANCES} exceedances"))
        })
}
