use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evt::gpd::{fit_gpd, GpdFit, TailSide};
use crate::evt::onset::estimate_tail_onset;
use crate::train::ErrorSets;

/// Number of evenly spaced candidates in the threshold line search.
pub const GRID_POINTS: usize = 1001;

/// Operating threshold together with everything needed to re-evaluate the
/// error probabilities it was chosen from.
///
/// The sorted error sets are kept so the below-onset parts of both tail
/// probabilities can be evaluated empirically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub fit_match: GpdFit,
    pub fit_nonmatch: GpdFit,
    pub p_u: f64,
    pub tau_star: f64,
    pub search_lo: f64,
    pub search_hi: f64,
    pub match_errors: Vec<f64>,
    pub nonmatch_errors: Vec<f64>,
}

impl ThresholdModel {
    /// `P(r_m > tau)`: GPD tail above the match onset, empirical below it.
    pub fn prob_match_error_above(&self, tau: f64) -> f64 {
        if tau >= self.fit_match.u {
            self.fit_match.tail_survival(tau)
        } else {
            let s = &self.match_errors;
            (s.len() - s.partition_point(|&w| w <= tau)) as f64 / s.len() as f64
        }
    }

    /// `P(r_nm < tau)`: GPD tail of the negated errors beyond their onset,
    /// empirical otherwise.
    pub fn prob_nonmatch_error_below(&self, tau: f64) -> f64 {
        if -tau >= self.fit_nonmatch.u {
            self.fit_nonmatch.tail_survival(-tau)
        } else {
            let s = &self.nonmatch_errors;
            s.partition_point(|&w| w < tau) as f64 / s.len() as f64
        }
    }

    /// `(1 - p_u) P(r_m > tau) + p_u P(r_nm < tau)`.
    pub fn error_probability(&self, tau: f64, p_u: f64) -> f64 {
        (1.0 - p_u) * self.prob_match_error_above(tau) + p_u * self.prob_nonmatch_error_below(tau)
    }

    /// Line-search grid over the overlap of the two error ranges.
    pub fn grid(&self) -> Vec<f64> {
        threshold_grid(self.search_lo, self.search_hi)
    }

    /// Sorted error sets back as [`ErrorSets`].
    pub fn error_sets(&self) -> ErrorSets {
        ErrorSets {
            s_match: self.match_errors.clone(),
            s_nonmatch: self.nonmatch_errors.clone(),
        }
    }
}

pub fn threshold_grid(lo: f64, hi: f64) -> Vec<f64> {
    if lo == hi {
        return vec![lo];
    }
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS)
        .map(|i| if i == GRID_POINTS - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// Search interval `[max of minima, min of maxima]` and whether the two
/// ranges overlap. Without overlap the returned bounds are the range ends
/// enclosing the gap.
pub fn search_interval(s_match: &[f64], s_nonmatch: &[f64]) -> (f64, f64, bool) {
    let (min_m, max_m) = min_max(s_match);
    let (min_nm, max_nm) = min_max(s_nonmatch);
    let lo = min_m.max(min_nm);
    let hi = max_m.min(max_nm);
    if lo <= hi {
        (lo, hi, true)
    } else {
        (hi, lo, false)
    }
}

fn min_max(s: &[f64]) -> (f64, f64) {
    s.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

/// Index of the grid minimum. Ties go to the smallest `tau`, except at
/// `p_u = 0` where rejection is never rewarded and the largest tied `tau`
/// is taken.
pub fn argmin_on_grid(values: &[f64], p_u: f64) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        let better = if p_u == 0.0 { v <= values[best] } else { v < values[best] };
        if better {
            best = i;
        }
    }
    best
}

fn check_sets(errors: &ErrorSets, p_u: f64) -> Result<()> {
    if errors.s_match.is_empty() || errors.s_nonmatch.is_empty() {
        return Err(Error::Contract("match and non-match error sets must be non-empty".into()));
    }
    if !(0.0..=1.0).contains(&p_u) {
        return Err(Error::Contract(format!("p_u {p_u} outside [0, 1]")));
    }
    if errors
        .s_match
        .iter()
        .chain(&errors.s_nonmatch)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numeric("non-finite reconstruction error".into()));
    }
    Ok(())
}

/// Fits both tails and picks the threshold minimizing the prior-weighted
/// error probability over the search grid.
pub fn compute_threshold(errors: &ErrorSets, p_u: f64) -> Result<ThresholdModel> {
    check_sets(errors, p_u)?;
    let mut match_errors = errors.s_match.clone();
    match_errors.sort_by(f64::total_cmp);
    let mut nonmatch_errors = errors.s_nonmatch.clone();
    nonmatch_errors.sort_by(f64::total_cmp);

    let u_m = estimate_tail_onset(&match_errors)?;
    let fit_match = fit_gpd(&match_errors, u_m)?;
    let negated: Vec<f64> = nonmatch_errors.iter().map(|v| -v).collect();
    let u_nm = estimate_tail_onset(&negated)?;
    let fit_nonmatch = GpdFit {
        side: TailSide::RightTailOfNegatedNonmatch,
        ..fit_gpd(&negated, u_nm)?
    };

    let (lo, hi, overlap) = search_interval(&match_errors, &nonmatch_errors);
    let mut model = ThresholdModel {
        fit_match,
        fit_nonmatch,
        p_u,
        tau_star: 0.5 * (lo + hi),
        search_lo: lo,
        search_hi: hi,
        match_errors,
        nonmatch_errors,
    };
    if overlap {
        let grid = model.grid();
        let values: Vec<f64> = grid.iter().map(|&t| model.error_probability(t, p_u)).collect();
        model.tau_star = grid[argmin_on_grid(&values, p_u)];
    }
    Ok(model)
}

/// Threshold from raw error counts on the same grid, without tail models.
pub fn naive_threshold(errors: &ErrorSets, p_u: f64) -> Result<f64> {
    check_sets(errors, p_u)?;
    let mut m = errors.s_match.clone();
    m.sort_by(f64::total_cmp);
    let mut nm = errors.s_nonmatch.clone();
    nm.sort_by(f64::total_cmp);
    let (lo, hi, overlap) = search_interval(&m, &nm);
    if !overlap {
        return Ok(0.5 * (lo + hi));
    }
    let grid = threshold_grid(lo, hi);
    let values: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let above = (m.len() - m.partition_point(|&w| w <= t)) as f64;
            let below = nm.partition_point(|&w| w < t) as f64;
            (1.0 - p_u) * above + p_u * below
        })
        .collect();
    Ok(grid[argmin_on_grid(&values, p_u)])
}
