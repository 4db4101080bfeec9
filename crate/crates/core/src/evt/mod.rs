//! Extreme-value modeling of reconstruction errors.
//!
//! The upper tail of the match errors and the lower tail of the non-match
//! errors are each modeled as a Generalized Pareto distribution over a
//! mean-excess-selected onset. The operating threshold `tau*` minimizes
//! `(1 - p_u) P(r_m > tau) + p_u P(r_nm < tau)` on a uniform grid.

mod gpd;
mod onset;
mod threshold;

pub use gpd::{
    fit_exceedances, fit_gpd, gpd_cdf, gpd_log_likelihood, gpd_moments, gpd_pdf, GpdFit, TailSide,
    MIN_EXCEEDANCES,
};
pub use onset::{
    estimate_tail_onset, lower_quantile, mean_excess_points, MefPoint, MIN_R_SQUARED, MIN_SAMPLES,
    NOISE_BAND,
};
pub use threshold::{
    argmin_on_grid, compute_threshold, naive_threshold, search_interval, threshold_grid,
    ThresholdModel, GRID_POINTS,
};
