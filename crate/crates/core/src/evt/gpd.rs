use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of strict exceedances required for a tail fit.
pub const MIN_EXCEEDANCES: usize = 30;

const MAX_ITERATIONS: usize = 200;
const TOLERANCE: f64 = 1e-9;

/// Which error set a fit describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSide {
    /// Upper tail of the match errors.
    RightTailOfMatch,
    /// Upper tail of the negated non-match errors, i.e. their lower tail.
    RightTailOfNegatedNonmatch,
}

/// Generalized Pareto model of the exceedances `w - u` over the onset `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub u: f64,
    pub zeta: f64,
    pub mu: f64,
    pub exceed_frac: f64,
    pub side: TailSide,
}

impl GpdFit {
    /// Probability that a sample exceeds `x`, for `x >= u`.
    pub fn tail_survival(&self, x: f64) -> f64 {
        let g = gpd_cdf(x - self.u, self.zeta, self.mu).unwrap_or(1.0);
        self.exceed_frac * (1.0 - g)
    }
}

/// GPD distribution function `1 - (1 + zeta w / mu)^(-1/zeta)`, with the
/// exponential limit at `zeta = 0`.
///
/// `w <= 0` gives 0; points past the upper support end (`zeta < 0`) give 1.
pub fn gpd_cdf(w: f64, zeta: f64, mu: f64) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() || !zeta.is_finite() {
        return Err(Error::Contract(format!("invalid GPD parameters zeta={zeta}, mu={mu}")));
    }
    if w.is_nan() {
        return Err(Error::Numeric("GPD evaluated at NaN".into()));
    }
    if w <= 0.0 {
        return Ok(0.0);
    }
    let t = zeta * w / mu;
    if zeta == 0.0 {
        return Ok(-(-w / mu).exp_m1());
    }
    if t <= -1.0 {
        return Ok(1.0);
    }
    // ln_1p keeps small |zeta| continuous with the exponential case
    let cdf = -(-(t.ln_1p() / zeta)).exp_m1();
    Ok(cdf.clamp(0.0, 1.0))
}

/// GPD density, used by tests and diagnostics.
pub fn gpd_pdf(w: f64, zeta: f64, mu: f64) -> f64 {
    if w < 0.0 {
        return 0.0;
    }
    if zeta == 0.0 {
        return (-w / mu).exp() / mu;
    }
    let t = 1.0 + zeta * w / mu;
    if t <= 0.0 {
        return 0.0;
    }
    (-(1.0 / zeta + 1.0) * t.ln()).exp() / mu
}

/// Log-likelihood of exceedances `y` (all `>= 0`); `-inf` outside the support.
pub fn gpd_log_likelihood(y: &[f64], zeta: f64, mu: f64) -> f64 {
    if !(mu > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = y.len() as f64;
    if zeta == 0.0 {
        return -n * mu.ln() - y.iter().sum::<f64>() / mu;
    }
    let mut acc = 0.0;
    for &v in y {
        let t = zeta * v / mu;
        if t <= -1.0 {
            return f64::NEG_INFINITY;
        }
        acc += t.ln_1p();
    }
    -n * mu.ln() - (1.0 + 1.0 / zeta) * acc
}

/// Profile over `theta = zeta / mu`: for fixed `theta` the likelihood is
/// maximized by `zeta = mean(ln(1 + theta y))`, `mu = zeta / theta`.
#[derive(Debug, Clone, Copy)]
struct Profile {
    theta: f64,
    zeta: f64,
    mu: f64,
    loglik: f64,
}

fn profile(y: &[f64], mean: f64, theta: f64) -> Option<Profile> {
    let n = y.len() as f64;
    if theta == 0.0 {
        return Some(Profile {
            theta,
            zeta: 0.0,
            mu: mean,
            loglik: -n * mean.ln() - n,
        });
    }
    let mut acc = 0.0;
    for &v in y {
        let t = theta * v;
        if t <= -1.0 {
            return None;
        }
        acc += t.ln_1p();
    }
    let zeta = acc / n;
    let mu = zeta / theta;
    // zeta < -1 has an unbounded likelihood; excluded from the search
    if zeta < -1.0 || !(mu > 0.0) || !mu.is_finite() {
        return None;
    }
    Some(Profile {
        theta,
        zeta,
        mu,
        loglik: -n * mu.ln() - n * (1.0 + zeta),
    })
}

/// Method-of-moments estimate `(zeta, mu)` from exceedances.
pub fn gpd_moments(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    if var <= 0.0 {
        return (0.0, mean);
    }
    let r = mean * mean / var;
    (0.5 * (1.0 - r), 0.5 * mean * (r + 1.0))
}

/// Maximum-likelihood GPD fit to the exceedances of `samples` over `u`.
pub fn fit_gpd(samples: &[f64], u: f64) -> Result<GpdFit> {
    if samples.iter().any(|s| !s.is_finite()) || !u.is_finite() {
        return Err(Error::Numeric("non-finite value in tail fit".into()));
    }
    let y: Vec<f64> = samples.iter().filter(|&&w| w > u).map(|&w| w - u).collect();
    if y.len() < MIN_EXCEEDANCES {
        return Err(Error::InsufficientTail {
            exceedances: y.len(),
            required: MIN_EXCEEDANCES,
        });
    }
    let (zeta, mu) = fit_exceedances(&y)?;
    Ok(GpdFit {
        u,
        zeta,
        mu,
        exceed_frac: y.len() as f64 / samples.len() as f64,
        side: TailSide::RightTailOfMatch,
    })
}

/// MLE on positive exceedances: coarse scan over `theta`, then golden-section
/// refinement inside the bracket around the best scan point.
pub fn fit_exceedances(y: &[f64]) -> Result<(f64, f64)> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let y_max = y.iter().fold(0.0f64, |m, &v| m.max(v));
    if !(mean > 0.0) {
        return Err(Error::InsufficientData("all exceedances are zero".into()));
    }

    let lower = -1.0 / y_max;
    let mut thetas = vec![0.0];
    for j in 1..60 {
        thetas.push(lower * j as f64 / 60.0);
    }
    for e in 3..=9 {
        thetas.push(lower * (1.0 - 10f64.powi(-e)));
    }
    for j in 0..=80 {
        thetas.push(10f64.powf(-4.0 + 0.1 * j as f64) / mean);
    }
    let (z0, m0) = gpd_moments(y);
    if m0 > 0.0 {
        thetas.push(z0 / m0);
    }
    thetas.retain(|t| t.is_finite() && *t > lower);
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();

    let scanned: Vec<Option<Profile>> = thetas.iter().map(|&t| profile(y, mean, t)).collect();
    let (best_i, best) = scanned
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| (i, p)))
        .max_by(|a, b| a.1.loglik.total_cmp(&b.1.loglik))
        .ok_or_else(|| Error::Fit {
            message: "no admissible parameters".into(),
            best_zeta: f64::NAN,
            best_mu: f64::NAN,
        })?;
    if best_i + 1 == thetas.len() && best.theta > 0.0 {
        return Err(Error::Fit {
            message: "likelihood still increasing at the heaviest tail probed".into(),
            best_zeta: best.zeta,
            best_mu: best.mu,
        });
    }

    let mut a = if best_i == 0 { thetas[0] } else { thetas[best_i - 1] };
    let mut b = thetas[(best_i + 1).min(thetas.len() - 1)];
    let mut best = best;
    let eval = |t: f64| profile(y, mean, t).map_or(f64::NEG_INFINITY, |p| p.loglik);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    let scale = 1.0 / y_max;
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        if (b - a).abs() <= TOLERANCE * (a.abs() + b.abs()).max(scale) {
            converged = true;
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        }
    }
    for t in [c, d, 0.5 * (a + b)] {
        if let Some(p) = profile(y, mean, t) {
            if p.loglik > best.loglik {
                best = p;
            }
        }
    }
    if !converged {
        return Err(Error::Fit {
            message: format!("no convergence in {MAX_ITERATIONS} iterations"),
            best_zeta: best.zeta,
            best_mu: best.mu,
        });
    }
    Ok((best.zeta, best.mu))
}
