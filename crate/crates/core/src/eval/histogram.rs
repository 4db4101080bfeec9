use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::ErrorSets;

pub const HISTOGRAM_BINS: usize = 50;

/// Normalized histograms of match and non-match errors on shared bins.
/// Densities integrate to one over the bin range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub edges: Vec<f64>,
    pub match_density: Vec<f64>,
    pub nonmatch_density: Vec<f64>,
}

fn density(values: &[f64], lo: f64, width: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[b] += 1;
    }
    counts
        .into_iter()
        .map(|c| c as f64 / (values.len() as f64 * width))
        .collect()
}

impl ErrorHistogram {
    pub fn new(errors: &ErrorSets, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Contract("histogram needs at least one bin".into()));
        }
        if errors.s_match.is_empty() || errors.s_nonmatch.is_empty() {
            return Err(Error::Contract("histogram of an empty error set".into()));
        }
        let all = errors.s_match.iter().chain(&errors.s_nonmatch);
        let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Numeric("non-finite reconstruction error".into()));
        }
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        Ok(Self {
            edges,
            match_density: density(&errors.s_match, lo, width, bins),
            nonmatch_density: density(&errors.s_nonmatch, lo, width, bins),
        })
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    /// Shared area of the two densities, in `[0, 1]`.
    pub fn overlap_coefficient(&self) -> f64 {
        let w = self.bin_width();
        self.match_density
            .iter()
            .zip(&self.nonmatch_density)
            .map(|(a, b)| a.min(*b) * w)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,match_density,nonmatch_density\n");
        for i in 0..self.match_density.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.edges[i],
                self.edges[i + 1],
                self.match_density[i],
                self.nonmatch_density[i]
            );
        }
        out
    }

    /// Overlaid bar chart: match errors blue, non-match errors orange.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 360.0, 40.0);
        let plot_w = w - 2.0 * pad;
        let plot_h = h - 2.0 * pad;
        let peak = self
            .match_density
            .iter()
            .chain(&self.nonmatch_density)
            .fold(0.0f64, |m, &v| m.max(v))
            .max(f64::MIN_POSITIVE);
        let bins = self.match_density.len();
        let bar_w = plot_w / bins as f64;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        for (densities, colour) in [(&self.match_density, "#1f77b4"), (&self.nonmatch_density, "#ff7f0e")] {
            for (i, &d) in densities.iter().enumerate() {
                let bh = d / peak * plot_h;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{colour}" fill-opacity="0.5"/>"#,
                    pad + i as f64 * bar_w,
                    pad + plot_h - bh,
                    bar_w,
                    bh
                );
            }
        }
        let base = pad + plot_h;
        let _ = writeln!(s, r#"<line x1="{pad}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, pad + plot_w);
        let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{base}" stroke="black"/>"#);
        let lo = self.edges[0];
        let hi = self.edges[bins];
        let _ = writeln!(s, r#"<text x="{pad}" y="{}" font-size="12">{lo:.3}</text>"#, base + 16.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{hi:.3}</text>"#,
            pad + plot_w,
            base + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">reconstruction error</text>"#,
            pad + plot_w / 2.0,
            base + 32.0
        );
        let _ = writeln!(s, r##"<text x="{}" y="24" font-size="12" fill="#1f77b4">match</text>"##, pad + 8.0);
        let _ = writeln!(s, r##"<text x="{}" y="24" font-size="12" fill="#ff7f0e">non-match</text>"##, pad + 64.0);
        s.push_str("</svg>\n");
        s
    }
}
