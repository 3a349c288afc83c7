//! Posterior summaries from weighted samples and from marginal densities.

use alloc::vec::Vec;

use crate::latent::Marginal;
use crate::math::{compensated_sum, sqrt};

/// Mean, standard deviation and central 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Summary {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Weighted quantile with each sample's mass centred on its value and
/// linear interpolation between neighbouring centres.
///
/// `order` must sort `values` ascending; `weights` must be normalized.
fn sorted_quantile(values: &[f64], weights: &[f64], order: &[usize], p: f64) -> f64 {
    let mut cum = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for &i in order {
        let centre = cum + 0.5 * weights[i];
        cum += weights[i];
        if weights[i] <= 0.0 {
            continue;
        }
        if centre >= p {
            return match prev {
                Some((pc, pv)) if centre > pc => pv + (values[i] - pv) * (p - pc) / (centre - pc),
                _ => values[i],
            };
        }
        prev = Some((centre, values[i]));
    }
    prev.map_or(f64::NAN, |(_, v)| v)
}

fn sort_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
    let total = compensated_sum(weights.iter().copied());
    let w: Vec<f64> = weights.iter().map(|v| v / total).collect();
    sorted_quantile(values, &w, &sort_order(values), p)
}

/// Weighted moments and 2.5%/97.5% quantiles; weights need not be normalized.
pub fn weighted_summary(values: &[f64], weights: &[f64]) -> Summary {
    let total = compensated_sum(weights.iter().copied());
    let w: Vec<f64> = weights.iter().map(|v| v / total).collect();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo == hi {
        return Summary { mean: lo, sd: 0.0, lower: lo, upper: lo };
    }
    let mean = compensated_sum(values.iter().zip(&w).map(|(x, w)| x * w)).clamp(lo, hi);
    let var = compensated_sum(values.iter().zip(&w).map(|(x, w)| w * (x - mean) * (x - mean)));
    let order = sort_order(values);
    Summary {
        mean,
        sd: sqrt(var.max(0.0)),
        lower: sorted_quantile(values, &w, &order, 0.025),
        upper: sorted_quantile(values, &w, &order, 0.975),
    }
}

/// Equal-weight summary of draws.
pub fn sample_summary(values: &[f64]) -> Summary {
    let w = alloc::vec![1.0; values.len()];
    weighted_summary(values, &w)
}

/// Summary of a marginal density; intervals come from its CDF.
pub fn marginal_summary(m: &Marginal) -> Summary {
    match m {
        Marginal::Grid(g) => {
            let (mean, sd) = g.moments();
            Summary { mean, sd, lower: g.quantile(0.025), upper: g.quantile(0.975) }
        }
        _ => {
            let (mean, sd) = (m.mean(), m.sd());
            Summary { mean, sd, lower: invert_cdf(m, 0.025), upper: invert_cdf(m, 0.975) }
        }
    }
}

fn invert_cdf(m: &Marginal, p: f64) -> f64 {
    let (mut lo, mut hi) = m.support(1e-12);
    if lo == hi {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if m.cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}
