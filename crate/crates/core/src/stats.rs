//! Small weighted-statistics helpers shared by the filter, prognosis, calibration
//! and evaluation modules.
//!
//! Every quantile in the crate uses the *lower* convention: the smallest value
//! whose cumulative weight reaches the requested level. This keeps medians of
//! even-sized or two-point sets deterministic.

/// Slack applied when comparing cumulative weights against a level, so that
/// weights that sum to `0.5` in exact arithmetic are not missed by rounding.
const CUMULATIVE_SLACK: f64 = 1e-12;

/// Weighted lower quantile of `values` at `level` in `[0, 1]`.
///
/// Weights need not be normalized. Returns `None` when the input is empty or the
/// total weight is not positive.
pub fn weighted_quantile(values: &[f64], weights: &[f64], level: f64) -> Option<f64> {
    debug_assert_eq!(values.len(), weights.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    weighted_quantile_sorted(values, weights, &order, level)
}

/// Same as [`weighted_quantile`] with a precomputed ascending `order` of indices.
pub fn weighted_quantile_sorted(
    values: &[f64],
    weights: &[f64],
    order: &[usize],
    level: f64,
) -> Option<f64> {
    let total: f64 = weights.iter().sum();
    if order.is_empty() || !(total > 0.0) {
        return None;
    }
    let target = level.clamp(0.0, 1.0) * total;
    let mut cumulative = 0.0;
    for &i in order {
        cumulative += weights[i];
        if weights[i] > 0.0 && cumulative >= target - CUMULATIVE_SLACK * total {
            return Some(values[i]);
        }
    }
    // Rounding left the running sum short of the target; the answer is the
    // largest positively weighted value.
    order
        .iter()
        .rev()
        .find(|&&i| weights[i] > 0.0)
        .map(|&i| values[i])
}

/// Unweighted lower quantile.
pub fn lower_quantile(values: &[f64], level: f64) -> Option<f64> {
    let weights = vec![1.0; values.len()];
    weighted_quantile(values, &weights, level)
}

/// Unweighted lower median.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    lower_quantile(values, 0.5)
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub intercept: f64,
    pub slope: f64,
}

impl Line {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Fits an OLS line. Returns `None` with fewer than two points or when all `x`
/// coincide.
pub fn ols_line(x: &[f64], y: &[f64]) -> Option<Line> {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let x_mean = x.iter().sum::<f64>() / nf;
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - x_mean;
        sxx += dx * dx;
        sxy += dx * (yi - y_mean);
    }
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    Some(Line {
        intercept: y_mean - slope * x_mean,
        slope,
    })
}
