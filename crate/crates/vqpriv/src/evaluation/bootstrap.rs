//! Percentile bootstrap over resampled evaluation units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// A point estimate with a percentile-bootstrap confidence interval.
/// The interval always brackets the point value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWithCI {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub num_resamples: usize,
}

/// Percentile bootstrap.
///
/// The metric is a function of unit indices: the point estimate uses the
/// identity index vector `[0, 1, .., n-1]`, and resample `b` uses `n` draws
/// with replacement from the child stream `rng.child("bootstrap", b)` — one
/// index per `below(n)` call. Because each resample owns its stream, the
/// interval is identical whether resamples run serially or in parallel, and
/// independent re-implementations that follow the same seed policy reproduce
/// it exactly.
///
/// The interval is the `[alpha/2, 1 - alpha/2]` percentile range of the `B`
/// resampled statistics (linear interpolation between order statistics),
/// widened if necessary to include the point estimate.
pub fn bootstrap_ci<F>(
    num_units: usize,
    mut metric: F,
    resamples: usize,
    alpha: f64,
    rng: &RngStream,
) -> Result<MetricWithCI>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    if num_units == 0 {
        return Err(Error::EmptyInput { op: "bootstrap_ci" });
    }
    if resamples == 0 {
        return Err(Error::config("bootstrap resamples must be >= 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!(
            "bootstrap alpha must be in (0, 1), got {alpha}"
        )));
    }

    let identity: Vec<usize> = (0..num_units).collect();
    let value = metric(&identity)?;

    let mut stats = Vec::with_capacity(resamples);
    let mut indices = vec![0usize; num_units];
    for b in 0..resamples {
        let mut stream = rng.child("bootstrap", b as u64);
        for slot in indices.iter_mut() {
            *slot = stream.below(num_units as u64) as usize;
        }
        stats.push(metric(&indices)?);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite bootstrap statistics"));

    let lo = percentile_sorted(&stats, alpha / 2.0);
    let hi = percentile_sorted(&stats, 1.0 - alpha / 2.0);
    Ok(MetricWithCI {
        value,
        ci_low: lo.min(value),
        ci_high: hi.max(value),
        num_resamples: resamples,
    })
}

/// Linear-interpolation percentile of a sorted sample: rank `q * (n - 1)`,
/// interpolating between the two bracketing order statistics.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}
