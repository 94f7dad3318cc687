//! Equal error rate of a verification score set.

use crate::error::{Error, Result};

/// Computes the equal error rate: the operating point where the
/// false-rejection rate equals the false-acceptance rate.
///
/// A trial is accepted when its score is `>= t`. Sweeping `t` over the
/// pooled score values (plus "reject everything") yields a staircase of
/// `(FAR, FRR)` operating points; the crossing of `FRR - FAR` is located
/// on that staircase and resolved by linear interpolation between the two
/// bracketing points. The result depends only on score *order*, so any
/// strictly increasing transform of all scores leaves it unchanged.
pub fn compute_eer(target_scores: &[f64], impostor_scores: &[f64]) -> Result<f64> {
    if target_scores.is_empty() || impostor_scores.is_empty() {
        return Err(Error::EmptyInput { op: "compute_eer" });
    }

    let mut targets = target_scores.to_vec();
    let mut impostors = impostor_scores.to_vec();
    targets.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    impostors.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));

    let mut thresholds: Vec<f64> = targets.iter().chain(impostors.iter()).cloned().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    thresholds.dedup();

    let nt = targets.len() as f64;
    let ni = impostors.len() as f64;

    // count of elements < t in a sorted slice
    let below = |sorted: &[f64], t: f64| sorted.partition_point(|&x| x < t) as f64;

    // Walk the operating points in threshold order; FRR rises from 0 while
    // FAR falls from 1, so the sign of (FRR - FAR) changes exactly once.
    let mut prev_far = 1.0;
    let mut prev_frr = 0.0;
    for k in 0..=thresholds.len() {
        let (far, frr) = if k < thresholds.len() {
            let t = thresholds[k];
            (
                (ni - below(&impostors, t)) / ni,
                below(&targets, t) / nt,
            )
        } else {
            // Threshold above every score: reject all.
            (0.0, 1.0)
        };
        if frr >= far {
            if frr == far {
                return Ok(far);
            }
            // Interpolate on the segment from (prev_far, prev_frr).
            let denom = (frr - prev_frr) - (far - prev_far);
            let lambda = (prev_far - prev_frr) / denom;
            return Ok(prev_far + lambda * (far - prev_far));
        }
        prev_far = far;
        prev_frr = frr;
    }
    unreachable!("the reject-all point always has FRR >= FAR");
}
