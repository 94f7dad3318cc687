//! Vector quantization of bottleneck frames against a learnable codebook:
//! nearest-prototype assignment, the codebook and commitment losses,
//! straight-through gradients, EMA dictionary maintenance, and usage
//! diagnostics.

mod codebook;
mod quantize;

pub use codebook::{Codebook, CodebookOptions, CodebookSnapshot, UsageTracker};
pub use quantize::{
    codebook_grad, codebook_loss, commitment_grad, commitment_loss, quantize, squared_distances,
    ste_backward, QuantizationResult,
};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A sequence of bottleneck frames: `J` rows of dimension `D`.
///
/// Producers subsample along time, so `J` is smaller than the input length
/// whenever the subsample factor exceeds one; consumers only rely on `J >= 1`
/// and finite entries, both enforced here.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckSequence {
    frames: Matrix,
}

impl BottleneckSequence {
    pub fn new(frames: Matrix) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::EmptyInput {
                op: "BottleneckSequence::new",
            });
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite {
                op: "BottleneckSequence::new",
            });
        }
        Ok(BottleneckSequence { frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn frame(&self, j: usize) -> &[f64] {
        self.frames.row(j)
    }

    /// Stacks several sequences of equal dimension into one (used to pool
    /// EMA statistics over a batch and to concatenate enrollment data).
    pub fn concat(parts: &[&BottleneckSequence]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::EmptyInput {
                op: "BottleneckSequence::concat",
            });
        }
        let dim = parts[0].dim();
        let total: usize = parts.iter().map(|p| p.num_frames()).sum();
        let mut out = Matrix::zeros(total, dim);
        let mut row = 0;
        for p in parts {
            if p.dim() != dim {
                return Err(Error::ShapeMismatch {
                    op: "BottleneckSequence::concat",
                    detail: format!("dim {} vs {}", p.dim(), dim),
                });
            }
            for j in 0..p.num_frames() {
                out.set_row(row, p.frame(j));
                row += 1;
            }
        }
        BottleneckSequence::new(out)
    }
}

/// Perplexity of the empirical prototype-usage distribution: `exp(H)` of the
/// index histogram, clamped to the theoretical range `[1, V]` to absorb
/// floating-point rounding at the boundaries.
pub fn codebook_perplexity(indices: &[usize], num_prototypes: usize) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyInput {
            op: "codebook_perplexity",
        });
    }
    let mut counts = vec![0usize; num_prototypes];
    for &i in indices {
        counts[i] += 1;
    }
    histogram_perplexity(&counts)
}

/// [`codebook_perplexity`] from pre-counted usage (one slot per prototype).
pub fn histogram_perplexity(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyInput {
            op: "histogram_perplexity",
        });
    }
    let total = total as f64;
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp().clamp(1.0, counts.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn perplexity_uniform_usage_is_v() {
        let indices: Vec<usize> = (0..8).flat_map(|i| std::iter::repeat_n(i, 10)).collect();
        let p = codebook_perplexity(&indices, 8).unwrap();
        assert!((p - 8.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn perplexity_single_prototype_is_one() {
        let p = codebook_perplexity(&[3; 50], 8).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn perplexity_matches_direct_entropy_oracle() {
        let mut rng = RngStream::new(77);
        let indices: Vec<usize> = (0..500).map(|_| rng.below(16) as usize).collect();
        let p = codebook_perplexity(&indices, 16).unwrap();

        // Direct recomputation from the definition.
        let mut hist = [0f64; 16];
        for &i in &indices {
            hist[i] += 1.0;
        }
        let n = indices.len() as f64;
        let mut h = 0.0;
        for &c in &hist {
            if c > 0.0 {
                h -= (c / n) * (c / n).ln();
            }
        }
        assert!((p - h.exp()).abs() < 1e-12);
    }

    #[test]
    fn perplexity_empty_is_error() {
        assert!(matches!(
            codebook_perplexity(&[], 4),
            Err(Error::EmptyInput { .. })
        ));
    }

    #[test]
    fn concat_stacks_frames_in_order() {
        let a = BottleneckSequence::new(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
        let b =
            BottleneckSequence::new(Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap())
                .unwrap();
        let c = BottleneckSequence::concat(&[&a, &b]).unwrap();
        assert_eq!(c.num_frames(), 3);
        assert_eq!(c.frame(2), &[5.0, 6.0]);
    }
}
