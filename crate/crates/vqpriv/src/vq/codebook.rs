//! The learnable prototype dictionary and its EMA maintenance.

use serde::{Deserialize, Serialize};

use super::BottleneckSequence;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

/// Snapshot format version written by [`Codebook::to_json`].
pub const CODEBOOK_FORMAT_VERSION: u32 = 1;

/// EMA constants for dictionary maintenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookOptions {
    /// Decay `gamma` of the moving averages; 1.0 freezes the dictionary.
    pub decay: f64,
    /// Laplace smoothing `epsilon` applied to the counts before division.
    pub smoothing: f64,
}

impl Default for CodebookOptions {
    fn default() -> Self {
        CodebookOptions {
            decay: 0.99,
            smoothing: 1e-5,
        }
    }
}

impl CodebookOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.decay) || !self.decay.is_finite() {
            return Err(Error::config(format!(
                "codebook decay must be in [0, 1], got {}",
                self.decay
            )));
        }
        // NaN fails the finiteness test, so the plain comparison is safe.
        if self.smoothing <= 0.0 || !self.smoothing.is_finite() {
            return Err(Error::config(format!(
                "codebook smoothing must be > 0, got {}",
                self.smoothing
            )));
        }
        Ok(())
    }
}

/// The dictionary of `V` prototype vectors in `R^D` with EMA accumulators.
///
/// Prototypes are maintained by [`Codebook::ema_update`] — a per-batch
/// moving average of the frames assigned to each prototype — and are never
/// touched by the gradient optimizer. After every update each prototype
/// equals its EMA sum divided by its Laplace-smoothed EMA count.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    prototypes: Matrix,
    ema_counts: Vec<f64>,
    ema_sums: Matrix,
    options: CodebookOptions,
}

impl Codebook {
    /// Initializes a codebook from `num_prototypes` distinct rows of
    /// `samples`, drawn without replacement. EMA counts start at 1 and EMA
    /// sums at the chosen prototypes, so the smoothed quotient reproduces
    /// the prototypes themselves.
    pub fn from_samples(
        samples: &Matrix,
        num_prototypes: usize,
        options: CodebookOptions,
        rng: &mut RngStream,
    ) -> Result<Self> {
        options.validate()?;
        if num_prototypes == 0 {
            return Err(Error::config("codebook size must be >= 1"));
        }
        if samples.rows() < num_prototypes {
            return Err(Error::InsufficientSamples {
                requested: num_prototypes,
                available: samples.rows(),
            });
        }
        // Partial Fisher-Yates over row indices: the first V slots end up
        // holding a uniform sample without replacement.
        let mut order: Vec<usize> = (0..samples.rows()).collect();
        for i in 0..num_prototypes {
            let j = i + rng.below((order.len() - i) as u64) as usize;
            order.swap(i, j);
        }
        let mut prototypes = Matrix::zeros(num_prototypes, samples.cols());
        for (slot, &row) in order[..num_prototypes].iter().enumerate() {
            prototypes.set_row(slot, samples.row(row));
        }
        let ema_sums = prototypes.clone();
        Ok(Codebook {
            prototypes,
            ema_counts: vec![1.0; num_prototypes],
            ema_sums,
            options,
        })
    }

    /// Builds a codebook directly from explicit prototypes (tests, snapshots).
    pub fn from_prototypes(prototypes: Matrix, options: CodebookOptions) -> Result<Self> {
        options.validate()?;
        if prototypes.rows() == 0 {
            return Err(Error::config("codebook size must be >= 1"));
        }
        let ema_sums = prototypes.clone();
        let v = prototypes.rows();
        Ok(Codebook {
            prototypes,
            ema_counts: vec![1.0; v],
            ema_sums,
            options,
        })
    }

    pub fn size(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn prototype(&self, i: usize) -> &[f64] {
        self.prototypes.row(i)
    }

    pub fn ema_counts(&self) -> &[f64] {
        &self.ema_counts
    }

    pub fn ema_sums(&self) -> &Matrix {
        &self.ema_sums
    }

    pub fn options(&self) -> CodebookOptions {
        self.options
    }

    /// One EMA step over a batch of frames and their prototype assignments:
    ///
    /// ```text
    /// N_i <- gamma * N_i + (1 - gamma) * n_i
    /// m_i <- gamma * m_i + (1 - gamma) * sum_{j : idx_j = i} h_j
    /// e_i <- m_i / N~_i,   N~_i = (N_i + eps) / (sum_k N_k + V*eps) * sum_k N_k
    /// ```
    ///
    /// With `gamma = 1` the dictionary is frozen and nothing changes.
    pub fn ema_update(&mut self, batch: &BottleneckSequence, indices: &[usize]) -> Result<()> {
        self.options.validate()?;
        if batch.dim() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "ema_update",
                detail: format!("batch dim {} vs codebook dim {}", batch.dim(), self.dim()),
            });
        }
        if indices.len() != batch.num_frames() {
            return Err(Error::ShapeMismatch {
                op: "ema_update",
                detail: format!(
                    "{} indices for {} frames",
                    indices.len(),
                    batch.num_frames()
                ),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.size()) {
            return Err(Error::config(format!(
                "assignment index {bad} out of range for codebook of size {}",
                self.size()
            )));
        }
        let gamma = self.options.decay;
        if gamma == 1.0 {
            return Ok(());
        }

        let v = self.size();
        let d = self.dim();
        let mut batch_counts = vec![0.0f64; v];
        let mut batch_sums = Matrix::zeros(v, d);
        for (j, &idx) in indices.iter().enumerate() {
            batch_counts[idx] += 1.0;
            let row = batch_sums.row_mut(idx);
            for (acc, &x) in row.iter_mut().zip(batch.frame(j)) {
                *acc += x;
            }
        }

        for (i, (count, &batch_count)) in self
            .ema_counts
            .iter_mut()
            .zip(&batch_counts)
            .enumerate()
        {
            *count = gamma * *count + (1.0 - gamma) * batch_count;
            let sum_row = self.ema_sums.row_mut(i);
            for (m, &s) in sum_row.iter_mut().zip(batch_sums.row(i)) {
                *m = gamma * *m + (1.0 - gamma) * s;
            }
        }

        let eps = self.options.smoothing;
        let total: f64 = self.ema_counts.iter().sum();
        for i in 0..v {
            let smoothed = (self.ema_counts[i] + eps) / (total + v as f64 * eps) * total;
            for c in 0..d {
                self.prototypes.set(i, c, self.ema_sums.get(i, c) / smoothed);
            }
        }
        if !self.prototypes.is_finite() {
            return Err(Error::NonFinite { op: "ema_update" });
        }
        Ok(())
    }

    /// Ablation path: applies a gradient step directly to the prototypes
    /// (used only when EMA maintenance is switched off in the train config).
    pub fn apply_prototype_gradient(&mut self, grad: &Matrix, learning_rate: f64) -> Result<()> {
        self.prototypes.scaled_add(grad, -learning_rate)
    }

    /// Replaces every prototype that `usage` reports as unselected for at
    /// least `stale_threshold` consecutive batches with a random frame of the
    /// current batch, resetting its EMA state (`N = 1`, `m =` new prototype).
    /// Returns how many prototypes were restarted.
    pub fn restart_dead_prototypes(
        &mut self,
        usage: &mut UsageTracker,
        batch: &BottleneckSequence,
        rng: &mut RngStream,
        stale_threshold: u32,
    ) -> Result<usize> {
        debug_assert!(stale_threshold >= 1, "stale_threshold must be >= 1");
        if batch.dim() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "restart_dead_prototypes",
                detail: format!("batch dim {} vs codebook dim {}", batch.dim(), self.dim()),
            });
        }
        if usage.misses.len() != self.size() {
            return Err(Error::ShapeMismatch {
                op: "restart_dead_prototypes",
                detail: format!(
                    "usage tracker covers {} prototypes, codebook has {}",
                    usage.misses.len(),
                    self.size()
                ),
            });
        }
        let mut restarted = 0;
        for i in 0..self.size() {
            if usage.misses[i] >= stale_threshold {
                let frame = batch.frame(rng.below(batch.num_frames() as u64) as usize);
                self.prototypes.set_row(i, frame);
                self.ema_sums.set_row(i, frame);
                self.ema_counts[i] = 1.0;
                usage.misses[i] = 0;
                restarted += 1;
            }
        }
        Ok(restarted)
    }

    /// Serializes to a versioned JSON snapshot; doubles round-trip losslessly.
    pub fn to_json(&self) -> String {
        let snap = CodebookSnapshot {
            format_version: CODEBOOK_FORMAT_VERSION,
            num_prototypes: self.size(),
            dim: self.dim(),
            decay: self.options.decay,
            smoothing: self.options.smoothing,
            prototypes: self.prototypes.data().to_vec(),
            ema_counts: self.ema_counts.clone(),
            ema_sums: self.ema_sums.data().to_vec(),
        };
        serde_json::to_string(&snap).expect("codebook snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: CodebookSnapshot = serde_json::from_str(text)
            .map_err(|e| Error::Parse {
                line: e.line(),
                detail: format!("codebook snapshot: {e}"),
            })?;
        snap.into_codebook()
    }
}

/// On-disk form of a [`Codebook`].
#[derive(Debug, Serialize, Deserialize)]
pub struct CodebookSnapshot {
    pub format_version: u32,
    pub num_prototypes: usize,
    pub dim: usize,
    pub decay: f64,
    pub smoothing: f64,
    pub prototypes: Vec<f64>,
    pub ema_counts: Vec<f64>,
    pub ema_sums: Vec<f64>,
}

impl CodebookSnapshot {
    pub fn into_codebook(self) -> Result<Codebook> {
        if self.format_version != CODEBOOK_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported codebook format version {}",
                self.format_version
            )));
        }
        let options = CodebookOptions {
            decay: self.decay,
            smoothing: self.smoothing,
        };
        options.validate()?;
        if self.ema_counts.len() != self.num_prototypes {
            return Err(Error::config("codebook snapshot: count length mismatch"));
        }
        let prototypes = Matrix::from_vec(self.num_prototypes, self.dim, self.prototypes)?;
        let ema_sums = Matrix::from_vec(self.num_prototypes, self.dim, self.ema_sums)?;
        Ok(Codebook {
            prototypes,
            ema_counts: self.ema_counts,
            ema_sums,
            options,
        })
    }
}

/// Tracks, per prototype, how many consecutive batches went by without the
/// prototype being selected. Training-loop state, not dictionary state, so
/// it lives outside [`Codebook`] and is not serialized with it.
#[derive(Debug, Clone)]
pub struct UsageTracker {
    misses: Vec<u32>,
}

impl UsageTracker {
    pub fn new(num_prototypes: usize) -> Self {
        UsageTracker {
            misses: vec![0; num_prototypes],
        }
    }

    /// Records one batch of assignments: selected prototypes reset to zero
    /// misses, unselected ones accrue one more.
    pub fn record_batch(&mut self, indices: &[usize]) {
        let mut seen = vec![false; self.misses.len()];
        for &i in indices {
            if i < seen.len() {
                seen[i] = true;
            }
        }
        for (miss, &s) in self.misses.iter_mut().zip(seen.iter()) {
            if s {
                *miss = 0;
            } else {
                *miss += 1;
            }
        }
    }

    pub fn misses(&self, prototype: usize) -> u32 {
        self.misses[prototype]
    }
}

#[cfg(test)]
mod tests {
    use super::super::quantize::quantize;
    use super::*;

    fn seq(rows: &[Vec<f64>]) -> BottleneckSequence {
        BottleneckSequence::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn opts(decay: f64) -> CodebookOptions {
        CodebookOptions {
            decay,
            smoothing: 1e-5,
        }
    }

    #[test]
    fn init_with_n_equal_v_is_a_permutation() {
        let samples = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![2.0, 0.0],
            vec![3.0, 0.0],
            vec![4.0, 0.0],
        ])
        .unwrap();
        let mut rng = RngStream::new(3);
        let cb = Codebook::from_samples(&samples, 4, CodebookOptions::default(), &mut rng).unwrap();
        let mut firsts: Vec<f64> = (0..4).map(|i| cb.prototype(i)[0]).collect();
        firsts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(firsts, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn init_is_deterministic_for_fixed_seed() {
        let mut rng_data = RngStream::new(11);
        let samples = Matrix::from_vec(100, 3, rng_data.gaussian(300).unwrap()).unwrap();
        let a = Codebook::from_samples(
            &samples,
            8,
            CodebookOptions::default(),
            &mut RngStream::new(5),
        )
        .unwrap();
        let b = Codebook::from_samples(
            &samples,
            8,
            CodebookOptions::default(),
            &mut RngStream::new(5),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_samples_distinct_member_rows() {
        let mut rng_data = RngStream::new(21);
        let samples = Matrix::from_vec(1000, 4, rng_data.gaussian(4000).unwrap()).unwrap();
        let mut rng = RngStream::new(6);
        let cb =
            Codebook::from_samples(&samples, 16, CodebookOptions::default(), &mut rng).unwrap();

        // Membership scan: every prototype appears among the samples.
        let mut source_rows = Vec::new();
        for i in 0..16 {
            let proto = cb.prototype(i);
            let found = (0..samples.rows()).find(|&r| samples.row(r) == proto);
            assert!(found.is_some(), "prototype {i} not found in samples");
            source_rows.push(found.unwrap());
        }
        source_rows.sort_unstable();
        source_rows.dedup();
        assert_eq!(source_rows.len(), 16, "duplicate source rows");
    }

    #[test]
    fn init_with_too_few_samples_errors() {
        let samples = Matrix::zeros(3, 2);
        let mut rng = RngStream::new(0);
        assert!(matches!(
            Codebook::from_samples(&samples, 4, CodebookOptions::default(), &mut rng),
            Err(Error::InsufficientSamples {
                requested: 4,
                available: 3
            })
        ));
    }

    #[test]
    fn ema_with_full_decay_is_a_no_op() {
        let protos = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let mut cb = Codebook::from_prototypes(protos, opts(1.0)).unwrap();
        let before = cb.clone();
        let batch = seq(&[vec![5.0, 5.0], vec![-3.0, 2.0]]);
        cb.ema_update(&batch, &[0, 1]).unwrap();
        assert_eq!(cb, before);
    }

    #[test]
    fn ema_with_zero_decay_recovers_batch_mean() {
        let protos = Matrix::from_rows(&[vec![10.0, -10.0]]).unwrap();
        let mut cb = Codebook::from_prototypes(protos, opts(0.0)).unwrap();
        let batch = seq(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![2.0, 4.0]]);
        cb.ema_update(&batch, &[0, 0, 0]).unwrap();
        let mean = [2.0, 4.0];
        for (got, want) in cb.prototype(0).iter().zip(mean.iter()) {
            assert!(
                (got - want).abs() < 1e-3,
                "prototype {got} vs batch mean {want}"
            );
        }
    }

    #[test]
    fn two_updates_match_closed_form_recursion() {
        let gamma = 0.9;
        let protos = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let mut cb = Codebook::from_prototypes(
            protos,
            CodebookOptions {
                decay: gamma,
                smoothing: 1e-5,
            },
        )
        .unwrap();
        let b1 = seq(&[vec![2.0, 0.0], vec![4.0, 2.0]]);
        let b2 = seq(&[vec![-1.0, 3.0]]);
        cb.ema_update(&b1, &[0, 0]).unwrap();
        cb.ema_update(&b2, &[0]).unwrap();

        // Closed form: unroll N and m over the two batches by hand.
        let n0 = 1.0;
        let m0 = [1.0, -1.0];
        let n1 = gamma * n0 + (1.0 - gamma) * 2.0;
        let m1 = [
            gamma * m0[0] + (1.0 - gamma) * 6.0,
            gamma * m0[1] + (1.0 - gamma) * 2.0,
        ];
        let n2 = gamma * n1 + (1.0 - gamma) * 1.0;
        let m2 = [
            gamma * m1[0] - (1.0 - gamma) * 1.0,
            gamma * m1[1] + (1.0 - gamma) * 3.0,
        ];
        let eps = 1e-5;
        let total = n2;
        let smoothed = (n2 + eps) / (total + 1.0 * eps) * total;
        let expect = [m2[0] / smoothed, m2[1] / smoothed];

        assert!((cb.ema_counts()[0] - n2).abs() < 1e-12);
        for (got, want) in cb.prototype(0).iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn prototypes_equal_smoothed_quotient_after_update() {
        let mut rng = RngStream::new(13);
        let samples = Matrix::from_vec(32, 3, rng.gaussian(96).unwrap()).unwrap();
        let mut cb =
            Codebook::from_samples(&samples, 4, CodebookOptions::default(), &mut rng).unwrap();
        let batch = BottleneckSequence::new(
            Matrix::from_vec(20, 3, rng.gaussian(60).unwrap()).unwrap(),
        )
        .unwrap();
        let indices: Vec<usize> = (0..20).map(|_| rng.below(4) as usize).collect();
        cb.ema_update(&batch, &indices).unwrap();

        let eps = cb.options().smoothing;
        let total: f64 = cb.ema_counts().iter().sum();
        for i in 0..4 {
            let smoothed = (cb.ema_counts()[i] + eps) / (total + 4.0 * eps) * total;
            for c in 0..3 {
                let expect = cb.ema_sums().get(i, c) / smoothed;
                assert!((cb.prototype(i)[c] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ema_converges_to_cluster_centroids() {
        // Static 3-cluster dataset; with V = 3 and stable assignments the
        // dictionary must settle on the smoothed cell centroids, the same
        // fixed point a k-means run would reach.
        let centers = [[-4.0, 0.0], [0.0, 4.0], [4.0, -2.0]];
        let mut rng = RngStream::new(41);
        let mut rows = Vec::new();
        for center in &centers {
            for _ in 0..30 {
                let jitter = rng.gaussian(2).unwrap();
                rows.push(vec![
                    center[0] + 0.2 * jitter[0],
                    center[1] + 0.2 * jitter[1],
                ]);
            }
        }
        let data = seq(&rows);
        let protos = Matrix::from_rows(&[
            vec![-3.0, 0.5],
            vec![0.5, 3.0],
            vec![3.0, -1.5],
        ])
        .unwrap();
        let mut cb = Codebook::from_prototypes(protos, opts(0.9)).unwrap();

        let mut last_indices = Vec::new();
        for _ in 0..200 {
            let q = quantize(&data, &cb).unwrap();
            cb.ema_update(&data, &q.indices).unwrap();
            last_indices = q.indices;
        }

        // True centroid of each prototype's Voronoi cell.
        for i in 0..3 {
            let members: Vec<usize> = last_indices
                .iter()
                .enumerate()
                .filter(|(_, &idx)| idx == i)
                .map(|(j, _)| j)
                .collect();
            assert!(!members.is_empty(), "cluster {i} is empty");
            let mut centroid = [0.0, 0.0];
            for &j in &members {
                centroid[0] += data.frame(j)[0];
                centroid[1] += data.frame(j)[1];
            }
            centroid[0] /= members.len() as f64;
            centroid[1] /= members.len() as f64;
            for (got, want) in cb.prototype(i).iter().zip(centroid.iter()) {
                assert!((got - want).abs() < 1e-3, "prototype {i}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn restart_leaves_live_prototypes_alone() {
        let protos = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let mut cb = Codebook::from_prototypes(protos, opts(0.99)).unwrap();
        let mut usage = UsageTracker::new(2);
        let batch = seq(&[vec![0.1, 0.1], vec![0.9, 0.9]]);
        for _ in 0..100 {
            usage.record_batch(&[0, 1]);
        }
        let before = cb.clone();
        let n = cb
            .restart_dead_prototypes(&mut usage, &batch, &mut RngStream::new(1), 50)
            .unwrap();
        assert_eq!(n, 0);
        assert_eq!(cb, before);
    }

    #[test]
    fn restart_replaces_stale_prototype_with_batch_frame() {
        let protos = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![100.0, 100.0], // never selected
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        ])
        .unwrap();
        let mut cb = Codebook::from_prototypes(protos, opts(0.99)).unwrap();
        let mut usage = UsageTracker::new(4);
        let batch = seq(&[vec![0.2, 0.1], vec![0.8, 0.7], vec![0.4, 0.6]]);
        for _ in 0..50 {
            usage.record_batch(&[0, 2, 3]);
        }
        let n = cb
            .restart_dead_prototypes(&mut usage, &batch, &mut RngStream::new(9), 50)
            .unwrap();
        assert_eq!(n, 1);
        let replaced = cb.prototype(1);
        let found = (0..batch.num_frames()).any(|j| batch.frame(j) == replaced);
        assert!(found, "replacement must come from the batch");
        assert_eq!(cb.ema_counts()[1], 1.0);
        assert_eq!(usage.misses(1), 0);

        // The batch that seeded the restart must select the new prototype.
        let q = quantize(&batch, &cb).unwrap();
        assert!(q.indices.contains(&1), "restarted prototype unused: {:?}", q.indices);
    }

    #[test]
    fn snapshot_round_trip_is_lossless() {
        let mut rng = RngStream::new(17);
        let samples = Matrix::from_vec(40, 5, rng.gaussian(200).unwrap()).unwrap();
        let mut cb =
            Codebook::from_samples(&samples, 8, CodebookOptions::default(), &mut rng).unwrap();
        let batch = BottleneckSequence::new(
            Matrix::from_vec(30, 5, rng.gaussian(150).unwrap()).unwrap(),
        )
        .unwrap();
        let indices: Vec<usize> = (0..30).map(|_| rng.below(8) as usize).collect();
        cb.ema_update(&batch, &indices).unwrap();

        let restored = Codebook::from_json(&cb.to_json()).unwrap();
        assert_eq!(cb, restored);
    }

    #[test]
    fn invalid_decay_is_config_error() {
        let protos = Matrix::from_rows(&[vec![0.0]]).unwrap();
        assert!(matches!(
            Codebook::from_prototypes(
                protos,
                CodebookOptions {
                    decay: 1.5,
                    smoothing: 1e-5
                }
            ),
            Err(Error::Config { .. })
        ));
    }
}
