//! Property tests for the library's core invariants.

use proptest::prelude::*;

use vqpriv::evaluation::{compute_eer, eer_with_ci, score_trials, ScoredTrials};
use vqpriv::numerics::{Matrix, RngStream};
use vqpriv::synthdata::Group;
use vqpriv::vq::{
    codebook_loss, codebook_perplexity, commitment_loss, quantize, squared_distances,
    ste_backward, BottleneckSequence, Codebook, CodebookOptions,
};

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantize_satisfies_argmin_certificate(
        dim in 1usize..8,
        num_protos in 1usize..12,
        num_frames in 1usize..24,
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed);
        let protos = Matrix::from_vec(num_protos, dim, rng.gaussian(num_protos * dim).unwrap()).unwrap();
        let cb = Codebook::from_prototypes(protos, CodebookOptions::default()).unwrap();
        let h = BottleneckSequence::new(
            Matrix::from_vec(num_frames, dim, rng.gaussian(num_frames * dim).unwrap()).unwrap(),
        ).unwrap();
        let q = quantize(&h, &cb).unwrap();

        for j in 0..num_frames {
            prop_assert!(q.indices[j] < num_protos);
            prop_assert_eq!(q.quantized.row(j), cb.prototype(q.indices[j]));
            // Exhaustive scan: the chosen distance is minimal.
            let chosen: f64 = h.frame(j).iter().zip(q.quantized.row(j))
                .map(|(a, b)| (a - b) * (a - b)).sum();
            for i in 0..num_protos {
                let other: f64 = h.frame(j).iter().zip(cb.prototype(i))
                    .map(|(a, b)| (a - b) * (a - b)).sum();
                prop_assert!(chosen <= other + 1e-9,
                    "frame {} chose {} (d={}) but {} has d={}", j, q.indices[j], chosen, i, other);
            }
        }
        // The two auxiliary losses agree on identical inputs.
        prop_assert_eq!(q.codebook_loss, q.commitment_loss);
        let direct = codebook_loss(&h, &q.quantized).unwrap();
        prop_assert!((q.codebook_loss - direct).abs() < 1e-12);
        prop_assert_eq!(direct, commitment_loss(&h, &q.quantized).unwrap());
    }

    #[test]
    fn expanded_distances_match_naive(
        dim in 1usize..8,
        num_protos in 1usize..10,
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed);
        let protos = Matrix::from_vec(num_protos, dim, rng.gaussian(num_protos * dim).unwrap()).unwrap();
        let cb = Codebook::from_prototypes(protos, CodebookOptions::default()).unwrap();
        let frame = rng.gaussian(dim).unwrap();
        let fast = squared_distances(&frame, &cb);
        for (i, &d) in fast.iter().enumerate() {
            let naive: f64 = frame.iter().zip(cb.prototype(i))
                .map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!((d - naive).abs() < 1e-9);
        }
    }

    #[test]
    fn quantizing_prototype_rows_is_idempotent(
        dim in 1usize..6,
        num_protos in 1usize..10,
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed);
        let protos = Matrix::from_vec(num_protos, dim, rng.gaussian(num_protos * dim).unwrap()).unwrap();
        let cb = Codebook::from_prototypes(protos, CodebookOptions::default()).unwrap();
        let once = quantize(
            &BottleneckSequence::new(cb.prototypes().clone()).unwrap(),
            &cb,
        ).unwrap();
        let twice = quantize(
            &BottleneckSequence::new(once.quantized.clone()).unwrap(),
            &cb,
        ).unwrap();
        prop_assert_eq!(&once.quantized, cb.prototypes());
        prop_assert_eq!(&twice.quantized, &once.quantized);
        prop_assert_eq!(twice.indices, once.indices);
    }

    #[test]
    fn ste_is_identity_and_idempotent(rows in 1usize..10, cols in 1usize..10, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let g = Matrix::from_vec(rows, cols, rng.gaussian(rows * cols).unwrap()).unwrap();
        let once = ste_backward(&g);
        prop_assert_eq!(&once, &g);
        prop_assert_eq!(ste_backward(&once), g);
    }

    #[test]
    fn perplexity_stays_in_range(
        num_protos in 1usize..32,
        indices in proptest::collection::vec(0usize..32, 1..200),
    ) {
        let indices: Vec<usize> = indices.into_iter().map(|i| i % num_protos).collect();
        let p = codebook_perplexity(&indices, num_protos).unwrap();
        prop_assert!((1.0..=num_protos as f64).contains(&p), "perplexity {}", p);
    }

    #[test]
    fn eer_is_a_rate_and_order_invariant(
        targets in finite_vec(25),
        impostors in finite_vec(40),
    ) {
        let eer = compute_eer(&targets, &impostors).unwrap();
        prop_assert!((0.0..=1.0).contains(&eer));

        // Strictly increasing affine transform preserves the EER exactly.
        let t2: Vec<f64> = targets.iter().map(|x| 3.5 * x + 2.0).collect();
        let i2: Vec<f64> = impostors.iter().map(|x| 3.5 * x + 2.0).collect();
        prop_assert!((compute_eer(&t2, &i2).unwrap() - eer).abs() < 1e-12);

        // Sign-flipped role swap is symmetric.
        let nt: Vec<f64> = impostors.iter().map(|x| -x).collect();
        let ni: Vec<f64> = targets.iter().map(|x| -x).collect();
        prop_assert!((compute_eer(&nt, &ni).unwrap() - eer).abs() < 1e-12);
    }

    #[test]
    fn rng_replay_is_bit_identical(seed in any::<u64>()) {
        let run = |seed: u64| {
            let mut r = RngStream::new(seed);
            let mut out = r.gaussian(9).unwrap();
            out.push(r.uniform());
            out.push(r.below(1000) as f64);
            out
        };
        prop_assert_eq!(run(seed), run(seed));
    }
}

/// The overall EER reported with a bootstrap interval is computed from the
/// pooled trial list, not averaged from per-group EERs.
#[test]
fn overall_eer_is_pooled_not_group_averaged() {
    use vqpriv::evaluation::Trial;
    let mut rng = RngStream::new(77);
    let mut trials = Vec::new();
    let mut scores = Vec::new();
    // Unbalanced groups: A has 30 trials, B has 300.
    for (group, n, shift) in [(Group::A, 30usize, 1.5), (Group::B, 300usize, 0.2)] {
        for k in 0..n {
            let is_target = k % 3 == 0;
            trials.push(Trial {
                test_index: 0,
                claimed_speaker: 0,
                group,
                is_target,
            });
            let base = rng.gaussian(1).unwrap()[0];
            scores.push(if is_target { base + shift } else { base });
        }
    }
    let scored = ScoredTrials {
        trials,
        scores,
        zero_embedding_warnings: 0,
    };
    let m = eer_with_ci(&scored, 50, 0.05, &RngStream::new(3)).unwrap();
    let (t, i) = scored.partition(|_| true);
    let pooled = compute_eer(&t, &i).unwrap();
    assert_eq!(m.value, pooled);

    let (ta, ia) = scored.partition(|t| t.group == Group::A);
    let (tb, ib) = scored.partition(|t| t.group == Group::B);
    let avg = 0.5 * (compute_eer(&ta, &ia).unwrap() + compute_eer(&tb, &ib).unwrap());
    assert!(
        (pooled - avg).abs() > 1e-6,
        "constructed case should separate pooled ({pooled}) from averaged ({avg})"
    );
}

/// Counting law: every (test utterance, enrolled speaker) pair is one trial,
/// with exactly one target per test utterance.
#[test]
fn trial_counts_follow_the_grid_law() {
    use vqpriv::error::Result;
    use vqpriv::evaluation::{build_trials, BottleneckModel};
    use vqpriv::synthdata::{generate, split_enroll_test, DatasetSpec, FrameSequence};

    struct RawFrames;
    impl BottleneckModel for RawFrames {
        fn transmitted_frames(&self, seq: &FrameSequence) -> Result<Matrix> {
            Ok(seq.frames.clone())
        }
        fn content_predictions(&self, seq: &FrameSequence) -> Result<(Vec<usize>, Vec<usize>)> {
            Ok((seq.content_labels.clone(), seq.content_labels.clone()))
        }
    }

    let ds = generate(&DatasetSpec {
        num_speakers: 5,
        num_content_classes: 4,
        feature_dim: 6,
        utterances_per_speaker: 4,
        frames_per_utterance: 20,
        speaker_strength: 1.0,
        noise_sigma: 0.4,
        seed: 123,
    })
    .unwrap();
    let (enroll, test) = split_enroll_test(&ds, 20).unwrap();
    let ts = build_trials(&RawFrames, &enroll, &test).unwrap();

    let speakers = ts.enrolled.len();
    let utterances = ts.tests.len();
    assert_eq!(speakers, 5);
    assert_eq!(utterances, 5 * 3);
    assert_eq!(ts.trials.len(), utterances * speakers);
    assert_eq!(ts.num_targets(), utterances);
    assert_eq!(ts.num_impostors(), utterances * (speakers - 1));

    // Every test utterance appears exactly `speakers` times.
    let mut per_test = vec![0usize; utterances];
    for t in &ts.trials {
        per_test[t.test_index] += 1;
    }
    assert!(per_test.iter().all(|&c| c == speakers));

    // Independent pair enumeration of target/impostor counts.
    let mut expect_targets = 0;
    let mut expect_impostors = 0;
    for t in &ts.tests {
        for (id, _, _) in &ts.enrolled {
            if *id == t.true_speaker {
                expect_targets += 1;
            } else {
                expect_impostors += 1;
            }
        }
    }
    assert_eq!(ts.num_targets(), expect_targets);
    assert_eq!(ts.num_impostors(), expect_impostors);

    let scored = score_trials(&ts);
    assert!(scored.scores.iter().all(|s| (-1.0..=1.0).contains(s)));
}
