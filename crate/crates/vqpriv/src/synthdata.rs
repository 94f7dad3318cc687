//! Deterministic two-factor corpus generator.
//!
//! Every frame is `content_embedding[label] + alpha * speaker_offset +
//! sigma * noise`: the content factor is what the utility task must keep,
//! the speaker factor is the nuisance the privacy side must remove, and the
//! two are sampled independently so any leakage a probe finds was carried by
//! the representation, not baked into the labels.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

/// Generation parameters. The same spec (seed included) always regenerates
/// the same corpus, so datasets are never persisted except for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub num_speakers: usize,
    pub num_content_classes: usize,
    pub feature_dim: usize,
    pub utterances_per_speaker: usize,
    pub frames_per_utterance: usize,
    /// Scale of the additive per-speaker offset.
    pub speaker_strength: f64,
    /// Scale of the per-frame gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            num_speakers: 40,
            num_content_classes: 20,
            feature_dim: 24,
            utterances_per_speaker: 10,
            frames_per_utterance: 120,
            speaker_strength: 1.0,
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0
            || self.num_content_classes == 0
            || self.feature_dim == 0
            || self.frames_per_utterance == 0
        {
            return Err(Error::config("dataset counts must all be >= 1"));
        }
        if self.utterances_per_speaker < 2 {
            return Err(Error::config(
                "utterances_per_speaker must be >= 2 so enroll/test splits exist",
            ));
        }
        if self.speaker_strength < 0.0 || !self.speaker_strength.is_finite() {
            return Err(Error::config("speaker_strength must be >= 0"));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::config("noise_sigma must be >= 0"));
        }
        Ok(())
    }
}

/// The two speaker cohorts reported separately in the tradeoff report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Group {
    A,
    B,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::A => write!(f, "A"),
            Group::B => write!(f, "B"),
        }
    }
}

impl Group {
    fn parse(s: &str) -> Option<Group> {
        match s {
            "A" => Some(Group::A),
            "B" => Some(Group::B),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerInfo {
    pub id: u32,
    pub group: Group,
}

/// One utterance: `T x F` feature frames with a content label per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub utterance_id: u32,
    pub speaker: u32,
    pub frames: Matrix,
    pub content_labels: Vec<usize>,
}

impl FrameSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }
}

/// A generated corpus: a speaker roster plus utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub speakers: Vec<SpeakerInfo>,
    pub utterances: Vec<FrameSequence>,
}

impl Dataset {
    pub fn group_of(&self, speaker: u32) -> Option<Group> {
        self.speakers.iter().find(|s| s.id == speaker).map(|s| s.group)
    }

    pub fn utterances_of(&self, speaker: u32) -> impl Iterator<Item = &FrameSequence> {
        self.utterances.iter().filter(move |u| u.speaker == speaker)
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(|u| u.num_frames()).sum()
    }

    fn with_utterances(&self, utterances: Vec<FrameSequence>) -> Dataset {
        Dataset {
            speakers: self.speakers.clone(),
            utterances,
        }
    }
}

/// Generates the corpus described by `spec`.
///
/// The content-embedding matrix (`P x F`) and speaker-offset matrix (`S x F`)
/// are drawn once from the seeded stream; label sequences are runs with mean
/// length 3 (each subsequent frame switches to a different class with
/// probability 1/3). Noise draws happen even at `sigma = 0` so the stream
/// layout — and therefore the labels — do not depend on `sigma`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed);
    let p = spec.num_content_classes;
    let f = spec.feature_dim;
    let s = spec.num_speakers;
    let t = spec.frames_per_utterance;

    let content = Matrix::from_vec(p, f, rng.gaussian(p * f)?)?;
    let speaker_offsets = Matrix::from_vec(s, f, rng.gaussian(s * f)?)?;

    let half = s.div_ceil(2);
    let speakers: Vec<SpeakerInfo> = (0..s as u32)
        .map(|id| SpeakerInfo {
            id,
            group: if (id as usize) < half { Group::A } else { Group::B },
        })
        .collect();

    let mut utterances = Vec::with_capacity(s * spec.utterances_per_speaker);
    let mut utterance_id = 0u32;
    for spk in 0..s {
        for _ in 0..spec.utterances_per_speaker {
            let mut labels = Vec::with_capacity(t);
            let mut current = rng.below(p as u64) as usize;
            labels.push(current);
            for _ in 1..t {
                if p > 1 && rng.uniform() < 1.0 / 3.0 {
                    // Switch to a different class, uniform over the rest.
                    let step = 1 + rng.below(p as u64 - 1) as usize;
                    current = (current + step) % p;
                }
                labels.push(current);
            }

            let noise = rng.gaussian(t * f)?;
            let mut frames = Matrix::zeros(t, f);
            for (row, &label) in labels.iter().enumerate() {
                let out = frames.row_mut(row);
                let content_row = content.row(label);
                let speaker_row = speaker_offsets.row(spk);
                for k in 0..f {
                    out[k] = content_row[k]
                        + spec.speaker_strength * speaker_row[k]
                        + spec.noise_sigma * noise[row * f + k];
                }
            }
            utterances.push(FrameSequence {
                utterance_id,
                speaker: spk as u32,
                frames,
                content_labels: labels,
            });
            utterance_id += 1;
        }
    }
    Ok(Dataset {
        speakers,
        utterances,
    })
}

/// Splits each speaker's utterances into an enrollment part meeting
/// `enroll_frames_per_speaker` (whole utterances, stopping once the budget is
/// reached) and a test part holding the remainder. Errors if any speaker
/// cannot meet the budget while keeping at least one test utterance.
pub fn split_enroll_test(
    ds: &Dataset,
    enroll_frames_per_speaker: usize,
) -> Result<(Dataset, Dataset)> {
    let mut enroll = Vec::new();
    let mut test = Vec::new();
    for speaker in &ds.speakers {
        let utts: Vec<&FrameSequence> = ds.utterances_of(speaker.id).collect();
        let total: usize = utts.iter().map(|u| u.num_frames()).sum();
        if total <= enroll_frames_per_speaker {
            return Err(Error::Budget {
                detail: format!(
                    "speaker {} has {} frames, budget {} leaves no test data",
                    speaker.id, total, enroll_frames_per_speaker
                ),
            });
        }
        let mut accumulated = 0;
        let mut cut = 0;
        for (i, u) in utts.iter().enumerate() {
            if accumulated >= enroll_frames_per_speaker {
                break;
            }
            accumulated += u.num_frames();
            cut = i + 1;
        }
        if cut == utts.len() {
            return Err(Error::Budget {
                detail: format!(
                    "speaker {}: enrollment budget {} consumes all {} utterances",
                    speaker.id,
                    enroll_frames_per_speaker,
                    utts.len()
                ),
            });
        }
        for (i, u) in utts.iter().enumerate() {
            if i < cut {
                enroll.push((*u).clone());
            } else {
                test.push((*u).clone());
            }
        }
    }
    Ok((ds.with_utterances(enroll), ds.with_utterances(test)))
}

/// Splits each speaker's utterances by position: the first
/// `train_utterances_per_speaker` go to the first dataset, the rest to the
/// second. Speakers appear in both halves.
pub fn split_utterances(
    ds: &Dataset,
    train_utterances_per_speaker: usize,
) -> Result<(Dataset, Dataset)> {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for speaker in &ds.speakers {
        let utts: Vec<&FrameSequence> = ds.utterances_of(speaker.id).collect();
        if utts.len() <= train_utterances_per_speaker {
            return Err(Error::Budget {
                detail: format!(
                    "speaker {} has {} utterances, cannot hold out past {}",
                    speaker.id,
                    utts.len(),
                    train_utterances_per_speaker
                ),
            });
        }
        for (i, u) in utts.iter().enumerate() {
            if i < train_utterances_per_speaker {
                train.push((*u).clone());
            } else {
                held.push((*u).clone());
            }
        }
    }
    Ok((ds.with_utterances(train), ds.with_utterances(held)))
}

/// Splits the roster itself: the last `eval_speakers` speakers (with all
/// their utterances) form the second dataset. The two halves share no
/// speakers.
pub fn split_speakers(ds: &Dataset, eval_speakers: usize) -> Result<(Dataset, Dataset)> {
    if eval_speakers == 0 || eval_speakers >= ds.speakers.len() {
        return Err(Error::config(format!(
            "eval_speakers must be in [1, {}), got {eval_speakers}",
            ds.speakers.len()
        )));
    }
    let cut = ds.speakers.len() - eval_speakers;
    let first_ids: Vec<u32> = ds.speakers[..cut].iter().map(|s| s.id).collect();
    let mut first = Dataset {
        speakers: ds.speakers[..cut].to_vec(),
        utterances: Vec::new(),
    };
    let mut second = Dataset {
        speakers: ds.speakers[cut..].to_vec(),
        utterances: Vec::new(),
    };
    for u in &ds.utterances {
        if first_ids.contains(&u.speaker) {
            first.utterances.push(u.clone());
        } else {
            second.utterances.push(u.clone());
        }
    }
    Ok((first, second))
}

/// Writes the dataset as CSV with header
/// `utterance_id,speaker_id,group,frame_index,content_label,f0..f{F-1}`.
/// Feature values use the shortest decimal that round-trips, so
/// [`import_csv`] restores them bit-exactly.
pub fn export_csv<W: Write>(ds: &Dataset, out: &mut W) -> Result<()> {
    let dim = ds
        .utterances
        .first()
        .map(|u| u.frames.cols())
        .ok_or(Error::EmptyInput { op: "export_csv" })?;
    write!(out, "utterance_id,speaker_id,group,frame_index,content_label")?;
    for k in 0..dim {
        write!(out, ",f{k}")?;
    }
    writeln!(out)?;
    for u in &ds.utterances {
        let group = ds
            .group_of(u.speaker)
            .ok_or_else(|| Error::Protocol {
                detail: format!("utterance {} references unknown speaker {}", u.utterance_id, u.speaker),
            })?;
        for row in 0..u.num_frames() {
            write!(
                out,
                "{},{},{},{},{}",
                u.utterance_id, u.speaker, group, row, u.content_labels[row]
            )?;
            for &v in u.frames.row(row) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Reads a dataset back from [`export_csv`] output.
pub fn import_csv<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::EmptyInput { op: "import_csv" })?;
    let header = header?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 6 || cols[..5] != ["utterance_id", "speaker_id", "group", "frame_index", "content_label"] {
        return Err(Error::Parse {
            line: 1,
            detail: "unexpected dataset CSV header".into(),
        });
    }
    let dim = cols.len() - 5;

    struct Building {
        speaker: u32,
        group: Group,
        labels: Vec<usize>,
        rows: Vec<Vec<f64>>,
    }
    let mut order: Vec<u32> = Vec::new();
    let mut partial: BTreeMap<u32, Building> = BTreeMap::new();
    for (idx, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 + dim {
            return Err(Error::Parse {
                line: lineno,
                detail: format!("expected {} fields, got {}", 5 + dim, fields.len()),
            });
        }
        let parse_err = |what: &str| Error::Parse {
            line: lineno,
            detail: format!("bad {what} value"),
        };
        let utt: u32 = fields[0].parse().map_err(|_| parse_err("utterance_id"))?;
        let speaker: u32 = fields[1].parse().map_err(|_| parse_err("speaker_id"))?;
        let group = Group::parse(fields[2]).ok_or_else(|| parse_err("group"))?;
        let label: usize = fields[4].parse().map_err(|_| parse_err("content_label"))?;
        let mut row = Vec::with_capacity(dim);
        for raw in &fields[5..] {
            row.push(raw.parse::<f64>().map_err(|_| parse_err("feature"))?);
        }
        let entry = partial.entry(utt).or_insert_with(|| {
            order.push(utt);
            Building {
                speaker,
                group,
                labels: Vec::new(),
                rows: Vec::new(),
            }
        });
        entry.labels.push(label);
        entry.rows.push(row);
    }

    let mut speakers: Vec<SpeakerInfo> = Vec::new();
    let mut utterances = Vec::with_capacity(order.len());
    for utt in order {
        let b = partial.remove(&utt).expect("tracked utterance");
        if !speakers.iter().any(|s| s.id == b.speaker) {
            speakers.push(SpeakerInfo {
                id: b.speaker,
                group: b.group,
            });
        }
        utterances.push(FrameSequence {
            utterance_id: utt,
            speaker: b.speaker,
            frames: Matrix::from_rows(&b.rows)?,
            content_labels: b.labels,
        });
    }
    speakers.sort_by_key(|s| s.id);
    Ok(Dataset {
        speakers,
        utterances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            num_speakers: 4,
            num_content_classes: 5,
            feature_dim: 6,
            utterances_per_speaker: 4,
            frames_per_utterance: 30,
            speaker_strength: 1.0,
            noise_sigma: 0.5,
            seed: 7,
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_datasets() {
        let spec = small_spec();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn no_speaker_no_noise_makes_frames_depend_only_on_label() {
        let spec = DatasetSpec {
            speaker_strength: 0.0,
            noise_sigma: 0.0,
            ..small_spec()
        };
        let ds = generate(&spec).unwrap();
        // Collect one reference frame per label, then insist every frame with
        // that label matches it bit-for-bit across all speakers.
        let mut reference: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for u in &ds.utterances {
            for row in 0..u.num_frames() {
                let label = u.content_labels[row];
                let frame = u.frames.row(row).to_vec();
                match reference.get(&label) {
                    Some(seen) => assert_eq!(*seen, frame, "label {label}"),
                    None => {
                        reference.insert(label, frame);
                    }
                }
            }
        }
    }

    #[test]
    fn strong_speaker_factor_is_recoverable_from_pooled_features() {
        // Nearest-class-mean oracle on mean-pooled raw features: with a
        // dominant speaker offset the verification problem is nearly free.
        let spec = DatasetSpec {
            speaker_strength: 2.0,
            noise_sigma: 0.1,
            num_speakers: 8,
            utterances_per_speaker: 6,
            ..small_spec()
        };
        let ds = generate(&spec).unwrap();
        let pooled = |u: &FrameSequence| -> Vec<f64> {
            let mut m = vec![0.0; u.frames.cols()];
            for r in 0..u.num_frames() {
                for (acc, &v) in m.iter_mut().zip(u.frames.row(r)) {
                    *acc += v;
                }
            }
            m.iter_mut().for_each(|v| *v /= u.num_frames() as f64);
            m
        };
        // Enroll on the first half of each speaker's utterances.
        let mut centroids: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for s in &ds.speakers {
            let utts: Vec<&FrameSequence> = ds.utterances_of(s.id).collect();
            let half = &utts[..3];
            let mut c = vec![0.0; spec.feature_dim];
            for u in half {
                for (acc, v) in c.iter_mut().zip(pooled(u)) {
                    *acc += v / 3.0;
                }
            }
            centroids.insert(s.id, c);
        }
        // Score all (test utterance, speaker) pairs by negative distance.
        let mut target = Vec::new();
        let mut impostor = Vec::new();
        for s in &ds.speakers {
            let utts: Vec<&FrameSequence> = ds.utterances_of(s.id).collect();
            for u in &utts[3..] {
                let e = pooled(u);
                for (id, c) in &centroids {
                    let d: f64 = e.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    if *id == s.id {
                        target.push(-d);
                    } else {
                        impostor.push(-d);
                    }
                }
            }
        }
        let eer = crate::evaluation::compute_eer(&target, &impostor).unwrap();
        assert!(eer < 0.05, "nearest-class-mean EER {eer}");
    }

    #[test]
    fn content_marginal_is_independent_of_speaker() {
        // Chi-square over the speaker x label contingency table on > 10^4
        // frames. Labels arrive in runs of mean length 3, so frames within a
        // run are not independent draws; counting one observation per run
        // keeps the statistic comparable to the chi-square null.
        // df = (4-1)(5-1) = 12, 99% critical value 26.217.
        let spec = DatasetSpec {
            utterances_per_speaker: 5,
            frames_per_utterance: 1500,
            ..small_spec()
        };
        let ds = generate(&spec).unwrap();
        assert!(ds.total_frames() >= 10_000);
        let s = spec.num_speakers;
        let p = spec.num_content_classes;
        let mut table = vec![vec![0.0f64; p]; s];
        let mut total = 0.0;
        for u in &ds.utterances {
            let mut prev = usize::MAX;
            for &l in &u.content_labels {
                if l != prev {
                    table[u.speaker as usize][l] += 1.0;
                    total += 1.0;
                    prev = l;
                }
            }
        }
        let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<f64> = (0..p).map(|c| table.iter().map(|r| r[c]).sum()).collect();
        let mut chi2 = 0.0;
        for i in 0..s {
            for c in 0..p {
                let expected = row_sums[i] * col_sums[c] / total;
                chi2 += (table[i][c] - expected).powi(2) / expected;
            }
        }
        assert!(chi2 < 26.217, "chi-square {chi2} exceeds 99% critical value");
    }

    #[test]
    fn speaker_strength_monotonically_separates_speakers() {
        let mut distances = Vec::new();
        for &alpha in &[0.0, 0.5, 1.0, 2.0] {
            let spec = DatasetSpec {
                speaker_strength: alpha,
                ..small_spec()
            };
            let ds = generate(&spec).unwrap();
            // Mean pooled feature per speaker.
            let mut means: Vec<Vec<f64>> = Vec::new();
            for s in &ds.speakers {
                let mut m = vec![0.0; spec.feature_dim];
                let mut n = 0.0;
                for u in ds.utterances_of(s.id) {
                    for r in 0..u.num_frames() {
                        for (acc, &v) in m.iter_mut().zip(u.frames.row(r)) {
                            *acc += v;
                        }
                        n += 1.0;
                    }
                }
                m.iter_mut().for_each(|v| *v /= n);
                means.push(m);
            }
            let mut avg = 0.0;
            let mut pairs = 0.0;
            for i in 0..means.len() {
                for j in i + 1..means.len() {
                    let d: f64 = means[i]
                        .iter()
                        .zip(&means[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    avg += d.sqrt();
                    pairs += 1.0;
                }
            }
            distances.push(avg / pairs);
        }
        for w in distances.windows(2) {
            assert!(w[1] > w[0], "distances not increasing: {distances:?}");
        }
    }

    #[test]
    fn enroll_test_split_is_disjoint_and_budgeted() {
        let ds = generate(&small_spec()).unwrap();
        let budget = 30; // exactly one utterance
        let (enroll, test) = split_enroll_test(&ds, budget).unwrap();
        for s in &ds.speakers {
            let e: Vec<u32> = enroll
                .utterances_of(s.id)
                .map(|u| u.utterance_id)
                .collect();
            let t: Vec<u32> = test.utterances_of(s.id).map(|u| u.utterance_id).collect();
            assert_eq!(e.len(), 1);
            assert_eq!(t.len(), 3);
            assert!(e.iter().all(|id| !t.contains(id)));

            // Counting oracle: frames on the enroll side meet the budget and
            // overshoot by less than one utterance.
            let frames: usize = enroll
                .utterances_of(s.id)
                .map(|u| u.num_frames())
                .sum();
            assert!(frames >= budget && frames < budget + 30);
        }
        assert_eq!(
            enroll.total_frames() + test.total_frames(),
            ds.total_frames()
        );
    }

    #[test]
    fn budget_exceeding_data_is_an_error() {
        let ds = generate(&small_spec()).unwrap();
        assert!(matches!(
            split_enroll_test(&ds, 4 * 30),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn speaker_split_is_disjoint() {
        let ds = generate(&small_spec()).unwrap();
        let (train, eval) = split_speakers(&ds, 2).unwrap();
        let train_ids: Vec<u32> = train.speakers.iter().map(|s| s.id).collect();
        let eval_ids: Vec<u32> = eval.speakers.iter().map(|s| s.id).collect();
        assert!(train_ids.iter().all(|id| !eval_ids.contains(id)));
        assert!(train.utterances.iter().all(|u| train_ids.contains(&u.speaker)));
        assert!(eval.utterances.iter().all(|u| eval_ids.contains(&u.speaker)));
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let ds = generate(&DatasetSpec {
            num_speakers: 3,
            utterances_per_speaker: 2,
            frames_per_utterance: 8,
            ..small_spec()
        })
        .unwrap();
        let mut buf = Vec::new();
        export_csv(&ds, &mut buf).unwrap();
        let restored = import_csv(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(ds, restored);
    }
}
