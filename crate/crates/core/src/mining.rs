//! Matching-task dataset generation.
//!
//! Every image's ground-truth report yields one positive pair. Negatives come
//! in two kinds, both derived from the 14-class clinical labels: a random
//! mismatch drawn uniformly from reports whose binary presence vector
//! differs, and a hard negative whose presence vector is as close as possible
//! without being identical (smallest nonzero Manhattan distance, ties broken
//! by ascending report id).

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusBundle, LabelVector, LABEL_CLASSES};

/// RNG stream reserved for the final dataset shuffle; per-image sampling uses
/// streams `0..n_images`.
const SHUFFLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("report {id:?} has no label vector")]
    MissingLabels { id: String },
    #[error("no eligible negative for image {image_id:?}: every other report shares its presence vector")]
    NoEligibleNegative { image_id: String },
    #[error("invalid mining config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    RandomMismatch,
    Hard,
}

/// One image/report training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub image_id: String,
    pub report_id: String,
    pub label: PairLabel,
    pub negative_kind: Option<NegativeKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub seed: u64,
    pub negatives_per_image: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            negatives_per_image: 1,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MiningError> {
        if self.negatives_per_image == 0 {
            return Err(MiningError::InvalidConfig(
                "negatives_per_image must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Binary presence vector of a label vector: 1 where the class is positive.
pub fn presence_vector(labels: &LabelVector) -> [u8; LABEL_CLASSES] {
    labels.presence()
}

/// Manhattan distance between the binary presence vectors of two label
/// vectors. Zero exactly when the presence vectors are equal.
pub fn manhattan(a: &LabelVector, b: &LabelVector) -> u32 {
    let pa = a.presence();
    let pb = b.presence();
    pa.iter()
        .zip(pb.iter())
        .map(|(&x, &y)| (i32::from(x) - i32::from(y)).unsigned_abs())
        .sum()
}

/// Presence vector packed into the low 14 bits; distance is a popcount.
fn presence_bits(labels: &LabelVector) -> u16 {
    labels
        .presence()
        .iter()
        .enumerate()
        .fold(0u16, |bits, (i, &p)| bits | (u16::from(p) << i))
}

fn label_bits(bundle: &CorpusBundle) -> Result<Vec<u16>, MiningError> {
    bundle
        .reports()
        .iter()
        .map(|r| {
            r.labels
                .as_ref()
                .map(presence_bits)
                .ok_or_else(|| MiningError::MissingLabels { id: r.id.clone() })
        })
        .collect()
}

/// Reports grouped by presence bits, each group in corpus order. Sorted by
/// bits value for deterministic traversal.
fn buckets(bits: &[u16]) -> Vec<(u16, Vec<usize>)> {
    let mut map = std::collections::BTreeMap::<u16, Vec<usize>>::new();
    for (index, &b) in bits.iter().enumerate() {
        map.entry(b).or_default().push(index);
    }
    map.into_iter().collect()
}

/// For each image, draws `negatives_per_image` reports uniformly from those
/// with a differing presence vector. Deterministic: image `n` samples from
/// stream `n` of a generator seeded with `cfg.seed`.
pub fn mine_random_negatives(
    bundle: &CorpusBundle,
    cfg: &MiningConfig,
) -> Result<Vec<TrainingPair>, MiningError> {
    cfg.validate()?;
    let bits = label_bits(bundle)?;
    let buckets = buckets(&bits);
    let total = bundle.len();
    let mut pairs = Vec::with_capacity(total * cfg.negatives_per_image);
    for (image_index, report) in bundle.reports().iter().enumerate() {
        let own = bits[image_index];
        let own_bucket_len = buckets
            .iter()
            .find(|(b, _)| *b == own)
            .map_or(0, |(_, members)| members.len());
        let eligible = total - own_bucket_len;
        if eligible == 0 {
            return Err(MiningError::NoEligibleNegative {
                image_id: report.id.clone(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(image_index as u64);
        for _ in 0..cfg.negatives_per_image {
            let mut pick = rng.gen_range(0..eligible);
            let mut chosen = None;
            for (b, members) in &buckets {
                if *b == own {
                    continue;
                }
                if pick < members.len() {
                    chosen = Some(members[pick]);
                    break;
                }
                pick -= members.len();
            }
            let chosen = chosen.expect("pick within eligible count");
            pairs.push(TrainingPair {
                image_id: report.id.clone(),
                report_id: bundle.reports()[chosen].id.clone(),
                label: PairLabel::Negative,
                negative_kind: Some(NegativeKind::RandomMismatch),
            });
        }
    }
    Ok(pairs)
}

/// For each image, the report at the smallest nonzero presence distance,
/// ties broken by ascending report id. Equivalent to a full quadratic scan.
pub fn mine_hard_negatives(bundle: &CorpusBundle) -> Result<Vec<TrainingPair>, MiningError> {
    mine_hard_negatives_n(bundle, 1)
}

/// Generalization of [`mine_hard_negatives`]: up to `per_image` nearest
/// reports per image, ordered by (distance, id). Emits fewer pairs for an
/// image only when fewer eligible reports exist.
pub fn mine_hard_negatives_n(
    bundle: &CorpusBundle,
    per_image: usize,
) -> Result<Vec<TrainingPair>, MiningError> {
    if per_image == 0 {
        return Err(MiningError::InvalidConfig(
            "negatives_per_image must be >= 1".into(),
        ));
    }
    let bits = label_bits(bundle)?;
    // Bucket members sorted by id so the per-bucket order is the tie-break order.
    let mut by_bits = std::collections::BTreeMap::<u16, Vec<&str>>::new();
    for (index, &b) in bits.iter().enumerate() {
        by_bits.entry(b).or_default().push(&bundle.reports()[index].id);
    }
    for members in by_bits.values_mut() {
        members.sort_unstable();
    }
    let distinct: Vec<(u16, &Vec<&str>)> = by_bits.iter().map(|(b, m)| (*b, m)).collect();

    let mut pairs = Vec::with_capacity(bundle.len() * per_image);
    for (image_index, report) in bundle.reports().iter().enumerate() {
        let own = bits[image_index];
        // Scan bucket representatives: distance depends only on the bits.
        let mut ranked: Vec<(u32, &Vec<&str>)> = distinct
            .iter()
            .filter(|(b, _)| *b != own)
            .map(|(b, members)| ((b ^ own).count_ones(), *members))
            .collect();
        if ranked.is_empty() {
            return Err(MiningError::NoEligibleNegative {
                image_id: report.id.clone(),
            });
        }
        ranked.sort_by_key(|(d, _)| *d);
        // Equal distances can span buckets; the id tie-break merges them.
        let mut taken = 0;
        let mut index = 0;
        while index < ranked.len() && taken < per_image {
            let distance = ranked[index].0;
            let mut same: Vec<&str> = Vec::new();
            while index < ranked.len() && ranked[index].0 == distance {
                same.extend(ranked[index].1.iter().copied());
                index += 1;
            }
            same.sort_unstable();
            for id in same {
                pairs.push(TrainingPair {
                    image_id: report.id.clone(),
                    report_id: id.to_string(),
                    label: PairLabel::Negative,
                    negative_kind: Some(NegativeKind::Hard),
                });
                taken += 1;
                if taken == per_image {
                    break;
                }
            }
        }
    }
    Ok(pairs)
}

/// All positive pairs plus both negative kinds, shuffled with `cfg.seed`.
pub fn build_itm_dataset(
    bundle: &CorpusBundle,
    cfg: &MiningConfig,
) -> Result<Vec<TrainingPair>, MiningError> {
    cfg.validate()?;
    let mut pairs: Vec<TrainingPair> = bundle
        .reports()
        .iter()
        .map(|r| TrainingPair {
            image_id: r.id.clone(),
            report_id: r.id.clone(),
            label: PairLabel::Positive,
            negative_kind: None,
        })
        .collect();
    pairs.extend(mine_random_negatives(bundle, cfg)?);
    pairs.extend(mine_hard_negatives_n(bundle, cfg.negatives_per_image)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    pairs.shuffle(&mut rng);
    Ok(pairs)
}

/// Serializes pairs to the JSONL dataset format, one object per line with
/// keys `image_id`, `report_id`, `label`, `negative_kind`.
pub fn dataset_to_jsonl(pairs: &[TrainingPair]) -> String {
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&serde_json::to_string(pair).expect("pair serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EmbeddingMatrix, Report, Section};

    fn labels(positive_at: &[usize]) -> LabelVector {
        let mut classes = [0u8; LABEL_CLASSES];
        for &i in positive_at {
            classes[i] = 1;
        }
        LabelVector::new(classes).unwrap()
    }

    fn labeled_bundle(specs: &[(&str, &[usize])]) -> CorpusBundle {
        let reports: Vec<Report> = specs
            .iter()
            .map(|(id, positives)| Report {
                id: id.to_string(),
                text: format!("report {id}"),
                labels: Some(labels(positives)),
                section: Section::Impression,
            })
            .collect();
        let ids = specs.iter().map(|(id, _)| id.to_string()).collect();
        let rows = (0..specs.len()).map(|i| i as f32 + 1.0).collect();
        let matrix = EmbeddingMatrix::new(ids, 1, rows).unwrap();
        CorpusBundle::new(reports, matrix).unwrap()
    }

    #[test]
    fn presence_vector_examples() {
        assert_eq!(presence_vector(&labels(&[])), [0u8; LABEL_CLASSES]);
        let mut classes = [0u8; LABEL_CLASSES];
        classes[0] = 1;
        classes[1] = 2;
        classes[2] = 3;
        let mut expected = [0u8; LABEL_CLASSES];
        expected[0] = 1;
        assert_eq!(
            presence_vector(&LabelVector::new(classes).unwrap()),
            expected
        );
        let all = LabelVector::new([1u8; LABEL_CLASSES]).unwrap();
        assert_eq!(presence_vector(&all), [1u8; LABEL_CLASSES]);
    }

    #[test]
    fn manhattan_examples() {
        let a = labels(&[0]);
        assert_eq!(manhattan(&a, &a), 0);
        // {Cardiomegaly} vs {Cardiomegaly, Edema}: one differing coordinate.
        assert_eq!(manhattan(&labels(&[0]), &labels(&[0, 1])), 1);
        // {A, B} vs {C}: symmetric difference of size 3.
        assert_eq!(manhattan(&labels(&[0, 1]), &labels(&[2])), 3);
        assert_eq!(
            manhattan(&labels(&[0, 1]), &labels(&[2])),
            manhattan(&labels(&[2]), &labels(&[0, 1]))
        );
    }

    #[test]
    fn random_negatives_differ_and_are_seeded() {
        let bundle = labeled_bundle(&[
            ("r1", &[0]),
            ("r2", &[1]),
            ("r3", &[2]),
            ("r4", &[0, 1]),
        ]);
        let cfg = MiningConfig::default();
        let a = mine_random_negatives(&bundle, &cfg).unwrap();
        let b = mine_random_negatives(&bundle, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for pair in &a {
            assert_ne!(pair.image_id, pair.report_id);
            let img = bundle.report(&pair.image_id).unwrap().labels.clone().unwrap();
            let neg = bundle.report(&pair.report_id).unwrap().labels.clone().unwrap();
            assert!(manhattan(&img, &neg) > 0);
        }
        let other_seed = MiningConfig {
            seed: 99,
            negatives_per_image: 1,
        };
        // A different seed is allowed to give a different draw somewhere.
        let c = mine_random_negatives(&bundle, &other_seed).unwrap();
        assert_eq!(c.len(), 4);
    }

    #[test]
    fn random_negatives_need_a_differing_report() {
        let bundle = labeled_bundle(&[("r1", &[0]), ("r2", &[0])]);
        assert!(matches!(
            mine_random_negatives(&bundle, &MiningConfig::default()),
            Err(MiningError::NoEligibleNegative { .. })
        ));
    }

    #[test]
    fn hard_negatives_pick_min_distance_with_id_tie_break() {
        // Distances from r1 {0}: r2 -> 1, r5 -> 1, r3 -> 2, r4 -> 2.
        let bundle = labeled_bundle(&[
            ("r1", &[0]),
            ("r2", &[0, 1]),
            ("r3", &[2]),
            ("r4", &[0, 1, 2]),
            ("r5", &[]),
        ]);
        let pairs = mine_hard_negatives(&bundle).unwrap();
        let for_image = |id: &str| {
            pairs
                .iter()
                .find(|p| p.image_id == id)
                .map(|p| p.report_id.as_str())
                .unwrap()
        };
        assert_eq!(for_image("r1"), "r2");
        assert_eq!(for_image("r2"), "r1");
        assert_eq!(for_image("r3"), "r5");
        assert_eq!(for_image("r4"), "r2");
        assert_eq!(for_image("r5"), "r1");
    }

    #[test]
    fn hard_negatives_two_report_symmetry() {
        let bundle = labeled_bundle(&[("a", &[0]), ("b", &[1])]);
        let pairs = mine_hard_negatives(&bundle).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].report_id, "b");
        assert_eq!(pairs[1].report_id, "a");
    }

    #[test]
    fn hard_negatives_match_quadratic_scan() {
        // Randomized labels, compared against the obvious n^2 oracle.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let specs: Vec<(String, Vec<usize>)> = (0..200)
            .map(|n| {
                let positives: Vec<usize> =
                    (0..LABEL_CLASSES).filter(|_| rng.gen_bool(0.2)).collect();
                (format!("r{n:03}"), positives)
            })
            .collect();
        let borrowed: Vec<(&str, &[usize])> = specs
            .iter()
            .map(|(id, p)| (id.as_str(), p.as_slice()))
            .collect();
        let bundle = labeled_bundle(&borrowed);

        let fast = mine_hard_negatives(&bundle).unwrap();
        for (index, report) in bundle.reports().iter().enumerate() {
            let own = report.labels.as_ref().unwrap();
            let mut best: Option<(u32, &str)> = None;
            for other in bundle.reports() {
                if other.id == report.id {
                    continue;
                }
                let d = manhattan(own, other.labels.as_ref().unwrap());
                if d == 0 {
                    continue;
                }
                best = match best {
                    None => Some((d, &other.id)),
                    Some((bd, bid)) if (d, other.id.as_str()) < (bd, bid) => Some((d, &other.id)),
                    keep => keep,
                };
            }
            assert_eq!(fast[index].report_id, best.unwrap().1);
        }
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let specs: Vec<(String, Vec<usize>)> =
            (0..10).map(|n| (format!("r{n}"), vec![n % 5])).collect();
        let borrowed: Vec<(&str, &[usize])> = specs
            .iter()
            .map(|(id, p)| (id.as_str(), p.as_slice()))
            .collect();
        let bundle = labeled_bundle(&borrowed);
        let cfg = MiningConfig {
            seed: 3,
            negatives_per_image: 1,
        };
        let dataset = build_itm_dataset(&bundle, &cfg).unwrap();
        assert_eq!(dataset.len(), 30);
        let positives = dataset
            .iter()
            .filter(|p| p.label == PairLabel::Positive)
            .count();
        assert_eq!(positives, 10);
        assert_eq!(dataset, build_itm_dataset(&bundle, &cfg).unwrap());
        for pair in &dataset {
            match pair.label {
                PairLabel::Positive => {
                    assert_eq!(pair.image_id, pair.report_id);
                    assert!(pair.negative_kind.is_none());
                }
                PairLabel::Negative => {
                    assert!(pair.negative_kind.is_some());
                    let img = bundle.report(&pair.image_id).unwrap().labels.clone().unwrap();
                    let neg = bundle.report(&pair.report_id).unwrap().labels.clone().unwrap();
                    assert!(manhattan(&img, &neg) > 0);
                }
            }
        }
    }

    #[test]
    fn missing_labels_fail_fast() {
        let reports = vec![Report {
            id: "r1".into(),
            text: "unlabeled".into(),
            labels: None,
            section: Section::Impression,
        }];
        let matrix = EmbeddingMatrix::new(vec!["r1".into()], 1, vec![1.0]).unwrap();
        let bundle = CorpusBundle::new(reports, matrix).unwrap();
        assert!(matches!(
            mine_hard_negatives(&bundle),
            Err(MiningError::MissingLabels { id }) if id == "r1"
        ));
    }
}
