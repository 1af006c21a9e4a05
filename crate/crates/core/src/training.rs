//! Training data for the cross-encoder: positives from a reference sample or
//! the high-precision matcher, negatives from the candidate alignment under
//! the one-to-one assumption.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::alignment::{Alignment, Correspondence};
use crate::graph::Iri;
use crate::text::{build_text_pairs, escape_tsv, unescape_tsv, PairingStrategy, TextBundle};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("sample share must be in (0, 1], got {0}")]
    InvalidShare(f64),
    #[error("reference mode needs a reference alignment")]
    MissingReference,
    #[error("no positive correspondences; cannot build a training set")]
    NoPositives,
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    ReferenceSampled,
    PrecisionMatched,
    OneToOneNegative,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::ReferenceSampled => "reference_sampled",
            Provenance::PrecisionMatched => "precision_matched",
            Provenance::OneToOneNegative => "one_to_one_negative",
        }
    }

    pub fn label(self) -> Label {
        match self {
            Provenance::ReferenceSampled | Provenance::PrecisionMatched => Label::Positive,
            Provenance::OneToOneNegative => Label::Negative,
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference_sampled" => Ok(Provenance::ReferenceSampled),
            "precision_matched" => Ok(Provenance::PrecisionMatched),
            "one_to_one_negative" => Ok(Provenance::OneToOneNegative),
            other => Err(format!("unknown provenance '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub text_a: String,
    pub text_b: String,
    pub provenance: Provenance,
    pub source: Iri,
    pub target: Iri,
}

impl TrainingPair {
    pub fn label(&self) -> Label {
        self.provenance.label()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Reference,
    #[serde(rename = "precision")]
    PrecisionMatcher,
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" => Ok(TrainMode::Reference),
            "precision" => Ok(TrainMode::PrecisionMatcher),
            other => Err(format!("unknown training mode '{other}' (reference|precision)")),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Reference => "reference",
            TrainMode::PrecisionMatcher => "precision",
        })
    }
}

/// A uniformly random subset of `round(share * |reference|)` correspondences.
pub fn sample_reference(reference: &Alignment, share: f64, seed: u64) -> Result<Alignment, TrainingError> {
    if !(share > 0.0 && share <= 1.0) {
        return Err(TrainingError::InvalidShare(share));
    }
    let all: Vec<&Correspondence> = reference.iter().collect();
    let amount = ((share * all.len() as f64).round() as usize).min(all.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, all.len(), amount);
    Ok(picked.into_iter().map(|i| all[i].clone()).collect())
}

/// Candidates that contradict the positives under the one-to-one
/// assumption: a candidate not in `positives` is negative when its source or
/// its target is an endpoint of a positive. With `strict_one_endpoint`, only
/// candidates touching exactly one positive endpoint qualify.
pub fn generate_negatives(positives: &Alignment, recall: &Alignment, strict_one_endpoint: bool) -> Alignment {
    recall
        .iter()
        .filter(|c| !positives.contains(&c.source, &c.target))
        .filter(|c| {
            let s = positives.has_source(&c.source);
            let t = positives.has_target(&c.target);
            if strict_one_endpoint {
                s != t
            } else {
                s || t
            }
        })
        .cloned()
        .collect()
}

/// Expands correspondences into labeled text pairs and shuffles them
/// deterministically. Correspondences lacking a bundle on either side are
/// skipped.
pub fn expand_pairs(
    labeled: &[(&Alignment, Provenance)],
    source_bundles: &BTreeMap<Iri, TextBundle>,
    target_bundles: &BTreeMap<Iri, TextBundle>,
    strategy: PairingStrategy,
    seed: u64,
) -> Vec<TrainingPair> {
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for (alignment, provenance) in labeled {
        for c in alignment.iter() {
            let (Some(a), Some(b)) = (source_bundles.get(&c.source), target_bundles.get(&c.target)) else {
                skipped += 1;
                continue;
            };
            for (text_a, text_b) in build_text_pairs(a, b, strategy) {
                pairs.push(TrainingPair {
                    text_a,
                    text_b,
                    provenance: *provenance,
                    source: c.source.clone(),
                    target: c.target.clone(),
                });
            }
        }
    }
    if skipped > 0 {
        tracing::warn!(skipped, "correspondences without text bundles skipped");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    pairs
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub positives: Alignment,
    pub negatives: Alignment,
    pub pairs: Vec<TrainingPair>,
}

impl TrainingSet {
    pub fn count(&self, label: Label) -> usize {
        self.pairs.iter().filter(|p| p.label() == label).count()
    }
}

/// Combines positives and the recall alignment into a training set.
#[allow(clippy::too_many_arguments)]
pub fn assemble_training_set(
    positives: Alignment,
    provenance: Provenance,
    recall: &Alignment,
    source_bundles: &BTreeMap<Iri, TextBundle>,
    target_bundles: &BTreeMap<Iri, TextBundle>,
    strategy: PairingStrategy,
    strict_one_endpoint: bool,
    seed: u64,
) -> Result<TrainingSet, TrainingError> {
    if positives.is_empty() {
        return Err(TrainingError::NoPositives);
    }
    if !positives.is_one_to_one() {
        tracing::warn!("positive correspondences are not one-to-one; negatives may be inconsistent");
    }
    let negatives = generate_negatives(&positives, recall, strict_one_endpoint);
    let pairs = expand_pairs(
        &[(&positives, provenance), (&negatives, Provenance::OneToOneNegative)],
        source_bundles,
        target_bundles,
        strategy,
        seed,
    );
    if !pairs.iter().any(|p| p.label() == Label::Positive) {
        return Err(TrainingError::NoPositives);
    }
    Ok(TrainingSet {
        positives,
        negatives,
        pairs,
    })
}

pub const TRAINING_HEADER: &str = "textA\ttextB\tlabel\tprovenance\tsource\ttarget";

pub fn write_training_tsv(pairs: &[TrainingPair], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{TRAINING_HEADER}")?;
    for p in pairs {
        let label = match p.label() {
            Label::Positive => 1,
            Label::Negative => 0,
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            escape_tsv(&p.text_a),
            escape_tsv(&p.text_b),
            label,
            p.provenance.as_str(),
            p.source,
            p.target
        )?;
    }
    Ok(())
}

pub fn read_training_tsv(reader: impl BufRead, path: &str) -> Result<Vec<TrainingPair>, TrainingError> {
    let err = |line: usize, message: String| TrainingError::Format {
        path: path.to_string(),
        line,
        message,
    };
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| TrainingError::Io {
            path: path.to_string(),
            source,
        })?;
        if line_no == 1 {
            if line != TRAINING_HEADER {
                return Err(err(1, format!("expected header '{TRAINING_HEADER}'")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [a, b, label, provenance, source, target] = fields[..] else {
            return Err(err(line_no, format!("expected 6 fields, found {}", fields.len())));
        };
        let provenance: Provenance = provenance.parse().map_err(|m| err(line_no, m))?;
        let expected = match provenance.label() {
            Label::Positive => "1",
            Label::Negative => "0",
        };
        if label != expected {
            return Err(err(line_no, format!("label '{label}' contradicts provenance {}", provenance.as_str())));
        }
        pairs.push(TrainingPair {
            text_a: unescape_tsv(a),
            text_b: unescape_tsv(b),
            provenance,
            source: Iri::new(source).map_err(|e| err(line_no, e.to_string()))?,
            target: Iri::new(target).map_err(|e| err(line_no, e.to_string()))?,
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{TextItem, TextOrigin};

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn al(pairs: &[(&str, &str)]) -> Alignment {
        pairs
            .iter()
            .map(|(s, t)| Correspondence::new(iri(&format!("http://s/{s}")), iri(&format!("http://t/{t}")), 1.0))
            .collect()
    }

    fn worked_example() -> (Alignment, Alignment) {
        let positives = al(&[("s2", "t2"), ("s5", "t5")]);
        let recall = al(&[("s2", "t1"), ("s2", "t2"), ("s3", "t2"), ("s4", "t4"), ("s5", "t5")]);
        (positives, recall)
    }

    #[test]
    fn worked_example_negatives() {
        let (positives, recall) = worked_example();
        let negatives = generate_negatives(&positives, &recall, false);
        assert_eq!(negatives, al(&[("s2", "t1"), ("s3", "t2")]));
        assert!(generate_negatives(&positives, &positives, false).is_empty());
    }

    #[test]
    fn both_endpoint_conflicts_follow_the_flag() {
        let positives = al(&[("s1", "t1"), ("s2", "t2")]);
        let recall = al(&[("s1", "t2"), ("s1", "t3")]);
        assert_eq!(generate_negatives(&positives, &recall, false).len(), 2);
        assert_eq!(generate_negatives(&positives, &recall, true), al(&[("s1", "t3")]));
    }

    #[test]
    fn sampling_sizes_and_determinism() {
        let reference: Alignment = (0..100).map(|i| Correspondence::new(iri(&format!("http://s/{i}")), iri(&format!("http://t/{i}")), 1.0)).collect();
        let a = sample_reference(&reference, 0.2, 42).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.is_subset_of(&reference));
        assert_eq!(a, sample_reference(&reference, 0.2, 42).unwrap());
        assert_ne!(a, sample_reference(&reference, 0.2, 43).unwrap());
        assert_eq!(sample_reference(&reference, 1.0, 1).unwrap(), reference);
        assert!(sample_reference(&Alignment::new(), 0.2, 1).unwrap().is_empty());
        assert!(matches!(sample_reference(&reference, 0.0, 1), Err(TrainingError::InvalidShare(_))));
        assert!(sample_reference(&reference, 1.5, 1).is_err());
    }

    fn bundles(prefix: &str, names: &[&str]) -> BTreeMap<Iri, TextBundle> {
        names
            .iter()
            .map(|n| {
                let e = iri(&format!("{prefix}{n}"));
                (e.clone(), TextBundle::new(e, [TextItem::new(format!("text {n}"), TextOrigin::LabelProperty)]).unwrap())
            })
            .collect()
    }

    #[test]
    fn worked_example_training_pairs() {
        let (positives, recall) = worked_example();
        let src = bundles("http://s/", &["s2", "s3", "s4", "s5"]);
        let tgt = bundles("http://t/", &["t1", "t2", "t4", "t5"]);
        let set = assemble_training_set(positives, Provenance::ReferenceSampled, &recall, &src, &tgt, PairingStrategy::Grouped, false, 7).unwrap();
        assert_eq!(set.count(Label::Positive), 2);
        assert_eq!(set.count(Label::Negative), 2);
        let again = assemble_training_set(worked_example().0, Provenance::ReferenceSampled, &recall, &src, &tgt, PairingStrategy::Grouped, false, 7).unwrap();
        assert_eq!(set.pairs, again.pairs);
    }

    #[test]
    fn zero_positives_is_fatal() {
        assert!(matches!(
            assemble_training_set(Alignment::new(), Provenance::PrecisionMatched, &Alignment::new(), &BTreeMap::new(), &BTreeMap::new(), PairingStrategy::Grouped, false, 0),
            Err(TrainingError::NoPositives)
        ));
    }

    #[test]
    fn training_file_round_trip() {
        let pairs = vec![
            TrainingPair {
                text_a: "tab\there".into(),
                text_b: "new\nline \\ slash".into(),
                provenance: Provenance::PrecisionMatched,
                source: iri("http://s/1"),
                target: iri("http://t/1"),
            },
            TrainingPair {
                text_a: "a".into(),
                text_b: "b".into(),
                provenance: Provenance::OneToOneNegative,
                source: iri("http://s/1"),
                target: iri("http://t/2"),
            },
        ];
        let mut buf = Vec::new();
        write_training_tsv(&pairs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("tab\\there\tnew\\nline \\\\ slash\t1\tprecision_matched\t"));
        assert_eq!(read_training_tsv(buf.as_slice(), "mem").unwrap(), pairs);
    }
}
