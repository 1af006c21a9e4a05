//! Cross-encoder re-ranking: every candidate correspondence is scored on its
//! text pairs and takes the best pair score as its confidence.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::alignment::{Alignment, Correspondence};
use crate::graph::Iri;
use crate::text::{build_text_pairs, escape_tsv, normalize_label, PairingStrategy, TextBundle};

/// Result slot of one concurrently processed batch.
type BatchSlot<T, E> = Mutex<Option<Result<T, E>>>;

pub const DEFAULT_SCORE_BATCH: usize = 32;
pub const DEFAULT_MAX_LENGTH: usize = 256;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error("scorer returned {got} scores for {expected} pairs")]
    CountMismatch { expected: usize, got: usize },
    #[error("no text bundle for {0}")]
    MissingBundle(Iri),
    #[error("scoring {source_entity} -> {target} failed: {message}")]
    Correspondence {
        source_entity: Iri,
        target: Iri,
        message: String,
    },
}

/// Scores text pairs with the probability that they describe the same
/// entity.
pub trait PairScorer: Send + Sync {
    /// Length budget per pair in whitespace tokens.
    fn max_length(&self) -> usize;

    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ScoreError>;
}

/// Deterministic stand-in for a cross-encoder: Jaccard similarity of the
/// token sets of the normalized texts.
#[derive(Clone, Copy, Debug)]
pub struct MockScorer {
    pub max_length: usize,
}

impl Default for MockScorer {
    fn default() -> Self {
        MockScorer {
            max_length: DEFAULT_MAX_LENGTH,
        }
    }
}

pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let (na, nb) = (normalize_label(a), normalize_label(b));
    let ta: BTreeSet<&str> = na.split(' ').filter(|t| !t.is_empty()).collect();
    let tb: BTreeSet<&str> = nb.split(' ').filter(|t| !t.is_empty()).collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

impl PairScorer for MockScorer {
    fn max_length(&self) -> usize {
        self.max_length
    }

    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ScoreError> {
        Ok(pairs.iter().map(|(a, b)| token_jaccard(a, b)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LengthMeasure {
    WhitespaceTokens,
    Chars,
}

impl LengthMeasure {
    /// Byte offsets at which the first 1, 2, ... units of `s` end.
    fn unit_ends(self, s: &str) -> Vec<usize> {
        match self {
            LengthMeasure::Chars => s.char_indices().map(|(i, c)| i + c.len_utf8()).collect(),
            LengthMeasure::WhitespaceTokens => {
                let mut ends = Vec::new();
                let mut in_token = false;
                for (i, c) in s.char_indices() {
                    if c.is_whitespace() {
                        if in_token {
                            ends.push(i);
                        }
                        in_token = false;
                    } else {
                        in_token = true;
                    }
                }
                if in_token {
                    ends.push(s.len());
                }
                ends
            }
        }
    }

    pub fn measure(self, s: &str) -> usize {
        match self {
            LengthMeasure::Chars => s.chars().count(),
            LengthMeasure::WhitespaceTokens => s.split_whitespace().count(),
        }
    }
}

/// Drops trailing units from the longer text (from `a` on ties) until the
/// combined length fits `budget`.
pub fn truncate_pair(a: &str, b: &str, budget: usize, measure: LengthMeasure) -> (String, String) {
    let ends_a = measure.unit_ends(a);
    let ends_b = measure.unit_ends(b);
    let (mut la, mut lb) = (ends_a.len(), ends_b.len());
    if la + lb <= budget {
        return (a.to_string(), b.to_string());
    }
    while la + lb > budget {
        if la >= lb {
            la -= 1;
        } else {
            lb -= 1;
        }
    }
    let cut = |s: &str, ends: &[usize], n: usize| {
        if n == 0 {
            String::new()
        } else {
            s[..ends[n - 1]].trim_start().to_string()
        }
    };
    (cut(a, &ends_a, la), cut(b, &ends_b, lb))
}

/// Per-correspondence scoring details.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSummary {
    pub best_pair: (String, String),
    pub pairs: usize,
    pub max: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ScoredAlignment {
    pub alignment: Alignment,
    pub details: BTreeMap<(Iri, Iri), PairSummary>,
}

#[derive(Clone, Copy, Debug)]
pub struct ScoreOptions {
    pub strategy: PairingStrategy,
    pub batch_size: usize,
    pub in_flight: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            strategy: PairingStrategy::Grouped,
            batch_size: DEFAULT_SCORE_BATCH,
            in_flight: 4,
        }
    }
}

/// Rescores every candidate with `scorer`; membership is unchanged and each
/// confidence becomes the maximum score over the candidate's text pairs.
pub fn score_alignment(
    candidates: &Alignment,
    source_bundles: &BTreeMap<Iri, TextBundle>,
    target_bundles: &BTreeMap<Iri, TextBundle>,
    scorer: &dyn PairScorer,
    options: &ScoreOptions,
) -> Result<ScoredAlignment, ScoreError> {
    let budget = scorer.max_length().max(2);
    let corrs: Vec<&Correspondence> = candidates.iter().collect();
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut owner: Vec<usize> = Vec::new();
    for (idx, c) in corrs.iter().enumerate() {
        let a = source_bundles
            .get(&c.source)
            .ok_or_else(|| ScoreError::MissingBundle(c.source.clone()))?;
        let b = target_bundles
            .get(&c.target)
            .ok_or_else(|| ScoreError::MissingBundle(c.target.clone()))?;
        for (x, y) in build_text_pairs(a, b, options.strategy) {
            pairs.push(truncate_pair(&x, &y, budget, LengthMeasure::WhitespaceTokens));
            owner.push(idx);
        }
    }

    let scores = score_batched(&pairs, scorer, options).map_err(|(start, err)| {
        let c = corrs[owner[start]];
        ScoreError::Correspondence {
            source_entity: c.source.clone(),
            target: c.target.clone(),
            message: err.to_string(),
        }
    })?;

    let mut best: Vec<Option<(usize, f64)>> = vec![None; corrs.len()];
    let mut sums = vec![(0usize, 0f64); corrs.len()];
    for (p, (&idx, &score)) in owner.iter().zip(&scores).enumerate() {
        let score = score.clamp(0.0, 1.0);
        if best[idx].is_none_or(|(_, s)| score > s) {
            best[idx] = Some((p, score));
        }
        sums[idx].0 += 1;
        sums[idx].1 += score;
    }

    let mut out = ScoredAlignment::default();
    for (idx, c) in corrs.iter().enumerate() {
        let Some((p, score)) = best[idx] else { continue };
        let mut scored = Correspondence::new(c.source.clone(), c.target.clone(), score);
        scored.kind = c.kind;
        out.alignment.insert(scored);
        out.details.insert(
            c.key(),
            PairSummary {
                best_pair: pairs[p].clone(),
                pairs: sums[idx].0,
                max: score,
                mean: sums[idx].1 / sums[idx].0 as f64,
            },
        );
    }
    Ok(out)
}

/// Scores `pairs` in batches issued concurrently; on failure returns the
/// index of the first pair of the failing batch.
fn score_batched(
    pairs: &[(String, String)],
    scorer: &dyn PairScorer,
    options: &ScoreOptions,
) -> Result<Vec<f64>, (usize, ScoreError)> {
    let batch = options.batch_size.max(1);
    let starts: Vec<usize> = (0..pairs.len()).step_by(batch).collect();
    let slots: Vec<BatchSlot<Vec<f64>, ScoreError>> = starts.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = options.in_flight.max(1).min(starts.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let b = next.fetch_add(1, Ordering::Relaxed);
                let Some(&start) = starts.get(b) else { break };
                let chunk = &pairs[start..(start + batch).min(pairs.len())];
                let result = scorer.score(chunk).and_then(|scores| {
                    if scores.len() == chunk.len() {
                        Ok(scores)
                    } else {
                        Err(ScoreError::CountMismatch {
                            expected: chunk.len(),
                            got: scores.len(),
                        })
                    }
                });
                let failed = result.is_err();
                *slots[b].lock().expect("score slot") = Some(result);
                if failed {
                    next.store(starts.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let mut scores = Vec::with_capacity(pairs.len());
    for (b, slot) in slots.into_iter().enumerate() {
        match slot.into_inner().expect("score slot") {
            Some(Ok(s)) => scores.extend(s),
            Some(Err(err)) => return Err((starts[b], err)),
            None => continue,
        }
    }
    Ok(scores)
}

/// Debug dump: `source, target, confidence, pairs, mean, best text A, best text B`.
pub fn write_scored_tsv(scored: &ScoredAlignment, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "source\ttarget\tconfidence\tpairs\tmean\tbestA\tbestB")?;
    for c in scored.alignment.iter() {
        let Some(d) = scored.details.get(&(c.source.clone(), c.target.clone())) else {
            continue;
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.source,
            c.target,
            c.confidence,
            d.pairs,
            d.mean,
            escape_tsv(&d.best_pair.0),
            escape_tsv(&d.best_pair.1)
        )?;
    }
    Ok(())
}
