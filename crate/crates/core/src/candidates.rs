//! Bi-encoder blocking: embed every description, retrieve the top-k nearest
//! descriptions in both directions per entity kind, and merge the hits into a
//! high-recall candidate alignment.
//!
//! Retrieval is exact (brute-force cosine). Rows are ordered by
//! `(entity IRI, item index)`, and equal scores are broken by that order.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use thiserror::Error;

use crate::alignment::{Alignment, Correspondence};
use crate::embed::{dot, l2_normalize, DescriptionKey, EmbedError, EmbeddingProvider};
use crate::graph::{EntityKind, Iri, KnowledgeGraph};
use crate::text::{extract_all, TextBundle};

/// Result slot of one concurrently processed batch.
type BatchSlot<T, E> = Mutex<Option<Result<T, E>>>;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_EMBED_BATCH: usize = 128;

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedding {side} descriptions of kind {kind} (batch {batch}): {source}")]
    Embedding {
        kind: EntityKind,
        side: &'static str,
        batch: usize,
        #[source]
        source: EmbedError,
    },
    #[error("dimension mismatch for kind {kind}: source vectors have {source_dim}, target vectors {target_dim}")]
    DimensionMismatch {
        kind: EntityKind,
        source_dim: usize,
        target_dim: usize,
    },
}

/// Text bundles and kinds of the matchable entities of one graph.
#[derive(Clone, Debug, Default)]
pub struct Descriptions {
    pub bundles: BTreeMap<Iri, TextBundle>,
    pub kinds: BTreeMap<Iri, EntityKind>,
}

impl Descriptions {
    pub fn from_graph(graph: &KnowledgeGraph, max_depth: usize) -> Self {
        let bundles = extract_all(graph, max_depth);
        let kinds = graph
            .entities()
            .iter()
            .filter(|(iri, _)| bundles.contains_key(*iri))
            .map(|(iri, kind)| (iri.clone(), *kind))
            .collect();
        Descriptions { bundles, kinds }
    }

    pub fn insert(&mut self, bundle: TextBundle, kind: EntityKind) {
        self.kinds.insert(bundle.entity.clone(), kind);
        self.bundles.insert(bundle.entity.clone(), bundle);
    }

    /// Entities of `kind` with their bundles, in IRI order.
    pub fn of_kind(&self, kind: EntityKind) -> impl Iterator<Item = &TextBundle> + '_ {
        self.bundles
            .values()
            .filter(move |b| self.kinds.get(&b.entity) == Some(&kind))
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }
}

/// Unit-normalized description vectors, row-aligned with `keys`.
#[derive(Clone, Debug)]
pub struct EmbeddingMatrix {
    keys: Vec<DescriptionKey>,
    data: Vec<f32>,
    dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct EmbedOptions {
    pub batch_size: usize,
    /// Maximum concurrent provider calls.
    pub in_flight: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            batch_size: DEFAULT_EMBED_BATCH,
            in_flight: 4,
        }
    }
}

impl EmbeddingMatrix {
    /// Builds a matrix from already computed vectors, normalizing each row.
    pub fn from_rows(keys: Vec<DescriptionKey>, rows: Vec<Vec<f32>>) -> Result<Self, EmbedError> {
        if keys.len() != rows.len() {
            return Err(EmbedError::CountMismatch {
                expected: keys.len(),
                got: rows.len(),
            });
        }
        let dim = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(dim * rows.len());
        for mut row in rows {
            if row.len() != dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            l2_normalize(&mut row);
            data.extend_from_slice(&row);
        }
        Ok(EmbeddingMatrix { keys, data, dim })
    }

    /// Embeds every item of `bundles` through `provider`, in batches issued
    /// concurrently up to `options.in_flight`. Rows keep bundle and item
    /// order regardless of completion order.
    pub fn embed_bundles<'a>(
        bundles: impl IntoIterator<Item = &'a TextBundle>,
        provider: &dyn EmbeddingProvider,
        options: EmbedOptions,
    ) -> Result<Self, (usize, EmbedError)> {
        let mut keys = Vec::new();
        let mut texts = Vec::new();
        for bundle in bundles {
            for (item_index, item) in bundle.items().iter().enumerate() {
                keys.push(DescriptionKey {
                    entity: bundle.entity.clone(),
                    item_index,
                });
                texts.push(item.text.as_str());
            }
        }
        let batch_size = options.batch_size.max(1);
        let batches: Vec<(usize, usize)> = (0..texts.len())
            .step_by(batch_size)
            .map(|start| (start, (start + batch_size).min(texts.len())))
            .collect();
        let results: Vec<BatchSlot<Vec<Vec<f32>>, EmbedError>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = options.in_flight.max(1).min(batches.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let b = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&(start, end)) = batches.get(b) else {
                        break;
                    };
                    let out = provider
                        .embed_described(&keys[start..end], &texts[start..end])
                        .and_then(|vectors| {
                            if vectors.len() == end - start {
                                Ok(vectors)
                            } else {
                                Err(EmbedError::CountMismatch {
                                    expected: end - start,
                                    got: vectors.len(),
                                })
                            }
                        });
                    let failed = out.is_err();
                    *results[b].lock().expect("result slot") = Some(out);
                    if failed {
                        // Stop handing out further batches.
                        next.store(batches.len(), Ordering::Relaxed);
                    }
                });
            }
        });

        let mut rows = Vec::with_capacity(texts.len());
        for (b, slot) in results.into_iter().enumerate() {
            match slot.into_inner().expect("result slot") {
                Some(Ok(vectors)) => rows.extend(vectors),
                Some(Err(err)) => return Err((b, err)),
                // Skipped after an earlier failure; that failure is reported.
                None => continue,
            }
        }
        if let Some(expected) = provider.dim() {
            if let Some(bad) = rows.iter().find(|r| r.len() != expected) {
                return Err((
                    0,
                    EmbedError::DimensionMismatch {
                        expected,
                        got: bad.len(),
                    },
                ));
            }
        }
        EmbeddingMatrix::from_rows(keys, rows).map_err(|e| (0, e))
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn keys(&self) -> &[DescriptionKey] {
        &self.keys
    }

    pub fn row(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }
}

fn by_score_then_row(a: &(usize, f32), b: &(usize, f32)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// For each query row, the `k` corpus rows with the highest cosine, sorted by
/// descending score and ascending row index.
pub fn retrieve_topk(query: &EmbeddingMatrix, corpus: &EmbeddingMatrix, k: usize) -> Vec<Vec<(usize, f32)>> {
    let k = k.min(corpus.len());
    (0..query.len())
        .into_par_iter()
        .map(|q| {
            if k == 0 {
                return Vec::new();
            }
            let qv = query.row(q);
            let mut scored: Vec<(usize, f32)> = (0..corpus.len()).map(|c| (c, dot(qv, corpus.row(c)))).collect();
            if scored.len() > k {
                scored.select_nth_unstable_by(k - 1, by_score_then_row);
                scored.truncate(k);
            }
            scored.sort_by(by_score_then_row);
            scored
        })
        .collect()
}

/// Collapses description hits to entity level (max score per entity pair)
/// and keeps at most `k` corpus entities per query entity.
fn entity_hits(
    query: &EmbeddingMatrix,
    corpus: &EmbeddingMatrix,
    hits: &[Vec<(usize, f32)>],
    k: usize,
) -> Vec<(Iri, Iri, f32)> {
    let mut per_query: BTreeMap<&Iri, HashMap<&Iri, f32>> = BTreeMap::new();
    for (q, row_hits) in hits.iter().enumerate() {
        let entry = per_query.entry(&query.keys[q].entity).or_default();
        for &(c, score) in row_hits {
            let best = entry.entry(&corpus.keys[c].entity).or_insert(f32::NEG_INFINITY);
            if score > *best {
                *best = score;
            }
        }
    }
    let mut out = Vec::new();
    for (q_entity, targets) in per_query {
        let mut ranked: Vec<(&Iri, f32)> = targets.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(k);
        out.extend(ranked.into_iter().map(|(t, s)| (q_entity.clone(), t.clone(), s)));
    }
    out
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct PartitionStats {
    pub kind: Option<EntityKind>,
    pub source_entities: usize,
    pub target_entities: usize,
    pub source_descriptions: usize,
    pub target_descriptions: usize,
    pub forward_pairs: usize,
    pub backward_pairs: usize,
}

#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub alignment: Alignment,
    pub partitions: Vec<PartitionStats>,
}

#[derive(Clone, Copy, Debug)]
pub struct CandidateOptions {
    pub k: usize,
    pub embed: EmbedOptions,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        CandidateOptions {
            k: DEFAULT_K,
            embed: EmbedOptions::default(),
        }
    }
}

/// Embedded descriptions of one kind on both sides.
pub struct EmbeddedPartition {
    pub kind: EntityKind,
    pub source: EmbeddingMatrix,
    pub target: EmbeddingMatrix,
}

pub fn embed_partition(
    source: &Descriptions,
    target: &Descriptions,
    kind: EntityKind,
    provider: &dyn EmbeddingProvider,
    options: EmbedOptions,
) -> Result<Option<EmbeddedPartition>, CandidateError> {
    let src: Vec<&TextBundle> = source.of_kind(kind).collect();
    let tgt: Vec<&TextBundle> = target.of_kind(kind).collect();
    if src.is_empty() || tgt.is_empty() {
        return Ok(None);
    }
    let embed = |bundles: Vec<&TextBundle>, side: &'static str| {
        EmbeddingMatrix::embed_bundles(bundles, provider, options).map_err(|(batch, source)| {
            CandidateError::Embedding {
                kind,
                side,
                batch,
                source,
            }
        })
    };
    let source_matrix = embed(src, "source")?;
    let target_matrix = embed(tgt, "target")?;
    if source_matrix.dim() != target_matrix.dim() {
        return Err(CandidateError::DimensionMismatch {
            kind,
            source_dim: source_matrix.dim(),
            target_dim: target_matrix.dim(),
        });
    }
    Ok(Some(EmbeddedPartition {
        kind,
        source: source_matrix,
        target: target_matrix,
    }))
}

/// Entity-level candidates of one embedded partition, both directions.
pub fn partition_candidates(partition: &EmbeddedPartition, k: usize) -> (Alignment, PartitionStats) {
    let forward_hits = retrieve_topk(&partition.source, &partition.target, k);
    let backward_hits = retrieve_topk(&partition.target, &partition.source, k);
    let forward = entity_hits(&partition.source, &partition.target, &forward_hits, k);
    let backward = entity_hits(&partition.target, &partition.source, &backward_hits, k);

    let mut alignment = Alignment::new();
    let stats = PartitionStats {
        kind: Some(partition.kind),
        source_entities: distinct_entities(&partition.source),
        target_entities: distinct_entities(&partition.target),
        source_descriptions: partition.source.len(),
        target_descriptions: partition.target.len(),
        forward_pairs: forward.len(),
        backward_pairs: backward.len(),
    };
    for (s, t, score) in forward {
        alignment.insert_max(Correspondence::new(s, t, score as f64).with_kind(partition.kind));
    }
    for (t, s, score) in backward {
        alignment.insert_max(Correspondence::new(s, t, score as f64).with_kind(partition.kind));
    }
    (alignment, stats)
}

fn distinct_entities(m: &EmbeddingMatrix) -> usize {
    let mut n = 0;
    let mut last: Option<&Iri> = None;
    for key in m.keys() {
        if last != Some(&key.entity) {
            n += 1;
            last = Some(&key.entity);
        }
    }
    n
}

/// The high-recall candidate alignment between `source` and `target`.
pub fn topk_candidates(
    source: &Descriptions,
    target: &Descriptions,
    provider: &dyn EmbeddingProvider,
    options: &CandidateOptions,
) -> Result<CandidateSet, CandidateError> {
    if options.k == 0 {
        return Err(CandidateError::InvalidK);
    }
    let mut alignment = Alignment::new();
    let mut partitions = Vec::new();
    for kind in EntityKind::ALL {
        let Some(partition) = embed_partition(source, target, kind, provider, options.embed)? else {
            continue;
        };
        let (part, stats) = partition_candidates(&partition, options.k);
        tracing::info!(
            %kind,
            candidates = part.len(),
            source_descriptions = stats.source_descriptions,
            target_descriptions = stats.target_descriptions,
            "partition retrieved"
        );
        alignment.extend(part.iter().cloned());
        partitions.push(stats);
    }
    Ok(CandidateSet { alignment, partitions })
}
