//! Embedding providers for the blocking stage.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use thiserror::Error;

use crate::graph::Iri;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("vector dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no precomputed embedding for {entity} item {item_index}")]
    MissingKey { entity: Iri, item_index: usize },
    #[error("this provider needs description keys; call embed_described")]
    KeysRequired,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
}

/// Identifies one description: the entity and the index of the text item
/// within its bundle.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DescriptionKey {
    pub entity: Iri,
    pub item_index: usize,
}

/// Maps texts to dense vectors. Must be deterministic for identical input
/// and return exactly one vector per text.
pub trait EmbeddingProvider: Send + Sync {
    /// Vector dimension, when known before the first call.
    fn dim(&self) -> Option<usize>;

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError>;

    /// Embeds texts whose description keys are known. Providers backed by
    /// precomputed vectors look the keys up instead of the texts.
    fn embed_described(&self, keys: &[DescriptionKey], texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let _ = keys;
        self.embed(texts)
    }
}

/// Scales `v` to unit L2 norm; zero vectors are left untouched.
pub fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const HASH_DIM: usize = 64;
pub const HASH_NGRAM: usize = 3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic test embedder: lowercased character trigrams (with `#`
/// boundary padding) hashed into 64 buckets, counted, and L2-normalized.
#[derive(Clone, Copy, Debug, Default)]
pub struct HashEmbedder;

impl HashEmbedder {
    pub fn embed_one(text: &str) -> Vec<f32> {
        let padded: Vec<char> = std::iter::once('#')
            .chain(text.to_lowercase().chars())
            .chain(std::iter::once('#'))
            .collect();
        let mut v = vec![0f32; HASH_DIM];
        let mut gram = String::new();
        if padded.len() < HASH_NGRAM {
            gram.extend(padded.iter());
            v[(fnv1a(gram.as_bytes()) % HASH_DIM as u64) as usize] += 1.0;
        } else {
            for window in padded.windows(HASH_NGRAM) {
                gram.clear();
                gram.extend(window.iter());
                v[(fnv1a(gram.as_bytes()) % HASH_DIM as u64) as usize] += 1.0;
            }
        }
        l2_normalize(&mut v);
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> Option<usize> {
        Some(HASH_DIM)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| HashEmbedder::embed_one(t)).collect())
    }
}

/// Vectors loaded from a precomputed embedding file, keyed by description.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    dim: usize,
    vectors: HashMap<DescriptionKey, Vec<f32>>,
}

impl FileEmbedder {
    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|source| EmbedError::Io {
            path: display.clone(),
            source,
        })?;
        Self::read(BufReader::new(file), &display)
    }

    /// Parses `dim=<d>` followed by `<iri>\t<itemIndex>\t<base64 f32le[d]>`
    /// records.
    pub fn read(reader: impl BufRead, path: &str) -> Result<Self, EmbedError> {
        let mut lines = reader.lines().enumerate();
        let format_err = |line: usize, message: String| EmbedError::Format {
            path: path.to_string(),
            line,
            message,
        };
        let io_err = |source| EmbedError::Io {
            path: path.to_string(),
            source,
        };
        let header = match lines.next() {
            Some((_, line)) => line.map_err(io_err)?,
            None => return Err(format_err(1, "missing dim header".into())),
        };
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| format_err(1, format!("expected 'dim=<d>', found '{header}'")))?;

        let mut vectors = HashMap::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(iri), Some(item), Some(data), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(format_err(line_no, "expected 3 tab-separated fields".into()));
            };
            let entity = Iri::new(iri).map_err(|e| format_err(line_no, e.to_string()))?;
            let item_index: usize = item
                .parse()
                .map_err(|_| format_err(line_no, format!("invalid item index '{item}'")))?;
            let bytes = BASE64
                .decode(data.trim())
                .map_err(|e| format_err(line_no, format!("invalid base64: {e}")))?;
            if bytes.len() != dim * 4 {
                return Err(format_err(
                    line_no,
                    format!("vector has {} bytes, expected {}", bytes.len(), dim * 4),
                ));
            }
            let vector = decode_f32le(&bytes);
            vectors.insert(DescriptionKey { entity, item_index }, vector);
        }
        Ok(FileEmbedder { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for FileEmbedder {
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed(&self, _texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Err(EmbedError::KeysRequired)
    }

    fn embed_described(&self, keys: &[DescriptionKey], _texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        keys.iter()
            .map(|key| {
                self.vectors.get(key).cloned().ok_or_else(|| EmbedError::MissingKey {
                    entity: key.entity.clone(),
                    item_index: key.item_index,
                })
            })
            .collect()
    }
}

pub fn encode_f32le(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn decode_f32le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Writes records in the precomputed-embedding file format.
pub fn write_embedding_file<'a>(
    dim: usize,
    records: impl IntoIterator<Item = (&'a DescriptionKey, &'a [f32])>,
    mut out: impl Write,
) -> io::Result<()> {
    writeln!(out, "dim={dim}")?;
    for (key, vector) in records {
        writeln!(
            out,
            "{}\t{}\t{}",
            key.entity,
            key.item_index,
            BASE64.encode(encode_f32le(vector))
        )?;
    }
    Ok(())
}
