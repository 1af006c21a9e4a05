//! HTTP clients for the model-inference sidecar: `/embed`, `/score`,
//! `/finetune` and `GET /health`.

use std::collections::BTreeMap;
use std::io::Read;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{decode_f32le, EmbedError, EmbeddingProvider};
use crate::rerank::{PairScorer, ScoreError};

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("request to {url} failed: {message}")]
    Transport { url: String, message: String },
    #[error("{url} returned HTTP {status}: {body}")]
    Status { url: String, status: u16, body: String },
    #[error("{url} rejected the batch as too large (max batch {max_batch:?})")]
    PayloadTooLarge { url: String, max_batch: Option<usize> },
    #[error("invalid response from {url}: {message}")]
    InvalidResponse { url: String, message: String },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct EmbedRequest {
    pub model_id: String,
    pub texts: Vec<String>,
}

/// Vectors are base64-encoded little-endian float32 arrays.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct ScoreRequest {
    pub model_id: String,
    pub pairs: Vec<(String, String)>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

/// `training_file` carries the training TSV contents.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct FinetuneRequest {
    pub base_model_id: String,
    pub training_file: String,
    pub epochs: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct FinetuneResponse {
    pub model_id: String,
    pub chosen_batch_size: usize,
    pub train_loss_final: f64,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct Health {
    pub status: String,
    #[serde(default)]
    pub loaded_models: Vec<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct TooLargeBody {
    max_batch_size: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct ClientOptions {
    pub timeout: Duration,
    /// Extra attempts after a transport error or 5xx response.
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            timeout: Duration::from_secs(300),
            retries: 2,
            backoff: Duration::from_millis(500),
        }
    }
}

/// JSON-over-HTTP client bound to one service base URL.
#[derive(Clone, Debug)]
pub struct ServiceClient {
    base_url: String,
    agent: ureq::Agent,
    options: ClientOptions,
}

impl ServiceClient {
    pub fn new(base_url: impl Into<String>, options: ClientOptions) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(options.timeout))
            .build()
            .into();
        ServiceClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            options,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }

    fn with_retries<T>(&self, url: &str, mut attempt: impl FnMut() -> Result<T, RemoteError>) -> Result<T, RemoteError> {
        let mut tries = 0;
        loop {
            match attempt() {
                Err(err) if tries < self.options.retries && is_retryable(&err) => {
                    tries += 1;
                    tracing::warn!(%url, attempt = tries, error = %err, "retrying request");
                    std::thread::sleep(self.options.backoff * tries);
                }
                other => return other,
            }
        }
    }

    pub fn post_json<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, RemoteError> {
        let url = self.url(path);
        self.with_retries(&url, || {
            let response = self
                .agent
                .post(&url)
                .send_json(body)
                .map_err(|e| RemoteError::Transport {
                    url: url.clone(),
                    message: e.to_string(),
                })?;
            read_response(&url, response)
        })
    }

    pub fn get_json<Resp: DeserializeOwned>(&self, path: &str) -> Result<Resp, RemoteError> {
        let url = self.url(path);
        self.with_retries(&url, || {
            let response = self.agent.get(&url).call().map_err(|e| RemoteError::Transport {
                url: url.clone(),
                message: e.to_string(),
            })?;
            read_response(&url, response)
        })
    }

    pub fn health(&self) -> Result<Health, RemoteError> {
        self.get_json("/health")
    }

    pub fn finetune(&self, request: &FinetuneRequest) -> Result<FinetuneResponse, RemoteError> {
        let response: FinetuneResponse = self.post_json("/finetune", request)?;
        if response.chosen_batch_size < 4 || !response.chosen_batch_size.is_power_of_two() {
            return Err(RemoteError::InvalidResponse {
                url: self.url("/finetune"),
                message: format!("chosen batch size {} is not a power of two >= 4", response.chosen_batch_size),
            });
        }
        Ok(response)
    }
}

fn is_retryable(err: &RemoteError) -> bool {
    match err {
        RemoteError::Transport { .. } => true,
        RemoteError::Status { status, .. } => *status >= 500,
        _ => false,
    }
}

fn read_response<Resp: DeserializeOwned>(url: &str, mut response: ureq::http::Response<ureq::Body>) -> Result<Resp, RemoteError> {
    let status = response.status().as_u16();
    let mut body = String::new();
    response
        .body_mut()
        .as_reader()
        .read_to_string(&mut body)
        .map_err(|e| RemoteError::Transport {
            url: url.to_string(),
            message: e.to_string(),
        })?;
    if status == 413 {
        let max_batch = serde_json::from_str::<TooLargeBody>(&body).ok().and_then(|b| b.max_batch_size);
        return Err(RemoteError::PayloadTooLarge {
            url: url.to_string(),
            max_batch,
        });
    }
    if !(200..300).contains(&status) {
        return Err(RemoteError::Status {
            url: url.to_string(),
            status,
            body,
        });
    }
    serde_json::from_str(&body).map_err(|e| RemoteError::InvalidResponse {
        url: url.to_string(),
        message: e.to_string(),
    })
}

/// Splits `items` into chunks and calls `send` on each; a 413 answer with a
/// maximum batch size (or, lacking one, half the current size) shrinks the
/// chunk size and resends.
fn send_rebatching<T, R>(
    items: &[T],
    mut send: impl FnMut(&[T]) -> Result<Vec<R>, RemoteError>,
) -> Result<Vec<R>, RemoteError> {
    let mut out = Vec::with_capacity(items.len());
    let mut chunk = items.len().max(1);
    let mut start = 0;
    while start < items.len() {
        let end = (start + chunk).min(items.len());
        match send(&items[start..end]) {
            Ok(results) => {
                out.extend(results);
                start = end;
            }
            Err(RemoteError::PayloadTooLarge { url, max_batch }) => {
                let smaller = max_batch.unwrap_or((end - start) / 2).min(end - start - 1);
                if smaller == 0 {
                    return Err(RemoteError::PayloadTooLarge { url, max_batch });
                }
                tracing::debug!(from = end - start, to = smaller, "rebatching after 413");
                chunk = smaller;
            }
            Err(err) => return Err(err),
        }
    }
    Ok(out)
}

/// Bi-encoder provider backed by `POST /embed`.
#[derive(Clone, Debug)]
pub struct RemoteEmbedder {
    client: ServiceClient,
    model_id: String,
}

impl RemoteEmbedder {
    pub fn new(client: ServiceClient, model_id: impl Into<String>) -> Self {
        RemoteEmbedder {
            client,
            model_id: model_id.into(),
        }
    }

    fn embed_chunk(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, RemoteError> {
        let request = EmbedRequest {
            model_id: self.model_id.clone(),
            texts: texts.iter().map(|t| t.to_string()).collect(),
        };
        let response: EmbedResponse = self.client.post_json("/embed", &request)?;
        let invalid = |message: String| RemoteError::InvalidResponse {
            url: self.client.url("/embed"),
            message,
        };
        if response.vectors.len() != texts.len() {
            return Err(invalid(format!("{} vectors for {} texts", response.vectors.len(), texts.len())));
        }
        response
            .vectors
            .iter()
            .map(|encoded| {
                let bytes = BASE64.decode(encoded).map_err(|e| invalid(format!("invalid base64: {e}")))?;
                if bytes.len() != response.dim * 4 {
                    return Err(invalid(format!("vector of {} bytes, dim {}", bytes.len(), response.dim)));
                }
                Ok(decode_f32le(&bytes))
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> Option<usize> {
        None
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        send_rebatching(texts, |chunk| self.embed_chunk(chunk)).map_err(|e| EmbedError::Provider(e.to_string()))
    }
}

/// Cross-encoder scorer backed by `POST /score`.
#[derive(Clone, Debug)]
pub struct RemoteScorer {
    client: ServiceClient,
    model_id: String,
    max_length: usize,
}

impl RemoteScorer {
    pub fn new(client: ServiceClient, model_id: impl Into<String>, max_length: usize) -> Self {
        RemoteScorer {
            client,
            model_id: model_id.into(),
            max_length,
        }
    }

    fn score_chunk(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, RemoteError> {
        let request = ScoreRequest {
            model_id: self.model_id.clone(),
            pairs: pairs.to_vec(),
        };
        let response: ScoreResponse = self.client.post_json("/score", &request)?;
        let invalid = |message: String| RemoteError::InvalidResponse {
            url: self.client.url("/score"),
            message,
        };
        if response.scores.len() != pairs.len() {
            return Err(invalid(format!("{} scores for {} pairs", response.scores.len(), pairs.len())));
        }
        if let Some(bad) = response.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(invalid(format!("score {bad} outside [0, 1]")));
        }
        Ok(response.scores)
    }
}

impl PairScorer for RemoteScorer {
    fn max_length(&self) -> usize {
        self.max_length
    }

    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ScoreError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        send_rebatching(pairs, |chunk| self.score_chunk(chunk)).map_err(|e| ScoreError::Scorer(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_names_are_camel_case() {
        let req = FinetuneRequest {
            base_model_id: "m".into(),
            training_file: "x".into(),
            epochs: 1,
            seed: 7,
        };
        let json = serde_json::to_value(&req).unwrap();
        assert_eq!(json["baseModelId"], "m");
        assert_eq!(json["trainingFile"], "x");
        let score = ScoreRequest {
            model_id: "m".into(),
            pairs: vec![("a".into(), "b".into())],
        };
        assert_eq!(serde_json::to_string(&score).unwrap(), r#"{"modelId":"m","pairs":[["a","b"]]}"#);
    }

    #[test]
    fn rebatching_splits_until_accepted() {
        let items: Vec<u32> = (0..10).collect();
        let mut sizes = Vec::new();
        let out = send_rebatching(&items, |chunk| {
            sizes.push(chunk.len());
            if chunk.len() > 3 {
                Err(RemoteError::PayloadTooLarge {
                    url: "u".into(),
                    max_batch: None,
                })
            } else {
                Ok(chunk.iter().map(|x| x * 2).collect())
            }
        })
        .unwrap();
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(sizes, vec![10, 5, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn rebatching_gives_up_at_one() {
        let err = send_rebatching(&[1, 2], |_: &[i32]| -> Result<Vec<i32>, _> {
            Err(RemoteError::PayloadTooLarge {
                url: "u".into(),
                max_batch: Some(0),
            })
        })
        .unwrap_err();
        assert!(matches!(err, RemoteError::PayloadTooLarge { .. }));
    }
}
