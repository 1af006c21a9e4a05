//! Stage orchestration for the training and matching flows, with a run
//! manifest recording timings, counts and the configuration hash.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::alignment::{read_alignment_file, write_oaei_xml, write_tsv, Alignment, AlignmentError};
use crate::candidates::{topk_candidates, CandidateError, CandidateOptions, Descriptions, EmbedOptions, PartitionStats};
use crate::config::{ConfigError, EmbedderKind, RunConfig, ScorerKind};
use crate::embed::{EmbedError, EmbeddingProvider, FileEmbedder, HashEmbedder};
use crate::eval::{evaluate, macro_micro, EvalError, EvalReport};
use crate::graph::{parse_ntriples_file, GraphError, KnowledgeGraph};
use crate::lexical::high_precision_match;
use crate::remote::{ClientOptions, FinetuneRequest, RemoteEmbedder, RemoteError, RemoteScorer, ServiceClient};
use crate::rerank::{score_alignment, write_scored_tsv, MockScorer, PairScorer, ScoreError, ScoreOptions};
use crate::text::write_bundles_tsv;
use crate::training::{
    assemble_training_set, sample_reference, write_training_tsv, Label, Provenance, TrainMode, TrainingError,
    TrainingSet,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Creates `path` and passes a buffered writer to `write`.
pub fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write(&mut out).and_then(|_| out.flush()).map_err(io_err(path))
}

#[derive(Clone, Debug, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub millis: u128,
    pub counts: BTreeMap<String, usize>,
}

/// Machine-readable record of one run. `complete` is false when a stage
/// failed; outputs listed up to that point may be partial.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub complete: bool,
    pub error: Option<String>,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<PathBuf>,
    pub partitions: Vec<PartitionStats>,
    pub finetuned_model: Option<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest {
            command: command.to_string(),
            config_hash: config.hash(),
            complete: false,
            error: None,
            stages: Vec::new(),
            outputs: Vec::new(),
            partitions: Vec::new(),
            finetuned_model: None,
        }
    }

    pub fn stage<T>(
        &mut self,
        name: &str,
        run: impl FnOnce() -> Result<T, PipelineError>,
        counts: impl FnOnce(&T) -> Vec<(&'static str, usize)>,
    ) -> Result<T, PipelineError> {
        let start = Instant::now();
        let value = run()?;
        let counts = counts(&value).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let millis = start.elapsed().as_millis();
        tracing::info!(stage = name, millis, "stage finished");
        self.stages.push(StageRecord {
            name: name.to_string(),
            millis,
            counts,
        });
        Ok(value)
    }

    pub fn count(&self, stage: &str, key: &str) -> Option<usize> {
        self.stages
            .iter()
            .find(|s| s.name == stage)
            .and_then(|s| s.counts.get(key).copied())
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let path = dir.join("manifest.json");
        write_file(&path, |out| {
            serde_json::to_writer_pretty(&mut *out, self).map_err(io::Error::other)?;
            writeln!(out)
        })
    }
}

pub fn make_embedder(config: &RunConfig) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
    Ok(match config.embedder.kind {
        EmbedderKind::Hash => Box::new(HashEmbedder),
        EmbedderKind::File => {
            let path = config
                .embedder
                .path
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("embedder kind 'file' needs embedder.path".into()))?;
            Box::new(FileEmbedder::open(path)?)
        }
        EmbedderKind::Remote => {
            let url = config
                .embedder
                .url
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("embedder kind 'remote' needs embedder.url".into()))?;
            Box::new(RemoteEmbedder::new(
                ServiceClient::new(url.clone(), ClientOptions::default()),
                config.embedder.model.clone(),
            ))
        }
    })
}

pub fn make_scorer(config: &RunConfig) -> Result<Box<dyn PairScorer>, PipelineError> {
    Ok(match config.scorer.kind {
        ScorerKind::Mock => Box::new(MockScorer {
            max_length: config.scorer.max_length,
        }),
        ScorerKind::Remote => {
            let url = config
                .scorer
                .url
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("scorer kind 'remote' needs scorer.url".into()))?;
            Box::new(RemoteScorer::new(
                ServiceClient::new(url.clone(), ClientOptions::default()),
                config.scorer.model.clone(),
                config.scorer.max_length,
            ))
        }
    })
}

pub fn candidate_options(config: &RunConfig) -> CandidateOptions {
    CandidateOptions {
        k: config.k,
        embed: EmbedOptions {
            batch_size: config.embedder.batch_size,
            in_flight: config.embedder.in_flight,
        },
    }
}

pub fn score_options(config: &RunConfig) -> ScoreOptions {
    ScoreOptions {
        strategy: config.strategy,
        batch_size: config.scorer.batch_size,
        in_flight: config.scorer.in_flight,
    }
}

/// Parsed graphs, their descriptions and the candidate alignment.
pub struct Prepared {
    pub source: KnowledgeGraph,
    pub target: KnowledgeGraph,
    pub source_descriptions: Descriptions,
    pub target_descriptions: Descriptions,
    pub candidates: Alignment,
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph, PipelineError> {
    let graph = parse_ntriples_file(path)?;
    for w in graph.warnings() {
        tracing::warn!(graph = %path.display(), line = w.line, "{}", w.message);
    }
    for conflict in graph.conflicts() {
        tracing::warn!(entity = %conflict.entity, chosen = %conflict.chosen, "conflicting kind declarations");
    }
    if graph.untyped_subjects() > 0 {
        tracing::info!(graph = %path.display(), count = graph.untyped_subjects(), "untyped subjects excluded from matching");
    }
    Ok(graph)
}

fn required<'a>(path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, PipelineError> {
    path.as_deref()
        .ok_or_else(|| ConfigError::Invalid(format!("{name} graph path is required")).into())
}

pub fn prepare(config: &RunConfig, manifest: &mut Manifest) -> Result<Prepared, PipelineError> {
    let out_dir = config.output_dir.clone();
    let (source, target) = manifest.stage(
        "parse",
        || {
            Ok((
                load_graph(required(&config.source, "source")?)?,
                load_graph(required(&config.target, "target")?)?,
            ))
        },
        |(s, t): &(KnowledgeGraph, KnowledgeGraph)| {
            vec![
                ("source_triples", s.len()),
                ("target_triples", t.len()),
                ("source_entities", s.entities().len()),
                ("target_entities", t.entities().len()),
                ("parse_warnings", s.warnings().len() + t.warnings().len()),
            ]
        },
    )?;
    let (source_descriptions, target_descriptions) = manifest.stage(
        "extract",
        || {
            let d1 = Descriptions::from_graph(&source, config.max_depth);
            let d2 = Descriptions::from_graph(&target, config.max_depth);
            let path = out_dir.join("descriptions.tsv");
            write_file(&path, |out| write_bundles_tsv(d1.bundles.values().chain(d2.bundles.values()), out))?;
            Ok((d1, d2))
        },
        |(d1, d2): &(Descriptions, Descriptions)| {
            vec![("source_entities", d1.len()), ("target_entities", d2.len())]
        },
    )?;
    manifest.outputs.push(out_dir.join("descriptions.tsv"));

    let provider = make_embedder(config)?;
    let set = manifest.stage(
        "candidates",
        || Ok(topk_candidates(&source_descriptions, &target_descriptions, provider.as_ref(), &candidate_options(config))?),
        |set| {
            vec![
                ("candidates", set.alignment.len()),
                ("bound", config.k * (source_descriptions.len() + target_descriptions.len())),
            ]
        },
    )?;
    let path = out_dir.join("candidates.tsv");
    write_file(&path, |out| write_tsv(&set.alignment, out))?;
    manifest.outputs.push(path);
    manifest.partitions = set.partitions;
    Ok(Prepared {
        source,
        target,
        source_descriptions,
        target_descriptions,
        candidates: set.alignment,
    })
}

pub struct MatchOutcome {
    pub alignment: Alignment,
    pub report: Option<EvalReport>,
}

/// Re-ranks the prepared candidates, applies the filter chain, writes the
/// alignment and, with a reference, the evaluation.
pub fn match_prepared(config: &RunConfig, prepared: &Prepared, manifest: &mut Manifest) -> Result<MatchOutcome, PipelineError> {
    let out_dir = &config.output_dir;
    let chain = config.filter_chain()?;
    let scorer = make_scorer(config)?;
    let scored = manifest.stage(
        "rerank",
        || {
            Ok(score_alignment(
                &prepared.candidates,
                &prepared.source_descriptions.bundles,
                &prepared.target_descriptions.bundles,
                scorer.as_ref(),
                &score_options(config),
            )?)
        },
        |s| vec![("scored", s.alignment.len()), ("pairs", s.details.values().map(|d| d.pairs).sum())],
    )?;
    let path = out_dir.join("scored.tsv");
    write_file(&path, |out| write_tsv(&scored.alignment, out))?;
    manifest.outputs.push(path);
    let path = out_dir.join("scored_pairs.tsv");
    write_file(&path, |out| write_scored_tsv(&scored, out))?;
    manifest.outputs.push(path);

    let alignment = manifest.stage(
        "filter",
        || Ok(chain.apply(&scored.alignment)),
        |a| vec![("alignment", a.len())],
    )?;
    let tsv = out_dir.join("alignment.tsv");
    write_file(&tsv, |out| write_tsv(&alignment, out))?;
    let xml = out_dir.join("alignment.rdf");
    write_file(&xml, |out| write_oaei_xml(&alignment, None, None, out))?;
    manifest.outputs.extend([tsv, xml]);

    let report = match &config.reference {
        Some(path) => {
            let reference = read_alignment_file(path)?;
            let report = macro_micro(vec![evaluate(
                format!("{}-{}", prepared.source.id, prepared.target.id),
                &alignment,
                &reference,
            )])?;
            let json = out_dir.join("evaluation.json");
            write_file(&json, |out| {
                serde_json::to_writer_pretty(&mut *out, &report).map_err(io::Error::other)?;
                writeln!(out)
            })?;
            manifest.outputs.push(json);
            Some(report)
        }
        None => None,
    };
    Ok(MatchOutcome { alignment, report })
}

pub struct TrainOutcome {
    pub training: TrainingSet,
    pub path: PathBuf,
    pub finetuned_model: Option<String>,
}

/// Builds and writes the training file from the prepared candidates; with
/// fine-tuning enabled, uploads it and returns the new model id.
pub fn train_prepared(config: &RunConfig, prepared: &Prepared, manifest: &mut Manifest) -> Result<TrainOutcome, PipelineError> {
    let out_dir = &config.output_dir;
    let (positives, provenance) = match config.training.mode {
        TrainMode::Reference => {
            let path = config.reference.as_ref().ok_or(TrainingError::MissingReference)?;
            let reference = read_alignment_file(path)?;
            let sample = sample_reference(&reference, config.training.sample_share, config.seed)?;
            let sample_path = out_dir.join("reference_sample.tsv");
            write_file(&sample_path, |out| write_tsv(&sample, out))?;
            manifest.outputs.push(sample_path);
            (sample, Provenance::ReferenceSampled)
        }
        TrainMode::PrecisionMatcher => (
            high_precision_match(&prepared.source, &prepared.target),
            Provenance::PrecisionMatched,
        ),
    };
    let training = manifest.stage(
        "training-set",
        || {
            Ok(assemble_training_set(
                positives,
                provenance,
                &prepared.candidates,
                &prepared.source_descriptions.bundles,
                &prepared.target_descriptions.bundles,
                config.strategy,
                config.training.strict_one_endpoint,
                config.seed,
            )?)
        },
        |t| {
            vec![
                ("positive_correspondences", t.positives.len()),
                ("negative_correspondences", t.negatives.len()),
                ("positive_pairs", t.count(Label::Positive)),
                ("negative_pairs", t.count(Label::Negative)),
            ]
        },
    )?;
    let path = out_dir.join("training.tsv");
    write_file(&path, |out| write_training_tsv(&training.pairs, out))?;
    manifest.outputs.push(path.clone());

    let mut finetuned_model = None;
    if config.training.finetune {
        let url = config
            .scorer
            .url
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("fine-tuning needs scorer.url".into()))?;
        let contents = fs::read_to_string(&path).map_err(io_err(&path))?;
        let client = ServiceClient::new(url.clone(), ClientOptions::default());
        let response = manifest.stage(
            "finetune",
            || {
                Ok(client.finetune(&FinetuneRequest {
                    base_model_id: config.training.base_model.clone(),
                    training_file: contents,
                    epochs: config.training.epochs,
                    seed: config.seed,
                })?)
            },
            |r| vec![("chosen_batch_size", r.chosen_batch_size)],
        )?;
        tracing::info!(model = %response.model_id, loss = response.train_loss_final, "fine-tuning finished");
        manifest.finetuned_model = Some(response.model_id.clone());
        finetuned_model = Some(response.model_id);
    }
    Ok(TrainOutcome {
        training,
        path,
        finetuned_model,
    })
}

/// Runs `body`, then writes the manifest whether or not it succeeded.
fn with_manifest<T>(
    command: &str,
    config: &RunConfig,
    body: impl FnOnce(&mut Manifest) -> Result<T, PipelineError>,
) -> Result<(T, Manifest), PipelineError> {
    let mut manifest = Manifest::new(command, config);
    let result = body(&mut manifest);
    match &result {
        Ok(_) => manifest.complete = true,
        Err(e) => manifest.error = Some(e.to_string()),
    }
    let written = manifest.write(&config.output_dir);
    let value = result?;
    written?;
    Ok((value, manifest))
}

pub fn run_match(config: &RunConfig) -> Result<(MatchOutcome, Manifest), PipelineError> {
    config.validate()?;
    with_manifest("match", config, |m| {
        let prepared = prepare(config, m)?;
        match_prepared(config, &prepared, m)
    })
}

pub fn run_train(config: &RunConfig) -> Result<(TrainOutcome, Manifest), PipelineError> {
    config.validate()?;
    with_manifest("train", config, |m| {
        let prepared = prepare(config, m)?;
        train_prepared(config, &prepared, m)
    })
}

/// Training followed by matching over the same candidates. A fine-tuned
/// model, when produced, replaces the configured remote scorer model.
pub fn run_end_to_end(config: &RunConfig) -> Result<(TrainOutcome, MatchOutcome, Manifest), PipelineError> {
    config.validate()?;
    let ((train, matched), manifest) = with_manifest("run", config, |m| {
        let prepared = prepare(config, m)?;
        let train = train_prepared(config, &prepared, m)?;
        let mut match_config = config.clone();
        if let (Some(model), ScorerKind::Remote) = (&train.finetuned_model, config.scorer.kind) {
            match_config.scorer.model = model.clone();
        }
        let matched = match_prepared(&match_config, &prepared, m)?;
        Ok((train, matched))
    })?;
    Ok((train, matched, manifest))
}
