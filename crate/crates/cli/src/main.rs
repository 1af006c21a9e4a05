use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kgmatch::alignment::{read_alignment_file, write_oaei_xml, write_tsv};
use kgmatch::candidates::{topk_candidates, Descriptions};
use kgmatch::config::{ConfigError, EmbedderKind, RunConfig, RunMode, ScorerKind};
use kgmatch::eval::{evaluate, macro_micro, mcnemar_test};
use kgmatch::graph::parse_ntriples_file;
use kgmatch::lexical::{lexical_match, LexicalMode};
use kgmatch::pipeline::{
    candidate_options, make_embedder, make_scorer, run_end_to_end, run_match, run_train, score_options,
    PipelineError,
};
use kgmatch::rerank::score_alignment;
use kgmatch::text::PairingStrategy;
use kgmatch::training::TrainMode;
use tracing_subscriber::EnvFilter;

/// Knowledge graph matching: embedding-based candidate generation,
/// cross-encoder re-ranking and one-to-one assignment filtering.
#[derive(Parser)]
#[command(name = "kgmatch", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact label matcher (high-precision or baseline).
    MatchLexical {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "precision")]
        mode: LexicalMode,
        /// Output alignment TSV [default: <output-dir>/lexical.tsv].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Top-k embedding retrieval producing the candidate alignment.
    GenerateCandidates {
        #[command(flatten)]
        common: Common,
        /// Output alignment TSV [default: <output-dir>/candidates.tsv].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-score a candidate alignment with a pair scorer.
    Rerank {
        #[command(flatten)]
        common: Common,
        /// Candidate alignment (TSV or OAEI XML).
        #[arg(long)]
        candidates: PathBuf,
        /// Output alignment TSV [default: <output-dir>/scored.tsv].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Apply the filter chain to an alignment.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Input alignment (TSV or OAEI XML).
        #[arg(long)]
        input: PathBuf,
        /// Output alignment TSV [default: <output-dir>/alignment.tsv].
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the result in OAEI alignment format.
        #[arg(long)]
        xml: Option<PathBuf>,
    },
    /// Build the cross-encoder training file.
    TrainData {
        #[command(flatten)]
        common: Common,
    },
    /// Precision, recall and F1 against a reference, optionally with a
    /// McNemar comparison to a second system.
    Evaluate {
        /// System alignment (TSV or OAEI XML).
        #[arg(long)]
        system: PathBuf,
        /// Reference alignment (TSV or OAEI XML).
        #[arg(long)]
        reference: PathBuf,
        /// Second system alignment to compare against.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Write the JSON report to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the configured pipeline (training, matching or both).
    Run {
        #[command(flatten)]
        common: Common,
        /// train, match, evaluate or end2end [default: end2end].
        #[arg(long)]
        mode: Option<RunMode>,
    },
}

/// Configuration file plus overrides; command-line values win over the
/// file, which wins over defaults.
#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Source graph (N-Triples).
    #[arg(long)]
    source: Option<PathBuf>,
    /// Target graph (N-Triples).
    #[arg(long)]
    target: Option<PathBuf>,
    /// Reference alignment (TSV or OAEI XML).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Directory for all outputs [default: out].
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Nearest descriptions retrieved per description and direction [default: 5].
    #[arg(long)]
    k: Option<usize>,
    /// Text pairing: concat, cross or grouped [default: grouped].
    #[arg(long)]
    strategy: Option<PairingStrategy>,
    /// Confidence cut used by the default filter chain [default: 0.5].
    #[arg(long)]
    threshold: Option<f64>,
    /// Filter chain, e.g. "cut:0.5,mwb".
    #[arg(long)]
    filters: Option<String>,
    /// Seed for sampling and shuffling [default: 42].
    #[arg(long)]
    seed: Option<u64>,
    /// Embedding provider: hash, file or remote [default: hash].
    #[arg(long)]
    provider: Option<EmbedderKind>,
    /// Precomputed embedding file for `--provider file`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Inference service base URL for `--provider remote`.
    #[arg(long)]
    embed_url: Option<String>,
    /// Bi-encoder model id.
    #[arg(long)]
    embed_model: Option<String>,
    /// Pair scorer: mock or remote [default: mock].
    #[arg(long)]
    scorer: Option<ScorerKind>,
    /// Inference service base URL for `--scorer remote` and fine-tuning.
    #[arg(long)]
    score_url: Option<String>,
    /// Cross-encoder model id.
    #[arg(long)]
    score_model: Option<String>,
    /// Whitespace-token budget per text pair [default: 256].
    #[arg(long)]
    max_length: Option<usize>,
    /// Training positives: precision (lexical matcher) or reference [default: precision].
    #[arg(long)]
    train_mode: Option<TrainMode>,
    /// Share of the reference sampled as positives in reference mode [default: 0.2].
    #[arg(long)]
    sample_share: Option<f64>,
    /// Only candidates sharing exactly one endpoint with a positive become negatives.
    #[arg(long)]
    strict_one_endpoint: bool,
    /// Upload the training file for fine-tuning.
    #[arg(long)]
    finetune: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:expr => $value:expr),+ $(,)?) => {
                $(if let Some(v) = $value.clone() { $field = v; })+
            };
        }
        set!(
            c.k => self.k,
            c.strategy => self.strategy,
            c.threshold => self.threshold,
            c.seed => self.seed,
            c.embedder.kind => self.provider,
            c.embedder.model => self.embed_model,
            c.scorer.kind => self.scorer,
            c.scorer.model => self.score_model,
            c.scorer.max_length => self.max_length,
            c.training.mode => self.train_mode,
            c.training.sample_share => self.sample_share,
            c.output_dir => self.output_dir,
        );
        set!(
            c.source => self.source.clone().map(Some),
            c.target => self.target.clone().map(Some),
            c.reference => self.reference.clone().map(Some),
            c.filters => self.filters.clone().map(Some),
            c.embedder.path => self.embeddings.clone().map(Some),
            c.embedder.url => self.embed_url.clone().map(Some),
            c.scorer.url => self.score_url.clone().map(Some),
        );
        c.training.strict_one_endpoint |= self.strict_one_endpoint;
        c.training.finetune |= self.finetune;
        Ok(c)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_alignment(alignment: &kgmatch::Alignment, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    write_tsv(alignment, &mut out)?;
    out.flush()?;
    Ok(())
}

fn load_descriptions(config: &RunConfig) -> Result<(Descriptions, Descriptions)> {
    let load = |p: &Path| -> Result<Descriptions> {
        let g = parse_ntriples_file(p)?;
        for w in g.warnings() {
            tracing::warn!(graph = %p.display(), line = w.line, "{}", w.message);
        }
        Ok(Descriptions::from_graph(&g, config.max_depth))
    };
    Ok((
        load(config.source.as_deref().expect("validated"))?,
        load(config.target.as_deref().expect("validated"))?,
    ))
}

fn require_graphs(c: &RunConfig) -> Result<(), ConfigError> {
    for (name, path) in [("source", &c.source), ("target", &c.target)] {
        match path {
            None => return Err(ConfigError::Invalid(format!("--{name} is required"))),
            Some(p) if !p.is_file() => {
                return Err(ConfigError::Invalid(format!("{name} graph {} does not exist", p.display())))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<(), ConfigError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{what} {} does not exist", path.display())))
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::MatchLexical { common, mode, output } => {
            let c = common.resolve()?;
            require_graphs(&c)?;
            let g1 = parse_ntriples_file(c.source.as_deref().expect("validated"))?;
            let g2 = parse_ntriples_file(c.target.as_deref().expect("validated"))?;
            let alignment = lexical_match(&g1, &g2, mode);
            let path = output.unwrap_or_else(|| c.output_dir.join("lexical.tsv"));
            write_alignment(&alignment, &path)?;
            println!("{} correspondences -> {}", alignment.len(), path.display());
            if let Some(r) = &c.reference {
                let report = evaluate("lexical", &alignment, &read_alignment_file(r)?);
                println!("{}", macro_micro(vec![report])?.to_table());
            }
        }
        Command::GenerateCandidates { common, output } => {
            let c = common.resolve()?;
            require_graphs(&c)?;
            let (d1, d2) = load_descriptions(&c)?;
            let provider = make_embedder(&c)?;
            let set = topk_candidates(&d1, &d2, provider.as_ref(), &candidate_options(&c))?;
            let path = output.unwrap_or_else(|| c.output_dir.join("candidates.tsv"));
            write_alignment(&set.alignment, &path)?;
            println!("{} candidates -> {}", set.alignment.len(), path.display());
        }
        Command::Rerank { common, candidates, output } => {
            let c = common.resolve()?;
            require_graphs(&c)?;
            require_file(&candidates, "candidate alignment")?;
            let (d1, d2) = load_descriptions(&c)?;
            let cands = read_alignment_file(&candidates)?;
            let scorer = make_scorer(&c)?;
            let scored = score_alignment(&cands, &d1.bundles, &d2.bundles, scorer.as_ref(), &score_options(&c))?;
            let path = output.unwrap_or_else(|| c.output_dir.join("scored.tsv"));
            write_alignment(&scored.alignment, &path)?;
            println!("{} scored correspondences -> {}", scored.alignment.len(), path.display());
        }
        Command::Filter { common, input, output, xml } => {
            let c = common.resolve()?;
            require_file(&input, "input alignment")?;
            let chain = c.filter_chain()?;
            let alignment = chain.apply(&read_alignment_file(&input)?);
            let path = output.unwrap_or_else(|| c.output_dir.join("alignment.tsv"));
            write_alignment(&alignment, &path)?;
            if let Some(x) = xml {
                let mut out = create(&x)?;
                write_oaei_xml(&alignment, None, None, &mut out)?;
                out.flush()?;
            }
            println!("{:?}: {} correspondences -> {}", chain, alignment.len(), path.display());
        }
        Command::TrainData { common } => {
            let c = common.resolve()?;
            let (outcome, _) = run_train(&c)?;
            println!(
                "{} training pairs ({} positive correspondences, {} negative) -> {}",
                outcome.training.pairs.len(),
                outcome.training.positives.len(),
                outcome.training.negatives.len(),
                outcome.path.display()
            );
            if let Some(model) = outcome.finetuned_model {
                println!("fine-tuned model: {model}");
            }
        }
        Command::Evaluate { system, reference, compare, alpha, json } => {
            for (p, what) in [(&system, "system alignment"), (&reference, "reference alignment")] {
                require_file(p, what)?;
            }
            let sys = read_alignment_file(&system)?;
            let reference_alignment = read_alignment_file(&reference)?;
            let name = system.file_stem().map_or("system".into(), |s| s.to_string_lossy().into_owned());
            let mut report = macro_micro(vec![evaluate(name, &sys, &reference_alignment)])?;
            if let Some(other) = compare {
                require_file(&other, "comparison alignment")?;
                let other = read_alignment_file(&other)?;
                report.comparison = Some(mcnemar_test(&sys, &other, &reference_alignment, alpha)?);
            }
            print!("{}", report.to_table());
            if let Some(path) = json {
                let mut out = create(&path)?;
                serde_json::to_writer_pretty(&mut out, &report)?;
                writeln!(out)?;
                out.flush()?;
            }
        }
        Command::Run { common, mode } => {
            let mut c = common.resolve()?;
            if let Some(m) = mode {
                c.mode = m;
            }
            match c.mode {
                RunMode::Train => {
                    let (outcome, _) = run_train(&c)?;
                    println!("{} training pairs -> {}", outcome.training.pairs.len(), outcome.path.display());
                }
                RunMode::Match | RunMode::Evaluate => {
                    let (outcome, _) = run_match(&c)?;
                    println!("{} correspondences -> {}", outcome.alignment.len(), c.output_dir.display());
                    if let Some(report) = outcome.report {
                        print!("{}", report.to_table());
                    }
                }
                RunMode::End2end => {
                    let (train, matched, _) = run_end_to_end(&c)?;
                    println!(
                        "{} training pairs, {} correspondences -> {}",
                        train.training.pairs.len(),
                        matched.alignment.len(),
                        c.output_dir.display()
                    );
                    if let Some(report) = matched.report {
                        print!("{}", report.to_table());
                    }
                }
            }
        }
    }
    Ok(())
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<ConfigError>().is_some()
            || e.downcast_ref::<PipelineError>().is_some_and(PipelineError::is_config)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(io::stderr)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
