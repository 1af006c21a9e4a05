//! Parsing, extraction, matching and training over the toy fixture graphs.

use std::path::{Path, PathBuf};

use kgmatch::alignment::read_alignment_file;
use kgmatch::candidates::{topk_candidates, CandidateOptions, Descriptions};
use kgmatch::config::{RunConfig, RunMode};
use kgmatch::embed::HashEmbedder;
use kgmatch::graph::parse_ntriples_file;
use kgmatch::lexical::{baseline_match, high_precision_match};
use kgmatch::pipeline::{run_end_to_end, run_match, run_train};
use kgmatch::training::{read_training_tsv, Label, TrainMode};
use kgmatch::{EntityKind, Iri};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn iri(s: &str) -> Iri {
    Iri::new(s).unwrap()
}

fn config(out: &Path) -> RunConfig {
    RunConfig {
        source: Some(fixture("source.nt")),
        target: Some(fixture("target.nt")),
        reference: Some(fixture("reference.tsv")),
        output_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

#[test]
fn fixtures_parse_and_classify() {
    let g = parse_ntriples_file(&fixture("source.nt")).unwrap();
    assert!(g.warnings().is_empty());
    assert_eq!(g.entities_of_kind(EntityKind::Class).count(), 10);
    assert_eq!(g.kind_of(&iri("http://example.org/mouse#partOf")), Some(EntityKind::ObjectProperty));
    assert_eq!(g.kind_of(&iri("http://example.org/mouse#weight")), Some(EntityKind::DatatypeProperty));
}

#[test]
fn lexical_matchers_on_fixtures() {
    let g1 = parse_ntriples_file(&fixture("source.nt")).unwrap();
    let g2 = parse_ntriples_file(&fixture("target.nt")).unwrap();
    let baseline = baseline_match(&g1, &g2);
    let precise = high_precision_match(&g1, &g2);
    // "skin" also labels the target's skin appendage, so only the baseline keeps it.
    let skin = iri("http://example.org/mouse#MA_9");
    assert!(baseline.has_source(&skin));
    assert!(!precise.has_source(&skin));
    assert!(precise.is_subset_of(&baseline));
    assert!(precise.is_one_to_one());
    let reference = read_alignment_file(&fixture("reference.tsv")).unwrap();
    assert!(precise.is_subset_of(&reference));
    assert!(precise.contains(&iri("http://example.org/mouse#partOf"), &iri("http://example.org/human#part_of")));
}

#[test]
fn candidates_respect_kinds_bound_and_monotonicity() {
    let g1 = parse_ntriples_file(&fixture("source.nt")).unwrap();
    let g2 = parse_ntriples_file(&fixture("target.nt")).unwrap();
    let d1 = Descriptions::from_graph(&g1, 3);
    let d2 = Descriptions::from_graph(&g2, 3);
    let at = |k| {
        topk_candidates(&d1, &d2, &HashEmbedder, &CandidateOptions { k, ..CandidateOptions::default() })
            .unwrap()
            .alignment
    };
    let (one, five) = (at(1), at(5));
    assert!(one.is_subset_of(&five));
    assert!(one.len() <= d1.len() + d2.len());
    assert!(five.len() <= 5 * (d1.len() + d2.len()));
    for c in five.iter() {
        assert_eq!(g1.kind_of(&c.source), g2.kind_of(&c.target));
    }
    let reference = read_alignment_file(&fixture("reference.tsv")).unwrap();
    assert!(reference.is_subset_of(&five));
}

#[test]
fn match_run_writes_outputs_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.mode = RunMode::Match;
    let (outcome, manifest) = run_match(&c).unwrap();
    for name in ["descriptions.tsv", "candidates.tsv", "scored.tsv", "scored_pairs.tsv", "alignment.tsv", "alignment.rdf", "evaluation.json", "manifest.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    assert!(manifest.complete);
    assert!(outcome.alignment.is_one_to_one());
    assert!(outcome.alignment.iter().all(|c| c.confidence >= 0.5));
    let cells = |a: &kgmatch::Alignment| a.iter().map(|c| (c.key(), c.confidence)).collect::<Vec<_>>();
    assert_eq!(cells(&read_alignment_file(&dir.path().join("alignment.tsv")).unwrap()), cells(&outcome.alignment));
    assert_eq!(read_alignment_file(&dir.path().join("alignment.rdf")).unwrap().len(), outcome.alignment.len());
    let report = outcome.report.unwrap();
    assert!(report.micro_avg.precision >= 0.8, "{}", report.to_table());
    let names: Vec<&str> = manifest.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["parse", "extract", "candidates", "rerank", "filter"]);
    assert!(manifest.count("candidates", "candidates").unwrap() <= manifest.count("candidates", "bound").unwrap());
}

#[test]
fn training_modes_write_labelled_files() {
    for mode in [TrainMode::PrecisionMatcher, TrainMode::Reference] {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path());
        c.mode = RunMode::Train;
        c.training.mode = mode;
        c.training.sample_share = 0.5;
        let (outcome, _) = run_train(&c).unwrap();
        let text = std::fs::read_to_string(&outcome.path).unwrap();
        let pairs = read_training_tsv(text.as_bytes(), "training.tsv").unwrap();
        assert_eq!(pairs.len(), outcome.training.pairs.len());
        assert!(pairs.iter().any(|p| p.label() == Label::Positive));
        assert!(pairs.iter().any(|p| p.label() == Label::Negative), "{mode}");
        assert_eq!(dir.path().join("reference_sample.tsv").is_file(), mode == TrainMode::Reference);
    }
}

#[test]
fn end_to_end_is_deterministic() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        run_end_to_end(&config(dir.path())).unwrap();
        let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
        (read("alignment.tsv"), read("training.tsv"), read("candidates.tsv"))
    };
    let first = run();
    assert_eq!(first, run());
}

#[test]
fn invalid_configuration_is_reported_as_such() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.target = Some(dir.path().join("missing.nt"));
    let err = run_match(&c).err().unwrap();
    assert!(err.is_config());
    assert!(!dir.path().join("manifest.json").exists());
}
