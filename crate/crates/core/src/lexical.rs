//! String matchers: the high-precision matcher used as a source of training
//! positives, and a plain exact-label baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::alignment::{Alignment, Correspondence};
use crate::graph::{EntityKind, Iri, KnowledgeGraph};
use crate::text::{label_literals, normalize_label, prefer_english};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LexicalMode {
    /// Exact key match, then drop every correspondence whose source or
    /// target takes part in more than one match.
    Precision,
    /// Exact key match only.
    Baseline,
}

impl FromStr for LexicalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "precision" => Ok(LexicalMode::Precision),
            "baseline" => Ok(LexicalMode::Baseline),
            other => Err(format!("unknown lexical mode '{other}' (precision|baseline)")),
        }
    }
}

impl fmt::Display for LexicalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LexicalMode::Precision => "precision",
            LexicalMode::Baseline => "baseline",
        })
    }
}

/// Normalized fragment plus normalized label-like literals; empty keys are
/// never produced.
pub fn match_keys(graph: &KnowledgeGraph, entity: &Iri) -> BTreeSet<String> {
    let literals: Vec<_> = label_literals(graph, entity).collect();
    let english_only = prefer_english(&literals);
    literals
        .into_iter()
        .filter(|l| !english_only || l.is_english_or_untagged())
        .map(|l| normalize_label(&l.lexical))
        .chain(std::iter::once(normalize_label(entity.fragment())))
        .filter(|k| !k.is_empty())
        .collect()
}

fn key_index(graph: &KnowledgeGraph, kind: EntityKind) -> BTreeMap<String, BTreeSet<Iri>> {
    let mut index: BTreeMap<String, BTreeSet<Iri>> = BTreeMap::new();
    for entity in graph.entities_of_kind(kind) {
        for key in match_keys(graph, entity) {
            index.entry(key).or_default().insert(entity.clone());
        }
    }
    index
}

/// Entities of the same kind that share at least one normalized key.
pub fn baseline_match(source: &KnowledgeGraph, target: &KnowledgeGraph) -> Alignment {
    let mut alignment = Alignment::new();
    for kind in EntityKind::ALL {
        let target_index = key_index(target, kind);
        if target_index.is_empty() {
            continue;
        }
        for entity in source.entities_of_kind(kind) {
            for key in match_keys(source, entity) {
                let Some(targets) = target_index.get(&key) else {
                    continue;
                };
                for t in targets {
                    alignment.insert(Correspondence::new(entity.clone(), t.clone(), 1.0).with_kind(kind));
                }
            }
        }
    }
    alignment
}

/// [`baseline_match`] restricted to correspondences whose endpoints are both
/// matched exactly once.
pub fn high_precision_match(source: &KnowledgeGraph, target: &KnowledgeGraph) -> Alignment {
    let mut alignment = baseline_match(source, target);
    let ambiguous: Vec<(Iri, Iri)> = alignment
        .iter()
        .filter(|c| {
            alignment.targets_of(&c.source).map_or(0, |s| s.len()) > 1
                || alignment.sources_of(&c.target).map_or(0, |s| s.len()) > 1
        })
        .map(|c| c.key())
        .collect();
    for (s, t) in ambiguous {
        alignment.remove(&s, &t);
    }
    alignment
}

pub fn lexical_match(source: &KnowledgeGraph, target: &KnowledgeGraph, mode: LexicalMode) -> Alignment {
    match mode {
        LexicalMode::Precision => high_precision_match(source, target),
        LexicalMode::Baseline => baseline_match(source, target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_ntriples;

    const TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
    const CLASS: &str = "http://www.w3.org/2002/07/owl#Class";
    const LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";

    fn g(nt: String) -> KnowledgeGraph {
        parse_ntriples("t", nt.as_bytes()).unwrap()
    }

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    #[test]
    fn fragment_matches_label() {
        let g1 = g(format!("<http://a/o#Heart> <{TYPE}> <{CLASS}> .\n"));
        let g2 = g(format!(
            "<http://b/o#C1> <{TYPE}> <{CLASS}> .\n<http://b/o#C1> <{LABEL}> \"heart\" .\n"
        ));
        let a = high_precision_match(&g1, &g2);
        assert_eq!(a.len(), 1);
        let c = a.iter().next().unwrap();
        assert_eq!((c.source.as_str(), c.target.as_str()), ("http://a/o#Heart", "http://b/o#C1"));
        assert_eq!(c.confidence, 1.0);
        assert_eq!(c.kind, Some(EntityKind::Class));
    }

    #[test]
    fn one_to_many_dropped_by_precision_kept_by_baseline() {
        let g1 = g(format!("<http://a/o#Cell> <{TYPE}> <{CLASS}> .\n"));
        let g2 = g(format!(
            "<http://b/o#Cell> <{TYPE}> <{CLASS}> .\n\
             <http://b/o#X> <{TYPE}> <{CLASS}> .\n<http://b/o#X> <{LABEL}> \"cell\" .\n"
        ));
        assert!(high_precision_match(&g1, &g2).is_empty());
        let base = baseline_match(&g1, &g2);
        assert_eq!(base.len(), 2);
        assert!(high_precision_match(&g1, &g2).is_subset_of(&base));
    }

    #[test]
    fn kinds_are_isolated() {
        let g1 = g(format!("<http://a/o#Heart> <{TYPE}> <{CLASS}> .\n"));
        let g2 = g(format!(
            "<http://b/o#T> <{TYPE}> <{CLASS}> .\n<http://b/o#Heart> <{TYPE}> <http://b/o#T> .\n"
        ));
        assert_eq!(g2.kind_of(&iri("http://b/o#Heart")), Some(EntityKind::Instance));
        assert!(high_precision_match(&g1, &g2).is_empty());
        assert!(baseline_match(&g1, &g2).is_empty());
    }

    #[test]
    fn empty_graphs() {
        let empty = g(String::new());
        assert!(baseline_match(&empty, &empty).is_empty());
        assert!(high_precision_match(&empty, &empty).is_empty());
    }

    #[test]
    fn symmetric_under_swap() {
        let g1 = g(format!(
            "<http://a/o#Heart> <{TYPE}> <{CLASS}> .\n<http://a/o#Lung> <{TYPE}> <{CLASS}> .\n\
             <http://a/o#Cell> <{TYPE}> <{CLASS}> .\n"
        ));
        let g2 = g(format!(
            "<http://b/o#heart> <{TYPE}> <{CLASS}> .\n<http://b/o#lung> <{TYPE}> <{CLASS}> .\n\
             <http://b/o#Cell> <{TYPE}> <{CLASS}> .\n<http://b/o#Z> <{TYPE}> <{CLASS}> .\n\
             <http://b/o#Z> <{LABEL}> \"cell\" .\n"
        ));
        let forward = high_precision_match(&g1, &g2);
        let backward = high_precision_match(&g2, &g1);
        assert_eq!(forward.len(), 2);
        assert_eq!(backward.transposed(), forward);
        assert!(forward.is_one_to_one());
    }

    #[test]
    fn empty_keys_never_match() {
        let g1 = g(format!("<http://a/o#> <{TYPE}> <{CLASS}> .\n<http://a/o#> <{LABEL}> \"--\" .\n"));
        let g2 = g(format!("<http://b/o#> <{TYPE}> <{CLASS}> .\n"));
        assert!(baseline_match(&g1, &g2).is_empty());
    }
}
