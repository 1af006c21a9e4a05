//! Textual descriptions of entities: normalization, extraction, pairing.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{vocab, Iri, KnowledgeGraph, Literal, Object, Subject, Triple};

pub const DEFAULT_MAX_DEPTH: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("entity {0} has no usable text (empty fragment, no literals)")]
    EmptyBundle(Iri),
}

/// Splits camel case, turns every non-alphanumeric character into a space,
/// lowercases, and collapses whitespace.
///
/// ```
/// use kgmatch::text::normalize_label;
/// assert_eq!(normalize_label("MyocardialInfarction"), "myocardial infarction");
/// assert_eq!(normalize_label("has_part-Of"), "has part of");
/// ```
pub fn normalize_label(raw: &str) -> String {
    // Only letters that change under lowercasing mark camel-case boundaries.
    let is_upper = |c: char| c.is_uppercase() && c.to_lowercase().ne(std::iter::once(c));
    let chars: Vec<char> = raw.chars().collect();
    let mut spaced = String::with_capacity(raw.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            spaced.push(' ');
            continue;
        }
        if is_upper(c) && i > 0 {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || prev.is_numeric() || (is_upper(prev) && next_lower) {
                spaced.push(' ');
            }
        }
        for lc in c.to_lowercase() {
            spaced.push(if lc.is_alphanumeric() { lc } else { ' ' });
        }
    }
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TextGroup {
    Short,
    Long,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TextOrigin {
    Fragment,
    LabelProperty,
    AnnotationProperty,
    CommentProperty,
    LongestLiteral,
}

impl TextOrigin {
    pub fn group(self) -> TextGroup {
        match self {
            TextOrigin::Fragment | TextOrigin::LabelProperty | TextOrigin::AnnotationProperty => {
                TextGroup::Short
            }
            TextOrigin::CommentProperty | TextOrigin::LongestLiteral => TextGroup::Long,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextItem {
    /// Verbatim text; this is what gets embedded and scored.
    pub text: String,
    pub normalized: String,
    pub origin: TextOrigin,
}

impl TextItem {
    pub fn new(text: impl Into<String>, origin: TextOrigin) -> Self {
        let text = text.into();
        let normalized = normalize_label(&text);
        TextItem {
            text,
            normalized,
            origin,
        }
    }

    pub fn group(&self) -> TextGroup {
        self.origin.group()
    }
}

/// The deduplicated texts of one entity. Never empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextBundle {
    pub entity: Iri,
    items: Vec<TextItem>,
}

impl TextBundle {
    /// Keeps the first item per normalized form and drops items that
    /// normalize to the empty string.
    pub fn new(entity: Iri, items: impl IntoIterator<Item = TextItem>) -> Result<Self, ExtractError> {
        let mut seen = HashSet::new();
        let items: Vec<TextItem> = items
            .into_iter()
            .filter(|item| !item.normalized.is_empty() && seen.insert(item.normalized.clone()))
            .collect();
        if items.is_empty() {
            return Err(ExtractError::EmptyBundle(entity));
        }
        Ok(TextBundle { entity, items })
    }

    pub fn items(&self) -> &[TextItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn group(&self, group: TextGroup) -> impl Iterator<Item = &TextItem> + '_ {
        self.items.iter().filter(move |i| i.group() == group)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairingStrategy {
    /// One pair: all texts of each side joined by a space.
    Concat,
    /// Every text of one side against every text of the other.
    #[serde(rename = "cross")]
    FullCross,
    /// Short texts against short, long against long.
    #[default]
    Grouped,
}

impl FromStr for PairingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concat" => Ok(PairingStrategy::Concat),
            "cross" => Ok(PairingStrategy::FullCross),
            "grouped" => Ok(PairingStrategy::Grouped),
            other => Err(format!("unknown pairing strategy '{other}' (concat|cross|grouped)")),
        }
    }
}

impl fmt::Display for PairingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairingStrategy::Concat => "concat",
            PairingStrategy::FullCross => "cross",
            PairingStrategy::Grouped => "grouped",
        })
    }
}

fn is_label_predicate(predicate: &Iri) -> bool {
    let fragment = predicate.fragment();
    fragment.eq_ignore_ascii_case("label")
        || fragment.eq_ignore_ascii_case("name")
        || vocab::is_skos_label(predicate.as_str())
}

fn is_long_predicate(predicate: &Iri) -> bool {
    let fragment = predicate.fragment();
    ["comment", "description", "abstract"]
        .iter()
        .any(|f| fragment.eq_ignore_ascii_case(f))
}

struct Candidate<'a> {
    literal: Option<&'a Literal>,
    item: TextItem,
}

/// Label-like literals (label/name fragments and SKOS labels) directly on
/// the entity. Shared with the lexical matcher.
pub(crate) fn label_literals<'a>(
    graph: &'a KnowledgeGraph,
    entity: &Iri,
) -> impl Iterator<Item = &'a Literal> + 'a {
    graph
        .triples_about(&Subject::Iri(entity.clone()))
        .filter(|t| is_label_predicate(&t.predicate))
        .filter_map(|t| t.object.as_literal())
}

/// Drops non-English tagged literals when any English or untagged literal
/// exists among `literals`.
pub(crate) fn prefer_english(literals: &[&Literal]) -> bool {
    literals.iter().any(|l| l.is_english_or_untagged())
}

/// Literals reached through declared annotation properties, following
/// resource-valued annotations breadth-first up to `max_depth` hops.
fn annotation_literals<'a>(
    graph: &'a KnowledgeGraph,
    entity: &Iri,
    max_depth: usize,
) -> Vec<&'a Literal> {
    let start = Subject::Iri(entity.clone());
    let mut visited: HashSet<Subject> = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([(start, 0usize)]);
    let mut out = Vec::new();
    while let Some((node, depth)) = queue.pop_front() {
        for Triple {
            predicate, object, ..
        } in graph.triples_about(&node)
        {
            let annotation = graph.is_annotation_property(predicate);
            let label = is_label_predicate(predicate);
            if is_long_predicate(predicate) {
                continue;
            }
            // On the entity itself label-like predicates are collected separately.
            let take_literal = if depth == 0 { annotation && !label } else { annotation || label };
            match object {
                Object::Literal(lit) if take_literal => out.push(lit),
                Object::Iri(_) | Object::Blank(_) if annotation && depth < max_depth => {
                    let next = object.as_resource().expect("resource object");
                    if visited.insert(next.clone()) {
                        queue.push_back((next, depth + 1));
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// Collects the textual descriptions of `entity`.
///
/// Order before deduplication: label-like literals, annotation literals, the
/// IRI fragment, comment/description/abstract literals, then the longest
/// literal. Non-English tagged literals are only kept when the entity has no
/// English or untagged literal.
pub fn extract_bundle(
    graph: &KnowledgeGraph,
    entity: &Iri,
    max_depth: usize,
) -> Result<TextBundle, ExtractError> {
    let subject = Subject::Iri(entity.clone());
    let mut candidates: Vec<Candidate<'_>> = Vec::new();

    for lit in label_literals(graph, entity) {
        candidates.push(Candidate {
            literal: Some(lit),
            item: TextItem::new(lit.lexical.clone(), TextOrigin::LabelProperty),
        });
    }
    for lit in annotation_literals(graph, entity, max_depth) {
        candidates.push(Candidate {
            literal: Some(lit),
            item: TextItem::new(lit.lexical.clone(), TextOrigin::AnnotationProperty),
        });
    }
    candidates.push(Candidate {
        literal: None,
        item: TextItem::new(entity.fragment(), TextOrigin::Fragment),
    });
    let direct: Vec<&Literal> = graph
        .triples_about(&subject)
        .filter_map(|t| t.object.as_literal())
        .collect();
    for t in graph.triples_about(&subject) {
        if let (true, Some(lit)) = (is_long_predicate(&t.predicate), t.object.as_literal()) {
            candidates.push(Candidate {
                literal: Some(lit),
                item: TextItem::new(lit.lexical.clone(), TextOrigin::CommentProperty),
            });
        }
    }

    let all_literals: Vec<&Literal> = candidates
        .iter()
        .filter_map(|c| c.literal)
        .chain(direct.iter().copied())
        .collect();
    let english_only = prefer_english(&all_literals);
    let keep = |lit: &Literal| !english_only || lit.is_english_or_untagged();

    let longest = direct
        .iter()
        .filter(|l| keep(l))
        .max_by(|a, b| {
            a.lexical
                .chars()
                .count()
                .cmp(&b.lexical.chars().count())
                .then_with(|| b.lexical.cmp(&a.lexical))
        });
    if let Some(lit) = longest {
        candidates.push(Candidate {
            literal: Some(lit),
            item: TextItem::new(lit.lexical.clone(), TextOrigin::LongestLiteral),
        });
    }

    TextBundle::new(
        entity.clone(),
        candidates
            .into_iter()
            .filter(|c| c.literal.is_none_or(&keep))
            .map(|c| c.item),
    )
}

/// Extracts bundles for every classified entity, skipping (and logging)
/// entities without usable text.
pub fn extract_all(graph: &KnowledgeGraph, max_depth: usize) -> BTreeMap<Iri, TextBundle> {
    let mut bundles = BTreeMap::new();
    for entity in graph.entities().keys() {
        match extract_bundle(graph, entity, max_depth) {
            Ok(bundle) => {
                bundles.insert(entity.clone(), bundle);
            }
            Err(err) => tracing::warn!(graph = %graph.id, %err, "entity excluded from matching"),
        }
    }
    bundles
}

/// Text pairs for the cross-encoder, ordered by item order with `a` major.
pub fn build_text_pairs(
    a: &TextBundle,
    b: &TextBundle,
    strategy: PairingStrategy,
) -> Vec<(String, String)> {
    match strategy {
        PairingStrategy::Concat => {
            let join = |bundle: &TextBundle| {
                bundle
                    .items()
                    .iter()
                    .map(|i| i.text.as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            vec![(join(a), join(b))]
        }
        PairingStrategy::FullCross => cross(a, b, |_, _| true),
        PairingStrategy::Grouped => {
            let pairs = cross(a, b, |x, y| x.group() == y.group());
            if pairs.is_empty() {
                tracing::debug!(
                    source = %a.entity,
                    target = %b.entity,
                    "no shared text group, falling back to full cross product"
                );
                cross(a, b, |_, _| true)
            } else {
                pairs
            }
        }
    }
}

fn cross(
    a: &TextBundle,
    b: &TextBundle,
    keep: impl Fn(&TextItem, &TextItem) -> bool,
) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for x in a.items() {
        for y in b.items() {
            if keep(x, y) {
                out.push((x.text.clone(), y.text.clone()));
            }
        }
    }
    out
}

/// Escapes tabs, newlines, carriage returns and backslashes for TSV cells.
pub fn escape_tsv(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_tsv(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Debug dump: `entity  group  origin  text`.
pub fn write_bundles_tsv<'a>(
    bundles: impl IntoIterator<Item = &'a TextBundle>,
    mut out: impl Write,
) -> io::Result<()> {
    writeln!(out, "entity\tgroup\torigin\ttext")?;
    for bundle in bundles {
        for item in bundle.items() {
            writeln!(
                out,
                "{}\t{:?}\t{:?}\t{}",
                bundle.entity,
                item.group(),
                item.origin,
                escape_tsv(&item.text)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_ntriples;
    use proptest::prelude::*;

    const LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";
    const COMMENT: &str = "http://www.w3.org/2000/01/rdf-schema#comment";
    const TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
    const CLASS: &str = "http://www.w3.org/2002/07/owl#Class";
    const ANN: &str = "http://www.w3.org/2002/07/owl#AnnotationProperty";

    fn graph(nt: &str) -> KnowledgeGraph {
        parse_ntriples("t", nt.as_bytes()).unwrap()
    }

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn bundle(items: &[(&str, TextOrigin)]) -> TextBundle {
        TextBundle::new(
            iri("http://x/e"),
            items.iter().map(|(t, o)| TextItem::new(*t, *o)),
        )
        .unwrap()
    }

    /// Brute-force extraction straight over the triple list: every literal
    /// under a label-ish predicate, plus literals one or more annotation hops
    /// away, plus the fragment. Returns normalized short texts.
    fn short_texts_oracle(g: &KnowledgeGraph, entity: &str, max_depth: usize) -> Vec<String> {
        let triples: Vec<&Triple> = g.triples().collect();
        let anns: Vec<&str> = triples
            .iter()
            .filter(|t| t.predicate.as_str() == TYPE && t.object.as_iri().map(|o| o.as_str()) == Some(ANN))
            .filter_map(|t| match &t.subject {
                Subject::Iri(i) => Some(i.as_str()),
                _ => None,
            })
            .collect();
        let label_like = |p: &str| {
            let f = crate::graph::fragment_of(p).to_lowercase();
            f == "label" || f == "name" || p.starts_with(vocab::SKOS_NS) && f.ends_with("label")
        };
        let mut out = Vec::new();
        for t in &triples {
            if t.subject == Subject::Iri(iri(entity)) && label_like(t.predicate.as_str()) {
                if let Some(l) = t.object.as_literal() {
                    out.push(normalize_label(&l.lexical));
                }
            }
        }
        let mut frontier = vec![Subject::Iri(iri(entity))];
        let mut seen = vec![Subject::Iri(iri(entity))];
        for depth in 0..=max_depth {
            let mut next = Vec::new();
            for node in &frontier {
                for t in &triples {
                    if &t.subject != node {
                        continue;
                    }
                    let p = t.predicate.as_str();
                    let is_ann = anns.contains(&p);
                    match &t.object {
                        Object::Literal(l) if (is_ann && !label_like(p)) || (depth > 0 && label_like(p)) => {
                            out.push(normalize_label(&l.lexical))
                        }
                        o if is_ann && !matches!(o, Object::Literal(_)) && depth < max_depth => {
                            let r = o.as_resource().unwrap();
                            if !seen.contains(&r) {
                                seen.push(r.clone());
                                next.push(r);
                            }
                        }
                        _ => {}
                    }
                }
            }
            frontier = next;
        }
        out.push(normalize_label(crate::graph::fragment_of(entity)));
        let mut dedup = Vec::new();
        for s in out {
            if !s.is_empty() && !dedup.contains(&s) {
                dedup.push(s);
            }
        }
        dedup
    }

    fn short_normalized(b: &TextBundle) -> Vec<String> {
        b.group(TextGroup::Short).map(|i| i.normalized.clone()).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_label("MyocardialInfarction"), "myocardial infarction");
        assert_eq!(normalize_label("has_part-Of"), "has part of");
        assert_eq!(normalize_label(""), "");
        assert_eq!(normalize_label("HTMLParser"), "html parser");
        assert_eq!(normalize_label("  Left  ventricle!! "), "left ventricle");
        assert_eq!(normalize_label("MA_0000001"), "ma 0000001");
    }

    #[test]
    fn label_and_fragment_dedup() {
        let g = graph(&format!(
            "<http://x/o#Heart> <{TYPE}> <{CLASS}> .\n<http://x/o#Heart> <{LABEL}> \"heart\" .\n"
        ));
        let b = extract_bundle(&g, &iri("http://x/o#Heart"), 3).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.items()[0].text, "heart");
        assert_eq!(b.items()[0].group(), TextGroup::Short);
        assert_eq!(short_normalized(&b), short_texts_oracle(&g, "http://x/o#Heart", 3));
    }

    #[test]
    fn annotation_recursion_reaches_label() {
        let g = graph(&format!(
            "<http://x/syn> <{TYPE}> <{ANN}> .\n\
             <http://x/o#MV> <{TYPE}> <{CLASS}> .\n\
             <http://x/o#MV> <http://x/syn> <http://x/o#genid7> .\n\
             <http://x/o#genid7> <{LABEL}> \"mitral valve\" .\n"
        ));
        let b = extract_bundle(&g, &iri("http://x/o#MV"), 3).unwrap();
        let short = short_normalized(&b);
        assert!(short.contains(&"mitral valve".to_string()));
        assert_eq!(
            b.items().iter().find(|i| i.normalized == "mitral valve").unwrap().origin,
            TextOrigin::AnnotationProperty
        );
        assert_eq!(short, short_texts_oracle(&g, "http://x/o#MV", 3));
    }

    #[test]
    fn recursion_respects_depth() {
        let g = graph(&format!(
            "<http://x/syn> <{TYPE}> <{ANN}> .\n\
             <http://x/e> <{TYPE}> <{CLASS}> .\n\
             <http://x/e> <http://x/syn> _:a .\n\
             _:a <http://x/syn> _:b .\n\
             _:b <http://x/syn> \"deep text\" .\n\
             _:a <http://x/syn> \"shallow text\" .\n"
        ));
        for depth in 0..4 {
            let b = extract_bundle(&g, &iri("http://x/e"), depth).unwrap();
            assert_eq!(short_normalized(&b), short_texts_oracle(&g, "http://x/e", depth), "depth {depth}");
        }
        let b1 = extract_bundle(&g, &iri("http://x/e"), 1).unwrap();
        assert!(short_normalized(&b1).contains(&"shallow text".into()));
        assert!(!short_normalized(&b1).contains(&"deep text".into()));
        let b2 = extract_bundle(&g, &iri("http://x/e"), 2).unwrap();
        assert!(short_normalized(&b2).contains(&"deep text".into()));
    }

    #[test]
    fn annotation_two_cycle_terminates() {
        let g = graph(&format!(
            "<http://x/syn> <{TYPE}> <{ANN}> .\n\
             <http://x/a> <{TYPE}> <{CLASS}> .\n\
             <http://x/a> <http://x/syn> <http://x/b> .\n\
             <http://x/b> <http://x/syn> <http://x/a> .\n\
             <http://x/b> <{LABEL}> \"bee\" .\n"
        ));
        let b = extract_bundle(&g, &iri("http://x/a"), 50).unwrap();
        assert_eq!(short_normalized(&b), vec!["bee".to_string(), "a".to_string()]);
    }

    #[test]
    fn long_comment_is_single_long_item() {
        let comment = "x".repeat(400);
        let g = graph(&format!(
            "<http://x/e> <{TYPE}> <{CLASS}> .\n<http://x/e> <{COMMENT}> \"{comment}\" .\n"
        ));
        let b = extract_bundle(&g, &iri("http://x/e"), 3).unwrap();
        let long: Vec<&TextItem> = b.group(TextGroup::Long).collect();
        assert_eq!(long.len(), 1);
        assert_eq!(long[0].text, comment);
        assert_eq!(long[0].origin, TextOrigin::CommentProperty);
    }

    #[test]
    fn case_insensitive_property_fragments_and_skos() {
        let g = graph(&format!(
            "<http://x/e> <{TYPE}> <{CLASS}> .\n\
             <http://x/e> <http://x/vocab#Name> \"Organ Name\" .\n\
             <http://x/e> <http://www.w3.org/2004/02/skos/core#altLabel> \"alternative\" .\n\
             <http://x/e> <http://x/vocab/Description> \"a description\" .\n"
        ));
        let b = extract_bundle(&g, &iri("http://x/e"), 3).unwrap();
        let origins: Vec<(String, TextOrigin)> =
            b.items().iter().map(|i| (i.normalized.clone(), i.origin)).collect();
        assert_eq!(
            origins,
            vec![
                ("organ name".into(), TextOrigin::LabelProperty),
                ("alternative".into(), TextOrigin::LabelProperty),
                ("e".into(), TextOrigin::Fragment),
                ("a description".into(), TextOrigin::CommentProperty),
            ]
        );
    }

    #[test]
    fn longest_literal_tie_breaks_lexicographically() {
        let g = graph(&format!(
            "<http://x/e> <{TYPE}> <{CLASS}> .\n\
             <http://x/e> <http://x/p> \"bbbb\" .\n\
             <http://x/e> <http://x/q> \"aaaa\" .\n\
             <http://x/e> <http://x/r> \"cc\" .\n"
        ));
        let b = extract_bundle(&g, &iri("http://x/e"), 3).unwrap();
        let longest: Vec<&str> = b
            .items()
            .iter()
            .filter(|i| i.origin == TextOrigin::LongestLiteral)
            .map(|i| i.text.as_str())
            .collect();
        assert_eq!(longest, vec!["aaaa"]);
    }

    #[test]
    fn non_english_dropped_when_english_exists() {
        let g = graph(&format!(
            "<http://x/e> <{TYPE}> <{CLASS}> .\n\
             <http://x/e> <{LABEL}> \"Herz\"@de .\n\
             <http://x/e> <{LABEL}> \"heart\"@en .\n"
        ));
        let b = extract_bundle(&g, &iri("http://x/e"), 3).unwrap();
        assert!(b.items().iter().all(|i| i.normalized != "herz"));

        let g = graph(&format!(
            "<http://x/e> <{TYPE}> <{CLASS}> .\n<http://x/e> <{LABEL}> \"Herz\"@de .\n"
        ));
        let b = extract_bundle(&g, &iri("http://x/e"), 3).unwrap();
        assert_eq!(b.items()[0].normalized, "herz");
    }

    #[test]
    fn empty_bundle_error() {
        let g = graph(&format!("<http://x/o#> <{TYPE}> <{CLASS}> .\n"));
        assert_eq!(
            extract_bundle(&g, &iri("http://x/o#"), 3),
            Err(ExtractError::EmptyBundle(iri("http://x/o#")))
        );
        let g = graph(&format!("<http://x/o#C1> <{TYPE}> <{CLASS}> .\n"));
        let b = extract_bundle(&g, &iri("http://x/o#C1"), 3).unwrap();
        assert_eq!(b.items()[0].origin, TextOrigin::Fragment);
    }

    #[test]
    fn pairing_examples() {
        let a = bundle(&[("x", TextOrigin::LabelProperty), ("y", TextOrigin::LabelProperty)]);
        let b = bundle(&[("u", TextOrigin::LabelProperty)]);
        assert_eq!(
            build_text_pairs(&a, &b, PairingStrategy::FullCross),
            vec![("x".into(), "u".into()), ("y".into(), "u".into())]
        );
        let b2 = bundle(&[("u", TextOrigin::LabelProperty), ("v", TextOrigin::LabelProperty)]);
        assert_eq!(
            build_text_pairs(&a, &b2, PairingStrategy::Concat),
            vec![("x y".into(), "u v".into())]
        );
    }

    #[test]
    fn grouped_counts_two_short_one_long_vs_one_short_two_long() {
        let a = bundle(&[
            ("s1", TextOrigin::LabelProperty),
            ("s2", TextOrigin::Fragment),
            ("long a", TextOrigin::CommentProperty),
        ]);
        let b = bundle(&[
            ("t1", TextOrigin::LabelProperty),
            ("long b", TextOrigin::CommentProperty),
            ("longer b", TextOrigin::LongestLiteral),
        ]);
        let pairs = build_text_pairs(&a, &b, PairingStrategy::Grouped);
        assert_eq!(pairs.len(), 4);
        assert_eq!(
            pairs,
            vec![
                ("s1".into(), "t1".into()),
                ("s2".into(), "t1".into()),
                ("long a".into(), "long b".into()),
                ("long a".into(), "longer b".into()),
            ]
        );
    }

    #[test]
    fn grouped_falls_back_to_cross_without_shared_group() {
        let a = bundle(&[("s", TextOrigin::LabelProperty)]);
        let b = bundle(&[("l", TextOrigin::CommentProperty)]);
        assert_eq!(
            build_text_pairs(&a, &b, PairingStrategy::Grouped),
            vec![("s".into(), "l".into())]
        );
    }

    #[test]
    fn tsv_escape_round_trip() {
        let s = "a\tb\nc\\t\r";
        assert_eq!(unescape_tsv(&escape_tsv(s)), s);
        assert!(!escape_tsv(s).contains('\t'));
    }

    fn arb_bundle() -> impl Strategy<Value = TextBundle> {
        let origin = prop_oneof![
            Just(TextOrigin::Fragment),
            Just(TextOrigin::LabelProperty),
            Just(TextOrigin::AnnotationProperty),
            Just(TextOrigin::CommentProperty),
            Just(TextOrigin::LongestLiteral),
        ];
        prop::collection::vec(("[a-z]{1,6}", origin), 1..6).prop_filter_map("non-empty", |items| {
            TextBundle::new(
                Iri::new("http://x/e").unwrap(),
                items.into_iter().map(|(t, o)| TextItem::new(t, o)),
            )
            .ok()
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in any::<String>()) {
            let once = normalize_label(&s);
            prop_assert_eq!(normalize_label(&once), once.clone());
        }

        #[test]
        fn normalize_is_idempotent_on_identifiers(s in "[A-Za-z0-9_ .-]{0,24}") {
            let once = normalize_label(&s);
            prop_assert_eq!(normalize_label(&once), once.clone());
        }

        #[test]
        fn pair_counts(a in arb_bundle(), b in arb_bundle()) {
            let grouped = build_text_pairs(&a, &b, PairingStrategy::Grouped).len();
            let full = build_text_pairs(&a, &b, PairingStrategy::FullCross).len();
            prop_assert!(grouped <= full);
            prop_assert_eq!(full, a.len() * b.len());
            prop_assert_eq!(build_text_pairs(&a, &b, PairingStrategy::Concat).len(), 1);
        }

        #[test]
        fn bundles_have_unique_normalized_forms(texts in prop::collection::vec("[A-Za-z _]{0,8}", 0..10)) {
            let b = TextBundle::new(
                Iri::new("http://x/e").unwrap(),
                texts.iter().map(|t| TextItem::new(t.clone(), TextOrigin::LabelProperty)),
            );
            if let Ok(b) = b {
                let mut seen = HashSet::new();
                for item in b.items() {
                    prop_assert!(seen.insert(item.normalized.clone()));
                }
            }
        }
    }
}
