//! Knowledge graph model: IRIs, triples, and entity-kind classification.

mod classify;
mod ntriples;
pub mod vocab;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use indexmap::IndexSet;
use thiserror::Error;

pub use classify::{classify_entities, Classification, KindConflict};
pub use ntriples::{parse_ntriples, parse_ntriples_file, write_ntriples, ParseWarning};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("IRI must not be empty")]
    EmptyIri,
    #[error("cannot read {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// An absolute IRI. Cheap to clone.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Iri(Arc<str>);

impl Iri {
    pub fn new(full: impl AsRef<str>) -> Result<Self, GraphError> {
        let full = full.as_ref();
        if full.is_empty() {
            return Err(GraphError::EmptyIri);
        }
        Ok(Iri(Arc::from(full)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The local name of the IRI, see [`fragment_of`].
    pub fn fragment(&self) -> &str {
        fragment_of(&self.0)
    }
}

impl fmt::Debug for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.0)
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Substring after the last `#`, or after the last `/` when there is no `#`.
/// IRIs with neither separator are returned whole.
pub fn fragment_of(iri: &str) -> &str {
    if let Some(pos) = iri.rfind('#') {
        &iri[pos + 1..]
    } else if let Some(pos) = iri.rfind('/') {
        &iri[pos + 1..]
    } else {
        iri
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlankNode(pub Arc<str>);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub lexical: String,
    /// Mutually exclusive with `datatype`.
    pub language: Option<String>,
    pub datatype: Option<Iri>,
}

impl Literal {
    pub fn plain(lexical: impl Into<String>) -> Self {
        Literal {
            lexical: lexical.into(),
            language: None,
            datatype: None,
        }
    }

    pub fn tagged(lexical: impl Into<String>, language: impl Into<String>) -> Self {
        Literal {
            lexical: lexical.into(),
            language: Some(language.into()),
            datatype: None,
        }
    }

    /// Untagged or tagged with an English variant (`en`, `en-GB`, ...).
    pub fn is_english_or_untagged(&self) -> bool {
        match &self.language {
            None => true,
            Some(tag) => {
                let tag = tag.to_ascii_lowercase();
                tag == "en" || tag.starts_with("en-")
            }
        }
    }
}

/// A resource that can appear in subject position.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subject {
    Iri(Iri),
    Blank(BlankNode),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Object {
    Iri(Iri),
    Blank(BlankNode),
    Literal(Literal),
}

impl Object {
    pub fn as_literal(&self) -> Option<&Literal> {
        match self {
            Object::Literal(lit) => Some(lit),
            _ => None,
        }
    }

    pub fn as_iri(&self) -> Option<&Iri> {
        match self {
            Object::Iri(iri) => Some(iri),
            _ => None,
        }
    }

    /// The object as a subject-position resource, if it is not a literal.
    pub fn as_resource(&self) -> Option<Subject> {
        match self {
            Object::Iri(iri) => Some(Subject::Iri(iri.clone())),
            Object::Blank(b) => Some(Subject::Blank(b.clone())),
            Object::Literal(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: Subject,
    pub predicate: Iri,
    pub object: Object,
}

/// Kinds used to partition matching. Declaration order is the conflict
/// precedence (earlier wins).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum EntityKind {
    Class,
    ObjectProperty,
    DatatypeProperty,
    OtherProperty,
    Instance,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::Class,
        EntityKind::ObjectProperty,
        EntityKind::DatatypeProperty,
        EntityKind::OtherProperty,
        EntityKind::Instance,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityKind::Class => "class",
            EntityKind::ObjectProperty => "object_property",
            EntityKind::DatatypeProperty => "datatype_property",
            EntityKind::OtherProperty => "other_property",
            EntityKind::Instance => "instance",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A parsed, classified graph. Immutable after construction.
#[derive(Debug)]
pub struct KnowledgeGraph {
    pub id: String,
    triples: IndexSet<Triple>,
    entities: BTreeMap<Iri, EntityKind>,
    annotation_properties: BTreeSet<Iri>,
    conflicts: Vec<KindConflict>,
    untyped_subjects: usize,
    warnings: Vec<ParseWarning>,
    by_subject: HashMap<Subject, Vec<usize>>,
}

impl KnowledgeGraph {
    pub fn from_triples(
        id: impl Into<String>,
        triples: impl IntoIterator<Item = Triple>,
        warnings: Vec<ParseWarning>,
    ) -> Self {
        let triples: IndexSet<Triple> = triples.into_iter().collect();
        let Classification {
            kinds,
            annotation_properties,
            conflicts,
            untyped_subjects,
        } = classify_entities(triples.iter());
        let id = id.into();
        for conflict in &conflicts {
            tracing::warn!(
                graph = %id,
                entity = %conflict.entity,
                declared = ?conflict.declared,
                chosen = %conflict.chosen,
                "conflicting kind declarations"
            );
        }
        if untyped_subjects > 0 {
            tracing::debug!(graph = %id, untyped_subjects, "untyped subjects excluded from matching");
        }

        let mut by_subject: HashMap<Subject, Vec<usize>> = HashMap::new();
        for (idx, triple) in triples.iter().enumerate() {
            by_subject.entry(triple.subject.clone()).or_default().push(idx);
        }

        KnowledgeGraph {
            id,
            triples,
            entities: kinds,
            annotation_properties,
            conflicts,
            untyped_subjects,
            warnings,
            by_subject,
        }
    }

    pub fn triples(&self) -> impl ExactSizeIterator<Item = &Triple> + '_ {
        self.triples.iter()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entities(&self) -> &BTreeMap<Iri, EntityKind> {
        &self.entities
    }

    pub fn kind_of(&self, iri: &Iri) -> Option<EntityKind> {
        self.entities.get(iri).copied()
    }

    pub fn entities_of_kind(&self, kind: EntityKind) -> impl Iterator<Item = &Iri> + '_ {
        self.entities
            .iter()
            .filter(move |(_, k)| **k == kind)
            .map(|(iri, _)| iri)
    }

    pub fn annotation_properties(&self) -> &BTreeSet<Iri> {
        &self.annotation_properties
    }

    pub fn is_annotation_property(&self, iri: &Iri) -> bool {
        self.annotation_properties.contains(iri)
    }

    pub fn conflicts(&self) -> &[KindConflict] {
        &self.conflicts
    }

    pub fn untyped_subjects(&self) -> usize {
        self.untyped_subjects
    }

    pub fn warnings(&self) -> &[ParseWarning] {
        &self.warnings
    }

    /// Triples with the given subject, in input order.
    pub fn triples_about<'a>(&'a self, subject: &Subject) -> impl Iterator<Item = &'a Triple> + 'a {
        self.by_subject
            .get(subject)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .filter_map(move |&idx| self.triples.get_index(idx))
    }

    pub fn distinct_subject_iris(&self) -> usize {
        self.by_subject
            .keys()
            .filter(|s| matches!(s, Subject::Iri(_)))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fragment_examples() {
        assert_eq!(fragment_of("http://x/onto#Heart"), "Heart");
        assert_eq!(fragment_of("http://x/onto/Heart"), "Heart");
        assert_eq!(fragment_of("urn:uuid:abc"), "urn:uuid:abc");
        assert_eq!(fragment_of("http://x/onto#"), "");
        assert_eq!(fragment_of("http://x/a/b#c/d"), "c/d");
    }

    #[test]
    fn iri_rejects_empty() {
        assert!(matches!(Iri::new(""), Err(GraphError::EmptyIri)));
        assert_eq!(Iri::new("http://x/A").unwrap().fragment(), "A");
    }

    #[test]
    fn english_detection() {
        assert!(Literal::plain("x").is_english_or_untagged());
        assert!(Literal::tagged("x", "EN-gb").is_english_or_untagged());
        assert!(!Literal::tagged("x", "de").is_english_or_untagged());
    }
}
