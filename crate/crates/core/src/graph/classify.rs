use std::collections::{BTreeMap, BTreeSet};

use super::vocab;
use super::{EntityKind, Iri, Object, Subject, Triple};

/// An entity with more than one kind declaration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KindConflict {
    pub entity: Iri,
    pub declared: Vec<EntityKind>,
    pub chosen: EntityKind,
}

#[derive(Debug, Default)]
pub struct Classification {
    pub kinds: BTreeMap<Iri, EntityKind>,
    pub annotation_properties: BTreeSet<Iri>,
    pub conflicts: Vec<KindConflict>,
    /// Named subjects without any kind declaration.
    pub untyped_subjects: usize,
}

/// Assigns each named subject at most one [`EntityKind`].
///
/// Classes are subjects typed `owl:Class`/`rdfs:Class` and both endpoints of
/// `rdfs:subClassOf`. Object, datatype and other properties come from
/// `owl:ObjectProperty`, `owl:DatatypeProperty` and `rdf:Property`. Instances
/// are subjects typed with a class of this graph, with `owl:NamedIndividual`,
/// or with any non-builtin IRI. Multiple declarations resolve by the
/// declaration order of [`EntityKind`].
pub fn classify_entities<'a>(triples: impl IntoIterator<Item = &'a Triple> + Clone) -> Classification {
    let mut declared: BTreeMap<Iri, BTreeSet<EntityKind>> = BTreeMap::new();
    let mut annotation_properties = BTreeSet::new();
    let mut subjects: BTreeSet<&Iri> = BTreeSet::new();

    for triple in triples.clone() {
        let Subject::Iri(subject) = &triple.subject else {
            continue;
        };
        subjects.insert(subject);
        match triple.predicate.as_str() {
            vocab::RDF_TYPE => {
                let Some(object) = triple.object.as_iri() else {
                    continue;
                };
                let kind = match object.as_str() {
                    vocab::OWL_CLASS | vocab::RDFS_CLASS => Some(EntityKind::Class),
                    vocab::OWL_OBJECT_PROPERTY => Some(EntityKind::ObjectProperty),
                    vocab::OWL_DATATYPE_PROPERTY => Some(EntityKind::DatatypeProperty),
                    vocab::RDF_PROPERTY => Some(EntityKind::OtherProperty),
                    vocab::OWL_ANNOTATION_PROPERTY => {
                        annotation_properties.insert(subject.clone());
                        None
                    }
                    _ => None,
                };
                if let Some(kind) = kind {
                    declared.entry(subject.clone()).or_default().insert(kind);
                }
            }
            vocab::RDFS_SUBCLASS_OF => {
                declared
                    .entry(subject.clone())
                    .or_default()
                    .insert(EntityKind::Class);
                if let Object::Iri(parent) = &triple.object {
                    declared
                        .entry(parent.clone())
                        .or_default()
                        .insert(EntityKind::Class);
                }
            }
            _ => {}
        }
    }

    // Instances need the class set, so they take a second pass.
    let is_class = |iri: &Iri| {
        declared
            .get(iri)
            .is_some_and(|kinds| kinds.contains(&EntityKind::Class))
    };
    let mut instances = Vec::new();
    for triple in triples {
        let Subject::Iri(subject) = &triple.subject else {
            continue;
        };
        if triple.predicate.as_str() != vocab::RDF_TYPE {
            continue;
        }
        let Some(object) = triple.object.as_iri() else {
            continue;
        };
        if object.as_str() == vocab::OWL_NAMED_INDIVIDUAL
            || is_class(object)
            || !vocab::is_builtin(object.as_str())
        {
            instances.push(subject.clone());
        }
    }
    for subject in instances {
        declared.entry(subject).or_default().insert(EntityKind::Instance);
    }

    let mut kinds = BTreeMap::new();
    let mut conflicts = Vec::new();
    for (iri, set) in declared {
        // BTreeSet iterates in precedence order.
        let chosen = *set.iter().next().expect("declared sets are never empty");
        if set.len() > 1 {
            conflicts.push(KindConflict {
                entity: iri.clone(),
                declared: set.iter().copied().collect(),
                chosen,
            });
        }
        kinds.insert(iri, chosen);
    }

    let untyped_subjects = subjects.iter().filter(|s| !kinds.contains_key(**s)).count();

    Classification {
        kinds,
        annotation_properties,
        conflicts,
        untyped_subjects,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::KnowledgeGraph;

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn typed(s: &str, o: &str) -> Triple {
        Triple {
            subject: Subject::Iri(iri(s)),
            predicate: iri(vocab::RDF_TYPE),
            object: Object::Iri(iri(o)),
        }
    }

    #[test]
    fn object_property() {
        let g = KnowledgeGraph::from_triples(
            "g",
            [typed("http://x/p", vocab::OWL_OBJECT_PROPERTY)],
            vec![],
        );
        assert_eq!(g.kind_of(&iri("http://x/p")), Some(EntityKind::ObjectProperty));
    }

    #[test]
    fn instance_of_declared_class() {
        let g = KnowledgeGraph::from_triples(
            "g",
            [
                typed("http://x/Person", vocab::OWL_CLASS),
                typed("http://x/alice", "http://x/Person"),
            ],
            vec![],
        );
        assert_eq!(g.kind_of(&iri("http://x/alice")), Some(EntityKind::Instance));
        assert_eq!(g.kind_of(&iri("http://x/Person")), Some(EntityKind::Class));
        assert!(g.conflicts().is_empty());
    }

    #[test]
    fn subclass_endpoints_are_classes() {
        let g = KnowledgeGraph::from_triples(
            "g",
            [Triple {
                subject: Subject::Iri(iri("http://x/A")),
                predicate: iri(vocab::RDFS_SUBCLASS_OF),
                object: Object::Iri(iri("http://x/B")),
            }],
            vec![],
        );
        assert_eq!(g.kind_of(&iri("http://x/A")), Some(EntityKind::Class));
        assert_eq!(g.kind_of(&iri("http://x/B")), Some(EntityKind::Class));
    }

    #[test]
    fn untyped_and_annotation_properties_are_not_entities() {
        let g = KnowledgeGraph::from_triples(
            "g",
            [
                typed("http://x/syn", vocab::OWL_ANNOTATION_PROPERTY),
                Triple {
                    subject: Subject::Iri(iri("http://x/loose")),
                    predicate: iri(vocab::RDFS_LABEL),
                    object: Object::Literal(crate::graph::Literal::plain("loose")),
                },
            ],
            vec![],
        );
        assert!(g.entities().is_empty());
        assert!(g.is_annotation_property(&iri("http://x/syn")));
        assert_eq!(g.untyped_subjects(), 2);
    }

    #[test]
    fn blank_subjects_never_classified() {
        let g = KnowledgeGraph::from_triples(
            "g",
            [Triple {
                subject: Subject::Blank(crate::graph::BlankNode("b0".into())),
                predicate: iri(vocab::RDF_TYPE),
                object: Object::Iri(iri(vocab::OWL_CLASS)),
            }],
            vec![],
        );
        assert!(g.entities().is_empty());
    }

    /// Enumerates every subset of the five declaration forms for a single
    /// entity and checks the resolved kind against the precedence list.
    #[test]
    fn precedence_over_all_declaration_subsets() {
        let declarations: [(EntityKind, &str); 5] = [
            (EntityKind::Class, vocab::OWL_CLASS),
            (EntityKind::ObjectProperty, vocab::OWL_OBJECT_PROPERTY),
            (EntityKind::DatatypeProperty, vocab::OWL_DATATYPE_PROPERTY),
            (EntityKind::OtherProperty, vocab::RDF_PROPERTY),
            (EntityKind::Instance, "http://x/SomeClass"),
        ];
        let precedence = [
            EntityKind::Class,
            EntityKind::ObjectProperty,
            EntityKind::DatatypeProperty,
            EntityKind::OtherProperty,
            EntityKind::Instance,
        ];
        for mask in 0u32..32 {
            let chosen: Vec<EntityKind> = (0..5)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| declarations[i].0)
                .collect();
            let triples: Vec<Triple> = (0..5)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| typed("http://x/e", declarations[i].1))
                .collect();
            let g = KnowledgeGraph::from_triples("g", triples, vec![]);
            let expected = precedence.iter().find(|k| chosen.contains(k)).copied();
            assert_eq!(g.kind_of(&iri("http://x/e")), expected, "mask {mask:05b}");
            let conflicted = g.conflicts().iter().any(|c| c.entity == iri("http://x/e"));
            assert_eq!(conflicted, chosen.len() > 1, "mask {mask:05b}");
        }
    }

    #[test]
    fn class_and_datatype_property_conflict() {
        let g = KnowledgeGraph::from_triples(
            "g",
            [
                typed("http://x/e", vocab::OWL_DATATYPE_PROPERTY),
                typed("http://x/e", vocab::OWL_CLASS),
            ],
            vec![],
        );
        assert_eq!(g.kind_of(&iri("http://x/e")), Some(EntityKind::Class));
        assert_eq!(
            g.conflicts(),
            &[KindConflict {
                entity: iri("http://x/e"),
                declared: vec![EntityKind::Class, EntityKind::DatatypeProperty],
                chosen: EntityKind::Class,
            }]
        );
    }
}
