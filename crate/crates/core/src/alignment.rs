//! Correspondences, alignments, and their file formats.
//!
//! The canonical on-disk form is a TSV with header
//! `source`, `target`, `relation`, `confidence` (tab-separated). Alignments can also be exported
//! to and read from the OAEI Alignment Format (RDF/XML `<Cell>` elements).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;

use crate::graph::{EntityKind, Iri};

pub const RELATION_EQUIVALENCE: &str = "=";

#[derive(Debug, Error)]
pub enum AlignmentError {
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
    #[error("{path}: invalid alignment XML: {message}")]
    Xml { path: String, message: String },
}

/// An equivalence correspondence between a source and a target entity.
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondence {
    pub source: Iri,
    pub target: Iri,
    pub confidence: f64,
    /// Shared kind of both endpoints; unknown for alignments read from files.
    pub kind: Option<EntityKind>,
}

impl Correspondence {
    pub fn new(source: Iri, target: Iri, confidence: f64) -> Self {
        Correspondence {
            source,
            target,
            confidence: confidence.clamp(0.0, 1.0),
            kind: None,
        }
    }

    pub fn with_kind(mut self, kind: EntityKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn key(&self) -> (Iri, Iri) {
        (self.source.clone(), self.target.clone())
    }

    pub fn relation(&self) -> &'static str {
        RELATION_EQUIVALENCE
    }
}

/// A set of correspondences keyed by `(source, target)`, iterated in key
/// order, with source and target indexes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Alignment {
    cells: BTreeMap<(Iri, Iri), Correspondence>,
    by_source: BTreeMap<Iri, BTreeSet<Iri>>,
    by_target: BTreeMap<Iri, BTreeSet<Iri>>,
}

impl Alignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Inserts or replaces the correspondence for its `(source, target)`.
    pub fn insert(&mut self, c: Correspondence) {
        self.by_source
            .entry(c.source.clone())
            .or_default()
            .insert(c.target.clone());
        self.by_target
            .entry(c.target.clone())
            .or_default()
            .insert(c.source.clone());
        self.cells.insert(c.key(), c);
    }

    /// Inserts, keeping the higher confidence if the pair already exists.
    pub fn insert_max(&mut self, c: Correspondence) {
        match self.cells.get(&(c.source.clone(), c.target.clone())) {
            Some(existing) if existing.confidence >= c.confidence => {}
            _ => self.insert(c),
        }
    }

    pub fn remove(&mut self, source: &Iri, target: &Iri) -> Option<Correspondence> {
        let removed = self.cells.remove(&(source.clone(), target.clone()))?;
        if let Some(set) = self.by_source.get_mut(source) {
            set.remove(target);
            if set.is_empty() {
                self.by_source.remove(source);
            }
        }
        if let Some(set) = self.by_target.get_mut(target) {
            set.remove(source);
            if set.is_empty() {
                self.by_target.remove(target);
            }
        }
        Some(removed)
    }

    pub fn get(&self, source: &Iri, target: &Iri) -> Option<&Correspondence> {
        self.cells.get(&(source.clone(), target.clone()))
    }

    pub fn contains(&self, source: &Iri, target: &Iri) -> bool {
        self.cells.contains_key(&(source.clone(), target.clone()))
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Correspondence> + '_ {
        self.cells.values()
    }

    pub fn targets_of(&self, source: &Iri) -> Option<&BTreeSet<Iri>> {
        self.by_source.get(source)
    }

    pub fn sources_of(&self, target: &Iri) -> Option<&BTreeSet<Iri>> {
        self.by_target.get(target)
    }

    pub fn has_source(&self, source: &Iri) -> bool {
        self.by_source.contains_key(source)
    }

    pub fn has_target(&self, target: &Iri) -> bool {
        self.by_target.contains_key(target)
    }

    /// Every entity appears in at most one correspondence on each side.
    pub fn is_one_to_one(&self) -> bool {
        self.by_source.values().all(|s| s.len() == 1) && self.by_target.values().all(|s| s.len() == 1)
    }

    /// Swaps source and target of every correspondence.
    pub fn transposed(&self) -> Alignment {
        self.iter()
            .map(|c| Correspondence {
                source: c.target.clone(),
                target: c.source.clone(),
                confidence: c.confidence,
                kind: c.kind,
            })
            .collect()
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&Correspondence) -> bool) {
        let drop: Vec<(Iri, Iri)> = self
            .iter()
            .filter(|c| !keep(c))
            .map(|c| c.key())
            .collect();
        for (s, t) in drop {
            self.remove(&s, &t);
        }
    }

    /// Pairs present in both, ignoring confidence.
    pub fn intersection_count(&self, other: &Alignment) -> usize {
        self.cells.keys().filter(|k| other.cells.contains_key(k)).count()
    }

    pub fn is_subset_of(&self, other: &Alignment) -> bool {
        self.cells.keys().all(|k| other.cells.contains_key(k))
    }

    pub fn keys(&self) -> impl Iterator<Item = &(Iri, Iri)> + '_ {
        self.cells.keys()
    }

    pub fn total_confidence(&self) -> f64 {
        self.iter().map(|c| c.confidence).sum()
    }
}

impl FromIterator<Correspondence> for Alignment {
    fn from_iter<T: IntoIterator<Item = Correspondence>>(iter: T) -> Self {
        let mut a = Alignment::new();
        for c in iter {
            a.insert(c);
        }
        a
    }
}

impl Extend<Correspondence> for Alignment {
    fn extend<T: IntoIterator<Item = Correspondence>>(&mut self, iter: T) {
        for c in iter {
            self.insert(c);
        }
    }
}

pub const TSV_HEADER: &str = "source\ttarget\trelation\tconfidence";

pub fn write_tsv(alignment: &Alignment, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{TSV_HEADER}")?;
    for c in alignment.iter() {
        // `{}` on f64 is the shortest representation that round-trips.
        writeln!(out, "{}\t{}\t{}\t{}", c.source, c.target, c.relation(), c.confidence)?;
    }
    Ok(())
}

pub fn read_tsv(reader: impl BufRead, path: &str) -> Result<Alignment, AlignmentError> {
    let mut alignment = Alignment::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| AlignmentError::Io {
            path: path.to_string(),
            source,
        })?;
        let format_err = |message: String| AlignmentError::Format {
            path: path.to_string(),
            line: line_no,
            message,
        };
        if line_no == 1 {
            if line.trim_end() != TSV_HEADER {
                return Err(format_err(format!("expected header '{TSV_HEADER}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(format_err(format!("expected 4 columns, found {}", fields.len())));
        }
        if fields[2] != RELATION_EQUIVALENCE {
            return Err(format_err(format!("unsupported relation '{}'", fields[2])));
        }
        let source = Iri::new(fields[0]).map_err(|e| format_err(e.to_string()))?;
        let target = Iri::new(fields[1]).map_err(|e| format_err(e.to_string()))?;
        let confidence: f64 = fields[3]
            .parse()
            .map_err(|_| format_err(format!("invalid confidence '{}'", fields[3])))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(format_err(format!("confidence {confidence} outside [0,1]")));
        }
        alignment.insert(Correspondence::new(source, target, confidence));
    }
    Ok(alignment)
}

fn xml_escape(s: &str) -> String {
    quick_xml::escape::escape(s).into_owned()
}

/// Writes the OAEI Alignment Format; measures use 6 decimal places.
pub fn write_oaei_xml(
    alignment: &Alignment,
    onto1: Option<&str>,
    onto2: Option<&str>,
    mut out: impl Write,
) -> io::Result<()> {
    writeln!(out, r#"<?xml version="1.0" encoding="utf-8"?>"#)?;
    writeln!(
        out,
        r#"<rdf:RDF xmlns="http://knowledgeweb.semanticweb.org/heterogeneity/alignment" xmlns:rdf="http://www.w3.org/1999/02/22-rdf-syntax-ns#" xmlns:xsd="http://www.w3.org/2001/XMLSchema#">"#
    )?;
    writeln!(out, "<Alignment>")?;
    writeln!(out, "  <xml>yes</xml>")?;
    writeln!(out, "  <level>0</level>")?;
    writeln!(out, "  <type>??</type>")?;
    for (tag, onto) in [("onto1", onto1), ("onto2", onto2)] {
        if let Some(onto) = onto {
            writeln!(out, "  <{tag}>{}</{tag}>", xml_escape(onto))?;
        }
    }
    for c in alignment.iter() {
        writeln!(out, "  <map>")?;
        writeln!(out, "    <Cell>")?;
        writeln!(out, "      <entity1 rdf:resource=\"{}\"/>", xml_escape(c.source.as_str()))?;
        writeln!(out, "      <entity2 rdf:resource=\"{}\"/>", xml_escape(c.target.as_str()))?;
        writeln!(out, "      <relation>{}</relation>", xml_escape(c.relation()))?;
        writeln!(
            out,
            "      <measure rdf:datatype=\"xsd:float\">{:.6}</measure>",
            c.confidence
        )?;
        writeln!(out, "    </Cell>")?;
        writeln!(out, "  </map>")?;
    }
    writeln!(out, "</Alignment>")?;
    writeln!(out, "</rdf:RDF>")
}

#[derive(Default)]
struct CellBuilder {
    entity1: Option<String>,
    entity2: Option<String>,
    relation: Option<String>,
    measure: Option<String>,
}

fn local_name(name: &[u8]) -> &[u8] {
    match name.iter().rposition(|&b| b == b':') {
        Some(pos) => &name[pos + 1..],
        None => name,
    }
}

/// Reads `<Cell>` elements from an OAEI alignment document. Cells with a
/// relation other than `=` are skipped; a missing measure means 1.0.
pub fn read_oaei_xml(reader: impl BufRead, path: &str) -> Result<Alignment, AlignmentError> {
    let xml_err = |message: String| AlignmentError::Xml {
        path: path.to_string(),
        message,
    };
    let mut xml = Reader::from_reader(reader);
    xml.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut alignment = Alignment::new();
    let mut cell: Option<CellBuilder> = None;
    let mut text_target: Option<&'static str> = None;
    let mut skipped = 0usize;

    loop {
        let event = xml
            .read_event_into(&mut buf)
            .map_err(|e| xml_err(format!("at byte {}: {e}", xml.buffer_position())))?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let name = e.name();
                let local = local_name(name.as_ref());
                match local {
                    b"Cell" => {
                        cell = Some(CellBuilder::default());
                    }
                    b"entity1" | b"entity2" => {
                        let Some(c) = cell.as_mut() else { continue };
                        let mut resource = None;
                        for attr in e.attributes() {
                            let attr = attr.map_err(|e| xml_err(e.to_string()))?;
                            if local_name(attr.key.as_ref()) == b"resource" {
                                let value = attr
                                    .unescape_value()
                                    .map_err(|e| xml_err(e.to_string()))?;
                                resource = Some(value.into_owned());
                            }
                        }
                        if local == b"entity1" {
                            c.entity1 = resource;
                        } else {
                            c.entity2 = resource;
                        }
                    }
                    b"relation" if cell.is_some() => text_target = Some("relation"),
                    b"measure" if cell.is_some() => text_target = Some("measure"),
                    _ => {}
                }
                if matches!(event, Event::Empty(_)) {
                    text_target = None;
                }
            }
            Event::Text(t) => {
                if let (Some(target), Some(c)) = (text_target, cell.as_mut()) {
                    let value = t.unescape().map_err(|e| xml_err(e.to_string()))?.into_owned();
                    match target {
                        "relation" => c.relation = Some(value),
                        _ => c.measure = Some(value),
                    }
                }
            }
            Event::End(ref e) => {
                text_target = None;
                if local_name(e.name().as_ref()) == b"Cell" {
                    let c = cell.take().unwrap_or_default();
                    let (Some(e1), Some(e2)) = (c.entity1, c.entity2) else {
                        return Err(xml_err("Cell without entity1/entity2".into()));
                    };
                    let relation = c.relation.unwrap_or_else(|| RELATION_EQUIVALENCE.to_string());
                    if relation.trim() != RELATION_EQUIVALENCE {
                        skipped += 1;
                        continue;
                    }
                    let confidence = match c.measure {
                        Some(m) => m
                            .trim()
                            .parse::<f64>()
                            .map_err(|_| xml_err(format!("invalid measure '{m}'")))?,
                        None => 1.0,
                    };
                    let source = Iri::new(e1).map_err(|e| xml_err(e.to_string()))?;
                    let target = Iri::new(e2).map_err(|e| xml_err(e.to_string()))?;
                    alignment.insert(Correspondence::new(source, target, confidence));
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if skipped > 0 {
        tracing::info!(path, skipped, "skipped non-equivalence cells");
    }
    Ok(alignment)
}

/// Reads an alignment file, choosing the format from its content: XML when
/// the first non-blank character is `<`, TSV otherwise.
pub fn read_alignment_file(path: &Path) -> Result<Alignment, AlignmentError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| AlignmentError::Io {
        path: display.clone(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let is_xml = {
        let head = reader.fill_buf().map_err(|source| AlignmentError::Io {
            path: display.clone(),
            source,
        })?;
        let text = String::from_utf8_lossy(head);
        text.trim_start_matches('\u{feff}').trim_start().starts_with('<')
    };
    if is_xml {
        read_oaei_xml(reader, &display)
    } else {
        read_tsv(reader, &display)
    }
}

pub fn write_tsv_file(alignment: &Alignment, path: &Path) -> Result<(), AlignmentError> {
    let io_err = |source| AlignmentError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = io::BufWriter::new(File::create(path).map_err(io_err)?);
    write_tsv(alignment, &mut file).map_err(io_err)?;
    file.flush().map_err(io_err)
}
