//! Line-oriented N-Triples reader and writer.
//!
//! Malformed lines are skipped and reported as [`ParseWarning`]s; only I/O
//! failures (including invalid UTF-8) abort parsing.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use super::{BlankNode, GraphError, Iri, KnowledgeGraph, Literal, Object, Subject, Triple};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseWarning {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

pub fn parse_ntriples(
    id: impl Into<String>,
    reader: impl BufRead,
) -> Result<KnowledgeGraph, GraphError> {
    let id = id.into();
    let mut reader = reader;
    let mut triples = Vec::new();
    let mut warnings = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let read = reader.read_line(&mut buf).map_err(|source| GraphError::Io {
            context: format!("{id} (line {})", line_no + 1),
            source,
        })?;
        if read == 0 {
            break;
        }
        line_no += 1;
        match parse_line(buf.trim_end_matches(['\n', '\r'])) {
            Ok(Some(triple)) => triples.push(triple),
            Ok(None) => {}
            Err(message) => {
                tracing::warn!(graph = %id, line = line_no, %message, "skipping malformed N-Triples line");
                warnings.push(ParseWarning {
                    line: line_no,
                    message,
                });
            }
        }
    }
    Ok(KnowledgeGraph::from_triples(id, triples, warnings))
}

/// Parses a file; the graph id is the file stem.
pub fn parse_ntriples_file(path: &Path) -> Result<KnowledgeGraph, GraphError> {
    let file = File::open(path).map_err(|source| GraphError::Io {
        context: path.display().to_string(),
        source,
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    parse_ntriples(id, BufReader::new(file))
}

/// Writes triples in canonical N-Triples, one per line.
pub fn write_ntriples<'a>(
    triples: impl IntoIterator<Item = &'a Triple>,
    mut out: impl Write,
) -> io::Result<()> {
    for t in triples {
        match &t.subject {
            Subject::Iri(iri) => write_iri(&mut out, iri)?,
            Subject::Blank(b) => write!(out, "_:{}", b.0)?,
        }
        out.write_all(b" ")?;
        write_iri(&mut out, &t.predicate)?;
        out.write_all(b" ")?;
        match &t.object {
            Object::Iri(iri) => write_iri(&mut out, iri)?,
            Object::Blank(b) => write!(out, "_:{}", b.0)?,
            Object::Literal(lit) => {
                out.write_all(b"\"")?;
                for c in lit.lexical.chars() {
                    match c {
                        '"' => out.write_all(b"\\\"")?,
                        '\\' => out.write_all(b"\\\\")?,
                        '\n' => out.write_all(b"\\n")?,
                        '\r' => out.write_all(b"\\r")?,
                        c => write!(out, "{c}")?,
                    }
                }
                out.write_all(b"\"")?;
                if let Some(lang) = &lit.language {
                    write!(out, "@{lang}")?;
                } else if let Some(dt) = &lit.datatype {
                    out.write_all(b"^^")?;
                    write_iri(&mut out, dt)?;
                }
            }
        }
        out.write_all(b" .\n")?;
    }
    Ok(())
}

fn write_iri(out: &mut impl Write, iri: &Iri) -> io::Result<()> {
    out.write_all(b"<")?;
    for c in iri.as_str().chars() {
        if is_forbidden_in_iri(c) {
            if (c as u32) <= 0xFFFF {
                write!(out, "\\u{:04X}", c as u32)?;
            } else {
                write!(out, "\\U{:08X}", c as u32)?;
            }
        } else {
            write!(out, "{c}")?;
        }
    }
    out.write_all(b">")
}

fn is_forbidden_in_iri(c: char) -> bool {
    c <= ' ' || matches!(c, '<' | '>' | '"' | '{' | '}' | '|' | '^' | '`' | '\\')
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(' ' | '\t')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: char) -> Result<(), String> {
        match self.bump() {
            Some(got) if got == c => Ok(()),
            Some(got) => Err(format!("expected '{c}' at column {}, found '{got}'", self.pos)),
            None => Err(format!("expected '{c}', found end of line")),
        }
    }

    fn iri(&mut self) -> Result<Iri, String> {
        self.expect('<')?;
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err("unterminated IRI".into()),
                Some('>') => break,
                Some('\\') => out.push(self.uchar()?),
                Some(c) if is_forbidden_in_iri(c) => {
                    return Err(format!("character {c:?} not allowed in IRI"))
                }
                Some(c) => out.push(c),
            }
        }
        if !out.contains(':') {
            return Err(format!("relative IRI <{out}>"));
        }
        Iri::new(out).map_err(|e| e.to_string())
    }

    fn uchar(&mut self) -> Result<char, String> {
        let width = match self.bump() {
            Some('u') => 4,
            Some('U') => 8,
            other => return Err(format!("invalid escape \\{}", other.unwrap_or(' '))),
        };
        let rest = self.rest();
        if rest.len() < width || !rest.is_char_boundary(width) {
            return Err("truncated unicode escape".into());
        }
        let hex = &rest[..width];
        let code = u32::from_str_radix(hex, 16).map_err(|_| format!("bad unicode escape {hex}"))?;
        self.pos += width;
        char::from_u32(code).ok_or_else(|| format!("invalid code point U+{code:X}"))
    }

    fn blank(&mut self) -> Result<BlankNode, String> {
        self.expect('_')?;
        self.expect(':')?;
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | '\u{B7}') {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        // A label may contain '.' but not end with one.
        while self.s[start..self.pos].ends_with('.') {
            self.pos -= 1;
        }
        if self.pos == start {
            return Err("empty blank node label".into());
        }
        Ok(BlankNode(Arc::from(&self.s[start..self.pos])))
    }

    fn literal(&mut self) -> Result<Literal, String> {
        self.expect('"')?;
        let mut lexical = String::new();
        loop {
            match self.bump() {
                None => return Err("unterminated literal".into()),
                Some('"') => break,
                Some('\\') => match self.peek() {
                    Some('u' | 'U') => lexical.push(self.uchar()?),
                    Some(c) => {
                        self.pos += 1;
                        lexical.push(match c {
                            't' => '\t',
                            'b' => '\u{8}',
                            'n' => '\n',
                            'r' => '\r',
                            'f' => '\u{C}',
                            '"' => '"',
                            '\'' => '\'',
                            '\\' => '\\',
                            other => return Err(format!("invalid escape \\{other}")),
                        });
                    }
                    None => return Err("dangling escape".into()),
                },
                Some(c) => lexical.push(c),
            }
        }
        match self.peek() {
            Some('@') => {
                self.pos += 1;
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '-') {
                    self.pos += 1;
                }
                let tag = &self.s[start..self.pos];
                let valid = !tag.is_empty()
                    && tag.split('-').all(|part| !part.is_empty())
                    && tag.split('-').next().is_some_and(|p| p.chars().all(|c| c.is_ascii_alphabetic()));
                if !valid {
                    return Err(format!("invalid language tag '{tag}'"));
                }
                Ok(Literal {
                    lexical,
                    language: Some(tag.to_string()),
                    datatype: None,
                })
            }
            Some('^') => {
                self.expect('^')?;
                self.expect('^')?;
                let datatype = self.iri()?;
                Ok(Literal {
                    lexical,
                    language: None,
                    datatype: Some(datatype),
                })
            }
            _ => Ok(Literal::plain(lexical)),
        }
    }
}

fn parse_line(line: &str) -> Result<Option<Triple>, String> {
    let mut cur = Cursor { s: line, pos: 0 };
    cur.skip_ws();
    match cur.peek() {
        None | Some('#') => return Ok(None),
        _ => {}
    }
    let subject = match cur.peek() {
        Some('<') => Subject::Iri(cur.iri()?),
        Some('_') => Subject::Blank(cur.blank()?),
        _ => return Err("subject must be an IRI or blank node".into()),
    };
    cur.skip_ws();
    if cur.peek() != Some('<') {
        return Err("predicate must be an IRI".into());
    }
    let predicate = cur.iri()?;
    cur.skip_ws();
    let object = match cur.peek() {
        Some('<') => Object::Iri(cur.iri()?),
        Some('_') => Object::Blank(cur.blank()?),
        Some('"') => Object::Literal(cur.literal()?),
        _ => return Err("object must be an IRI, blank node or literal".into()),
    };
    cur.skip_ws();
    cur.expect('.')?;
    cur.skip_ws();
    match cur.peek() {
        None | Some('#') => Ok(Some(Triple {
            subject,
            predicate,
            object,
        })),
        Some(c) => Err(format!("unexpected '{c}' after triple")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EntityKind;

    fn parse(s: &str) -> KnowledgeGraph {
        parse_ntriples("t", s.as_bytes()).unwrap()
    }

    #[test]
    fn class_declaration() {
        let g = parse("<http://x/A> <http://www.w3.org/1999/02/22-rdf-syntax-ns#type> <http://www.w3.org/2002/07/owl#Class> .\n");
        assert_eq!(g.len(), 1);
        assert_eq!(
            g.kind_of(&Iri::new("http://x/A").unwrap()),
            Some(EntityKind::Class)
        );
    }

    #[test]
    fn empty_input() {
        let g = parse("");
        assert!(g.is_empty());
        assert!(g.entities().is_empty());
        assert!(g.warnings().is_empty());
    }

    #[test]
    fn language_tagged_literal() {
        let g = parse("<http://x/A> <http://www.w3.org/2000/01/rdf-schema#label> \"heart\"@en .");
        let t = g.triples().next().unwrap();
        assert_eq!(t.object, Object::Literal(Literal::tagged("heart", "en")));
    }

    #[test]
    fn typed_literal_and_escapes() {
        let g = parse(
            r#"<http://x/A> <http://x/p> "a\"b\\c\n\u00E9\U0001F600"^^<http://www.w3.org/2001/XMLSchema#string> ."#,
        );
        let lit = g.triples().next().unwrap().object.as_literal().unwrap().clone();
        assert_eq!(lit.lexical, "a\"b\\c\né😀");
        assert_eq!(
            lit.datatype.unwrap().as_str(),
            "http://www.w3.org/2001/XMLSchema#string"
        );
        assert!(lit.language.is_none());
    }

    #[test]
    fn blank_nodes_comments_and_whitespace() {
        let g = parse(
            "# header comment\n\n  _:b1 <http://x/p> _:b.2.\n<http://x/s> <http://x/p> _:b1 . # trailing\n",
        );
        assert_eq!(g.len(), 2);
        let first = g.triples().next().unwrap();
        assert_eq!(first.subject, Subject::Blank(BlankNode("b1".into())));
        assert_eq!(first.object, Object::Blank(BlankNode("b.2".into())));
    }

    #[test]
    fn malformed_lines_are_skipped_with_line_numbers() {
        let g = parse(
            "<http://x/a> <http://x/p> <http://x/b> .\n\
             <http://x/a> <http://x/p> \"unterminated .\n\
             \"lit\" <http://x/p> <http://x/b> .\n\
             <rel> <http://x/p> <http://x/b> .\n\
             <http://x/a> <http://x/p> <http://x/c>\n\
             <http://x/a> <http://x/p> <http://x/d> .\n",
        );
        assert_eq!(g.len(), 2);
        let lines: Vec<usize> = g.warnings().iter().map(|w| w.line).collect();
        assert_eq!(lines, vec![2, 3, 4, 5]);
    }

    #[test]
    fn invalid_utf8_is_fatal() {
        let bytes: &[u8] = b"<http://x/a> <http://x/p> \"\xff\" .\n";
        assert!(matches!(
            parse_ntriples("t", bytes),
            Err(GraphError::Io { .. })
        ));
    }

    #[test]
    fn duplicate_triples_collapse() {
        let g = parse("<http://x/a> <http://x/p> \"v\" .\n<http://x/a> <http://x/p> \"v\" .\n");
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn serialize_escapes_round_trip() {
        let src = "<http://x/a> <http://x/p> \"tab\\there \\\"q\\\" \\\\ \\r\"@en-GB .\n\
                   _:n <http://x/q\\u0020r> \"1\"^^<http://www.w3.org/2001/XMLSchema#int> .\n";
        let g = parse(src);
        assert_eq!(g.len(), 2, "{:?}", g.warnings());
        let mut out = Vec::new();
        write_ntriples(g.triples(), &mut out).unwrap();
        let again = parse(std::str::from_utf8(&out).unwrap());
        let a: Vec<_> = g.triples().cloned().collect();
        let b: Vec<_> = again.triples().cloned().collect();
        assert_eq!(a, b);
    }
}
