//! Token-level BIO records: the export boundary to sequence-labeling
//! trainers.
//!
//! TSV layout, one token per row:
//!
//! ```text
//! session_id  utterance_index  token_index  surface  bio_tag  entity_id  head_entity_id  relation
//! ```
//!
//! `_` marks an empty cell, a blank line separates utterances and lines
//! starting with `#` are comments. Surfaces escape `\`, tab, CR, LF and
//! space as `\\`, `\t`, `\r`, `\n` and `\s`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use thiserror::Error;

use super::AnnoParseError;
use crate::corpus::{AnnotatedSession, ArgumentEntity, DialogueSession, Source, Span, TriggerEntity};
use crate::tokenize::Tokenizer;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BioTag {
    Begin(String),
    Inside(String),
    Outside,
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::Begin(t) => write!(f, "B-{t}"),
            BioTag::Inside(t) => write!(f, "I-{t}"),
            BioTag::Outside => f.write_str("O"),
        }
    }
}

impl std::str::FromStr for BioTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(BioTag::Outside);
        }
        match s.split_once('-') {
            Some(("B", t)) if !t.is_empty() => Ok(BioTag::Begin(t.to_string())),
            Some(("I", t)) if !t.is_empty() => Ok(BioTag::Inside(t.to_string())),
            _ => Err(format!("invalid BIO tag '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqRecord {
    pub session_id: String,
    pub utterance_index: usize,
    pub token_index: usize,
    pub surface: String,
    pub tag: BioTag,
    pub entity_id: Option<u32>,
    pub head_entity_id: Option<u32>,
    pub relation: Option<String>,
}

#[derive(Debug, Error)]
pub enum TsvError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row per token. Argument rows carry the linked trigger as head and
/// the argument type as relation.
pub fn to_sequence_records(
    annotated: &AnnotatedSession,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<SeqRecord>, AnnoParseError> {
    struct Mark<'a> {
        span: Span,
        id: u32,
        ty: &'a str,
        head: Option<u32>,
    }
    let marks: Vec<Mark> = annotated
        .triggers
        .iter()
        .map(|t| Mark {
            span: t.span,
            id: t.entity_id,
            ty: &t.trigger_type,
            head: None,
        })
        .chain(annotated.arguments.iter().map(|a| Mark {
            span: a.span,
            id: a.entity_id,
            ty: &a.argument_type,
            head: Some(a.trigger_entity_id),
        }))
        .collect();

    let session_id = &annotated.session.id;
    let mut rows = Vec::new();
    for (u, utt) in annotated.session.utterances.iter().enumerate() {
        let tokens = tokenizer.tokenize(&utt.text);
        let mut labels: Vec<Option<(usize, bool)>> = vec![None; tokens.len()];
        for (mi, m) in marks.iter().enumerate().filter(|(_, m)| m.span.utterance_index == u) {
            let misaligned = || AnnoParseError::MisalignedEntity {
                session_id: session_id.clone(),
                entity: m.id,
            };
            let first = tokens.iter().position(|t| t.start == m.span.start_char).ok_or_else(misaligned)?;
            let last = tokens.iter().position(|t| t.end == m.span.end_char).ok_or_else(misaligned)?;
            if last < first {
                return Err(misaligned());
            }
            for (k, slot) in labels[first..=last].iter_mut().enumerate() {
                *slot = Some((mi, k == 0));
            }
        }
        for (ti, (tok, label)) in tokens.iter().zip(labels).enumerate() {
            let (tag, entity_id, head, relation) = match label {
                None => (BioTag::Outside, None, None, None),
                Some((mi, begin)) => {
                    let m = &marks[mi];
                    let tag = if begin {
                        BioTag::Begin(m.ty.to_string())
                    } else {
                        BioTag::Inside(m.ty.to_string())
                    };
                    (tag, Some(m.id), m.head, m.head.map(|_| m.ty.to_string()))
                }
            };
            rows.push(SeqRecord {
                session_id: session_id.clone(),
                utterance_index: u,
                token_index: ti,
                surface: tok.surface.to_string(),
                tag,
                entity_id,
                head_entity_id: head,
                relation,
            });
        }
    }
    Ok(rows)
}

struct Building {
    ty: String,
    id: Option<u32>,
    head: Option<u32>,
    relation: Option<String>,
    utterance: usize,
    start: usize,
    end: usize,
}

/// Rebuilds annotated sessions from records, grouped by session id in
/// order of first appearance.
///
/// An `I-` tag that does not continue an entity of the same type opens a
/// new entity, as if it were `B-`. Entities without an id get fresh ids
/// above the largest id in the session.
pub fn from_sequence_records(
    rows: &[SeqRecord],
    sessions: &[DialogueSession],
    label_source: Source,
) -> Result<Vec<AnnotatedSession>, AnnoParseError> {
    let by_id: HashMap<&str, &DialogueSession> = sessions.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: HashMap<&str, Vec<&SeqRecord>> = HashMap::new();
    for r in rows {
        let key = r.session_id.as_str();
        if !by_id.contains_key(key) {
            return Err(AnnoParseError::UnknownSessionId {
                session_id: r.session_id.clone(),
            });
        }
        grouped
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|id| rebuild_session(by_id[id], &grouped[id], label_source))
        .collect()
}

fn rebuild_session(
    session: &DialogueSession,
    rows: &[&SeqRecord],
    label_source: Source,
) -> Result<AnnotatedSession, AnnoParseError> {
    let sid = &session.id;
    let inconsistent = |detail: String| AnnoParseError::InconsistentLinks {
        session_id: sid.clone(),
        detail,
    };

    let mut per_utterance: BTreeMap<usize, Vec<&SeqRecord>> = BTreeMap::new();
    for r in rows {
        per_utterance.entry(r.utterance_index).or_default().push(r);
    }

    let mut entities: Vec<Building> = Vec::new();
    for (u, mut urows) in per_utterance {
        let utt = session.utterances.get(u).ok_or(AnnoParseError::UtteranceCountMismatch {
            expected: session.utterances.len(),
            found: u + 1,
        })?;
        urows.sort_by_key(|r| r.token_index);
        // token offsets recovered by scanning surfaces left to right
        let chars: Vec<char> = utt.text.chars().collect();
        let mut cursor = 0;
        let mut current: Option<Building> = None;
        let mut prev_token: Option<usize> = None;
        for r in urows {
            let needle: Vec<char> = r.surface.chars().collect();
            let start = (cursor..=chars.len().saturating_sub(needle.len()))
                .find(|&p| chars[p..p + needle.len()] == needle[..])
                .filter(|_| !needle.is_empty())
                .ok_or(AnnoParseError::ContextAltered { utterance: u })?;
            let end = start + needle.len();
            cursor = end;
            let contiguous = prev_token.is_some_and(|p| p + 1 == r.token_index);
            prev_token = Some(r.token_index);

            let ty = match &r.tag {
                BioTag::Outside => {
                    entities.extend(current.take());
                    continue;
                }
                BioTag::Begin(t) => {
                    entities.extend(current.take());
                    t
                }
                BioTag::Inside(t) => {
                    let continues = contiguous && current.as_ref().is_some_and(|c| &c.ty == t);
                    if continues {
                        let c = current.as_mut().unwrap();
                        if c.id != r.entity_id {
                            return Err(inconsistent(format!(
                                "token {} of one entity carries a different entity id",
                                r.token_index
                            )));
                        }
                        if c.head != r.head_entity_id || c.relation != r.relation {
                            return Err(inconsistent(format!(
                                "tokens of entity {} disagree on their head",
                                c.id.map_or("_".to_string(), |v| v.to_string())
                            )));
                        }
                        c.end = end;
                        continue;
                    }
                    entities.extend(current.take());
                    t
                }
            };
            current = Some(Building {
                ty: ty.clone(),
                id: r.entity_id,
                head: r.head_entity_id,
                relation: r.relation.clone(),
                utterance: u,
                start,
                end,
            });
        }
        entities.extend(current.take());
    }

    let mut used: HashSet<u32> = HashSet::new();
    for e in &entities {
        if let Some(id) = e.id {
            if !used.insert(id) {
                return Err(inconsistent(format!("entity id {id} labels two separate spans")));
            }
        }
    }
    let mut next = used.iter().copied().max().unwrap_or(0);
    let mut triggers = Vec::new();
    let mut arguments = Vec::new();
    for e in entities {
        let id = e.id.unwrap_or_else(|| {
            next += 1;
            next
        });
        let span = Span::new(e.utterance, e.start, e.end);
        match e.head {
            None => triggers.push(TriggerEntity {
                entity_id: id,
                span,
                trigger_type: e.ty,
                ecr_chain_id: None,
            }),
            Some(head) => {
                if e.relation.as_ref().is_some_and(|r| *r != e.ty) {
                    return Err(inconsistent(format!("entity {id} relation differs from its type")));
                }
                arguments.push(ArgumentEntity {
                    entity_id: id,
                    span,
                    argument_type: e.ty,
                    trigger_entity_id: head,
                })
            }
        }
    }
    let trigger_ids: HashSet<u32> = triggers.iter().map(|t| t.entity_id).collect();
    if let Some(a) = arguments.iter().find(|a| !trigger_ids.contains(&a.trigger_entity_id)) {
        return Err(inconsistent(format!(
            "argument {} points to {} which is not a trigger",
            a.entity_id, a.trigger_entity_id
        )));
    }
    let annotated = AnnotatedSession {
        session: session.clone(),
        triggers,
        arguments,
        label_source,
    };
    annotated.validate(None).map_err(|e| inconsistent(e.to_string()))?;
    Ok(annotated)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            ' ' => out.push_str("\\s"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('s') => out.push(' '),
            other => return Err(format!("bad escape '\\{}'", other.map_or(String::new(), String::from))),
        }
    }
    Ok(out)
}

fn cell<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "_".to_string(), ToString::to_string)
}

pub const TSV_HEADER: &str =
    "# session_id\tutterance_index\ttoken_index\tsurface\tbio_tag\tentity_id\thead_entity_id\trelation";

pub fn write_records<W: Write>(rows: &[SeqRecord], writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{TSV_HEADER}")?;
    let mut prev: Option<(&str, usize)> = None;
    for r in rows {
        let key = (r.session_id.as_str(), r.utterance_index);
        if prev.is_some_and(|p| p != key) {
            writeln!(w)?;
        }
        prev = Some(key);
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.session_id,
            r.utterance_index,
            r.token_index,
            escape(&r.surface),
            r.tag,
            cell(&r.entity_id),
            cell(&r.head_entity_id),
            cell(&r.relation),
        )?;
    }
    if prev.is_some() {
        writeln!(w)?;
    }
    w.flush()
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<SeqRecord>, TsvError> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |message: String| TsvError::Format { line: line_no, message };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 8 {
            return Err(fail(format!("expected 8 columns, found {}", cols.len())));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| fail(format!("{what} '{s}' is not an integer")));
        let opt_id = |s: &str, what: &str| -> Result<Option<u32>, TsvError> {
            if s == "_" {
                Ok(None)
            } else {
                s.parse::<u32>()
                    .ok()
                    .filter(|&v| v > 0)
                    .map(Some)
                    .ok_or_else(|| fail(format!("{what} '{s}' is not a positive integer")))
            }
        };
        rows.push(SeqRecord {
            session_id: cols[0].to_string(),
            utterance_index: num(cols[1], "utterance_index")?,
            token_index: num(cols[2], "token_index")?,
            surface: unescape(cols[3]).map_err(fail)?,
            tag: cols[4].parse().map_err(fail)?,
            entity_id: opt_id(cols[5], "entity_id")?,
            head_entity_id: opt_id(cols[6], "head_entity_id")?,
            relation: (cols[7] != "_").then(|| cols[7].to_string()),
        });
    }
    Ok(rows)
}
