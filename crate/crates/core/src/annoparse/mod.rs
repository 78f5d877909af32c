//! The three-step labeling transcript: grammar, parser, validator and
//! renderer, plus conversion to and from BIO sequence records.
//!
//! Wire format of a transcript:
//!
//! ```text
//! Step 1:
//! E: Then <E1>line up</E1> the <E2>Gyozas</E2>.
//! I: On the pan?
//! Step 2:
//! E1: PLACE
//! Step 3:
//! (E2, Object, E1)
//! ```
//!
//! Step 1 repeats every utterance with entities wrapped in flat
//! `<Ek>…</Ek>` tags. Step 2 lists the triggers as `Ek: TYPE`, optionally
//! followed by ` ecr=N` for an event-coreference chain. Step 3 lists
//! arguments as `(arg, TYPE, trigger)` triplets.

mod records;

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{
    char_slice, AnnotatedSession, ArgumentEntity, DialogueSession, Source, Span, Speaker, Taxonomy,
    TriggerEntity,
};

pub use records::{
    from_sequence_records, read_records, to_sequence_records, write_records, BioTag, SeqRecord, TsvError,
};

/// Every way a labeling reply or a record set can be rejected.
#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum AnnoParseError {
    #[error("missing or out-of-order 'Step {step}:' header")]
    MissingStepHeader { step: u8 },
    #[error("utterance {utterance}: malformed tag ({detail})")]
    MalformedTag { utterance: usize, detail: String },
    #[error("tag id E{id} used more than once")]
    DuplicateTagId { id: u32 },
    #[error("utterance {utterance} differs from the original once tags are removed")]
    ContextAltered { utterance: usize },
    #[error("entity E{entity}: unknown type '{ty}'")]
    UnknownType { entity: u32, ty: String },
    #[error("entity E{entity}: {detail}")]
    DanglingReference { entity: u32, detail: String },
    #[error("entity E{entity} is tagged but neither a trigger nor an argument")]
    OrphanEntity { entity: u32 },
    #[error("expected {expected} utterances, found {found}")]
    UtteranceCountMismatch { expected: usize, found: usize },
    #[error("step {step}: cannot parse line '{line}'")]
    MalformedLine { step: u8, line: String },
    #[error("entity E{entity} is assigned more than one role")]
    ConflictingRole { entity: u32 },
    #[error("session '{session_id}': entity {entity} does not align with token boundaries")]
    MisalignedEntity { session_id: String, entity: u32 },
    #[error("records reference unknown session '{session_id}'")]
    UnknownSessionId { session_id: String },
    #[error("session '{session_id}': inconsistent links ({detail})")]
    InconsistentLinks { session_id: String, detail: String },
}

impl AnnoParseError {
    pub fn kind(&self) -> &'static str {
        match self {
            AnnoParseError::MissingStepHeader { .. } => "MissingStepHeader",
            AnnoParseError::MalformedTag { .. } => "MalformedTag",
            AnnoParseError::DuplicateTagId { .. } => "DuplicateTagId",
            AnnoParseError::ContextAltered { .. } => "ContextAltered",
            AnnoParseError::UnknownType { .. } => "UnknownType",
            AnnoParseError::DanglingReference { .. } => "DanglingReference",
            AnnoParseError::OrphanEntity { .. } => "OrphanEntity",
            AnnoParseError::UtteranceCountMismatch { .. } => "UtteranceCountMismatch",
            AnnoParseError::MalformedLine { .. } => "MalformedLine",
            AnnoParseError::ConflictingRole { .. } => "ConflictingRole",
            AnnoParseError::MisalignedEntity { .. } => "MisalignedEntity",
            AnnoParseError::UnknownSessionId { .. } => "UnknownSessionId",
            AnnoParseError::InconsistentLinks { .. } => "InconsistentLinks",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriggerLine {
    pub entity_id: u32,
    pub trigger_type: String,
    pub ecr_chain_id: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripletLine {
    pub argument_id: u32,
    pub argument_type: String,
    pub trigger_id: u32,
}

/// A labeling reply split into its three steps, before validation
/// against the original session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedTranscript {
    pub step1: Vec<(Speaker, String)>,
    pub step2: Vec<TriggerLine>,
    pub step3: Vec<TripletLine>,
}

static HEADER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\s*step\s*([0-9]+)\s*[:：]\s*$").unwrap());
static UTTERANCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*([EI])\s*[:：] ?(.*)$").unwrap());
static TRIGGER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*<?E([0-9]+)>?\s*[:：]\s*([^\s]+)(?:\s+ecr\s*=\s*(-?[0-9]+))?\s*$").unwrap()
});
static TRIPLET: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*[(（]\s*<?E([0-9]+)>?\s*[,，]\s*([^\s,，]+)\s*[,，]\s*<?E([0-9]+)>?\s*[)）]\s*$").unwrap()
});
static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<(/?)E([^<>]*)>").unwrap());

fn positive_id(s: &str) -> Option<u32> {
    s.parse::<u32>().ok().filter(|&v| v > 0)
}

impl TaggedTranscript {
    /// Splits a reply into steps and parses each line. Text before the
    /// `Step 1:` header and blank lines are ignored.
    pub fn parse(reply: &str) -> Result<Self, AnnoParseError> {
        let mut blocks: [Vec<&str>; 3] = Default::default();
        let mut current: Option<usize> = None;
        for line in reply.lines() {
            if let Some(c) = HEADER.captures(line) {
                let expected = current.map_or(1, |s| s + 2) as u8;
                let got: u8 = c[1].parse().unwrap_or(0);
                if got != expected {
                    return Err(AnnoParseError::MissingStepHeader { step: expected });
                }
                current = Some(expected as usize - 1);
                continue;
            }
            if let Some(step) = current {
                if !line.trim().is_empty() {
                    blocks[step].push(line);
                }
            }
        }
        match current {
            None => return Err(AnnoParseError::MissingStepHeader { step: 1 }),
            Some(s) if s < 2 => return Err(AnnoParseError::MissingStepHeader { step: s as u8 + 2 }),
            _ => {}
        }

        let malformed = |step: u8, line: &str| AnnoParseError::MalformedLine {
            step,
            line: line.to_string(),
        };
        let step1 = blocks[0]
            .iter()
            .map(|line| {
                let c = UTTERANCE.captures(line).ok_or_else(|| malformed(1, line))?;
                let speaker = Speaker::from_marker(&c[1]).expect("regex admits E or I");
                Ok((speaker, c[2].to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let step2 = blocks[1]
            .iter()
            .map(|line| {
                let c = TRIGGER.captures(line).ok_or_else(|| malformed(2, line))?;
                Ok(TriggerLine {
                    entity_id: positive_id(&c[1]).ok_or_else(|| malformed(2, line))?,
                    trigger_type: c[2].to_string(),
                    ecr_chain_id: match c.get(3) {
                        Some(m) => Some(m.as_str().parse().map_err(|_| malformed(2, line))?),
                        None => None,
                    },
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let step3 = blocks[2]
            .iter()
            .map(|line| {
                let c = TRIPLET.captures(line).ok_or_else(|| malformed(3, line))?;
                Ok(TripletLine {
                    argument_id: positive_id(&c[1]).ok_or_else(|| malformed(3, line))?,
                    argument_type: c[2].to_string(),
                    trigger_id: positive_id(&c[3]).ok_or_else(|| malformed(3, line))?,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { step1, step2, step3 })
    }

    pub fn render(&self) -> String {
        let mut out = String::from("Step 1:\n");
        for (speaker, text) in &self.step1 {
            out.push_str(speaker.marker());
            out.push_str(": ");
            out.push_str(text);
            out.push('\n');
        }
        out.push_str("Step 2:\n");
        for t in &self.step2 {
            out.push_str(&format!("E{}: {}", t.entity_id, t.trigger_type));
            if let Some(ecr) = t.ecr_chain_id {
                out.push_str(&format!(" ecr={ecr}"));
            }
            out.push('\n');
        }
        out.push_str("Step 3:\n");
        for a in &self.step3 {
            out.push_str(&format!("(E{}, {}, E{})\n", a.argument_id, a.argument_type, a.trigger_id));
        }
        out
    }
}

/// A tagged surface inside one step-1 utterance, offsets in characters of
/// the detagged text.
struct TaggedSurface {
    id: u32,
    start: usize,
    end: usize,
}

/// Removes flat `<Ek>…</Ek>` tags, returning the plain text and the
/// tagged surfaces.
fn detag(text: &str, utterance: usize) -> Result<(String, Vec<TaggedSurface>), AnnoParseError> {
    let bad = |detail: String| AnnoParseError::MalformedTag { utterance, detail };
    let mut plain = String::with_capacity(text.len());
    let mut plain_chars = 0;
    let mut surfaces = Vec::new();
    let mut open: Option<(u32, usize)> = None;
    let mut last = 0;
    for m in TAG.captures_iter(text) {
        let whole = m.get(0).unwrap();
        let chunk = &text[last..whole.start()];
        plain.push_str(chunk);
        plain_chars += chunk.chars().count();
        last = whole.end();

        let id = positive_id(&m[2]).ok_or_else(|| bad(format!("'{}' is not a positive integer id", whole.as_str())))?;
        let closing = !m[1].is_empty();
        match (closing, open) {
            (false, None) => open = Some((id, plain_chars)),
            (false, Some((outer, _))) => return Err(bad(format!("E{id} opened inside E{outer}"))),
            (true, None) => return Err(bad(format!("closing E{id} without an open tag"))),
            (true, Some((opened, start))) => {
                if opened != id {
                    return Err(bad(format!("E{opened} closed by E{id}")));
                }
                if plain_chars == start {
                    return Err(bad(format!("E{id} is empty")));
                }
                surfaces.push(TaggedSurface {
                    id,
                    start,
                    end: plain_chars,
                });
                open = None;
            }
        }
    }
    if let Some((id, _)) = open {
        return Err(bad(format!("E{id} is never closed")));
    }
    plain.push_str(&text[last..]);
    Ok((plain, surfaces))
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Character counts before and after the trimmed region of `s`.
fn trim_bounds(s: &str) -> (usize, usize) {
    let total = s.chars().count();
    let lead = s.chars().take_while(|c| c.is_whitespace()).count();
    if lead == total {
        return (total, total);
    }
    let trail = s.chars().rev().take_while(|c| c.is_whitespace()).count();
    (lead, total - trail)
}

/// Maps character offsets in the reply's detagged utterance onto the
/// original utterance, which is equal to it after NFC and trimming.
struct OffsetMap<'a> {
    reply: &'a str,
    original: &'a str,
    identical: bool,
    trimmed_equal: bool,
    reply_bounds: (usize, usize),
    original_bounds: (usize, usize),
}

impl<'a> OffsetMap<'a> {
    fn new(reply: &'a str, original: &'a str) -> Option<Self> {
        let identical = reply == original;
        if !identical && nfc(reply.trim()) != nfc(original.trim()) {
            return None;
        }
        Some(Self {
            reply,
            original,
            identical,
            trimmed_equal: reply.trim() == original.trim(),
            reply_bounds: trim_bounds(reply),
            original_bounds: trim_bounds(original),
        })
    }

    fn map(&self, pos: usize) -> Option<usize> {
        if self.identical {
            return Some(pos);
        }
        let (r_lo, r_hi) = self.reply_bounds;
        let (o_lo, o_hi) = self.original_bounds;
        if pos < r_lo || pos > r_hi {
            return None;
        }
        let rel = pos - r_lo;
        if self.trimmed_equal {
            return Some(o_lo + rel);
        }
        // composed/decomposed forms differ: find the original prefix whose
        // normalization matches the reply prefix
        let target = nfc(char_slice(self.reply, r_lo, pos));
        let trimmed = char_slice(self.original, o_lo, o_hi);
        let n = o_hi - o_lo;
        (0..=n)
            .find(|&q| nfc(char_slice(trimmed, 0, q)) == target)
            .map(|q| o_lo + q)
    }
}

/// Parses and validates a labeling reply for `original`.
pub fn parse_transcript(
    reply: &str,
    original: &DialogueSession,
    taxonomy: &Taxonomy,
    label_source: Source,
) -> Result<AnnotatedSession, AnnoParseError> {
    let transcript = TaggedTranscript::parse(reply)?;
    resolve_transcript(&transcript, original, taxonomy, label_source)
}

/// Validates a parsed transcript against the original session and turns
/// it into frames.
pub fn resolve_transcript(
    transcript: &TaggedTranscript,
    original: &DialogueSession,
    taxonomy: &Taxonomy,
    label_source: Source,
) -> Result<AnnotatedSession, AnnoParseError> {
    if transcript.step1.len() != original.utterances.len() {
        return Err(AnnoParseError::UtteranceCountMismatch {
            expected: original.utterances.len(),
            found: transcript.step1.len(),
        });
    }

    // step 1: tags -> spans in the original text
    let mut spans: BTreeMap<u32, Span> = BTreeMap::new();
    let mut reading_order: Vec<u32> = Vec::new();
    for (u, ((speaker, tagged), orig)) in transcript.step1.iter().zip(&original.utterances).enumerate() {
        let (plain, surfaces) = detag(tagged, u)?;
        for s in &surfaces {
            if spans.contains_key(&s.id) {
                return Err(AnnoParseError::DuplicateTagId { id: s.id });
            }
            reading_order.push(s.id);
            spans.insert(s.id, Span::new(u, 0, 0));
        }
        if *speaker != orig.speaker {
            return Err(AnnoParseError::ContextAltered { utterance: u });
        }
        let map = OffsetMap::new(&plain, &orig.text).ok_or(AnnoParseError::ContextAltered { utterance: u })?;
        for s in surfaces {
            let outside = || AnnoParseError::MalformedTag {
                utterance: u,
                detail: format!("E{} lies outside the utterance text", s.id),
            };
            let start = map.map(s.start).ok_or_else(outside)?;
            let end = map.map(s.end).ok_or_else(outside)?;
            if start >= end {
                return Err(outside());
            }
            spans.insert(s.id, Span::new(u, start, end));
        }
    }

    // step 2: triggers
    let mut triggers: HashMap<u32, TriggerEntity> = HashMap::new();
    for line in &transcript.step2 {
        let id = line.entity_id;
        let span = *spans.get(&id).ok_or_else(|| AnnoParseError::DanglingReference {
            entity: id,
            detail: "step 2 names an id that is not tagged in step 1".into(),
        })?;
        if !taxonomy.is_trigger(&line.trigger_type) {
            return Err(AnnoParseError::UnknownType {
                entity: id,
                ty: line.trigger_type.clone(),
            });
        }
        if triggers.contains_key(&id) {
            return Err(AnnoParseError::ConflictingRole { entity: id });
        }
        triggers.insert(
            id,
            TriggerEntity {
                entity_id: id,
                span,
                trigger_type: line.trigger_type.clone(),
                ecr_chain_id: line.ecr_chain_id,
            },
        );
    }

    // step 3: argument triplets
    let mut arguments: HashMap<u32, ArgumentEntity> = HashMap::new();
    for line in &transcript.step3 {
        let id = line.argument_id;
        let span = *spans.get(&id).ok_or_else(|| AnnoParseError::DanglingReference {
            entity: id,
            detail: "step 3 names an argument that is not tagged in step 1".into(),
        })?;
        if !triggers.contains_key(&line.trigger_id) {
            return Err(AnnoParseError::DanglingReference {
                entity: id,
                detail: format!("linked trigger E{} is not a step-2 trigger", line.trigger_id),
            });
        }
        if !taxonomy.is_argument(&line.argument_type) {
            return Err(AnnoParseError::UnknownType {
                entity: id,
                ty: line.argument_type.clone(),
            });
        }
        if triggers.contains_key(&id) || arguments.contains_key(&id) {
            return Err(AnnoParseError::ConflictingRole { entity: id });
        }
        arguments.insert(
            id,
            ArgumentEntity {
                entity_id: id,
                span,
                argument_type: line.argument_type.clone(),
                trigger_entity_id: line.trigger_id,
            },
        );
    }

    let mut out_triggers = Vec::new();
    let mut out_arguments = Vec::new();
    for id in &reading_order {
        if let Some(t) = triggers.remove(id) {
            out_triggers.push(t);
        } else if let Some(a) = arguments.remove(id) {
            out_arguments.push(a);
        } else {
            return Err(AnnoParseError::OrphanEntity { entity: *id });
        }
    }

    let annotated = AnnotatedSession {
        session: original.clone(),
        triggers: out_triggers,
        arguments: out_arguments,
        label_source,
    };
    if let Err(e) = annotated.validate(Some(taxonomy)) {
        return Err(AnnoParseError::MalformedTag {
            utterance: 0,
            detail: e.to_string(),
        });
    }
    Ok(annotated)
}

/// Builds the transcript for an annotated session with ids renumbered in
/// reading order.
pub fn transcript_of(annotated: &AnnotatedSession) -> TaggedTranscript {
    let canon = annotated.canonicalize();
    let mut by_utterance: BTreeMap<usize, Vec<(Span, u32)>> = BTreeMap::new();
    for (span, id) in canon
        .triggers
        .iter()
        .map(|t| (t.span, t.entity_id))
        .chain(canon.arguments.iter().map(|a| (a.span, a.entity_id)))
    {
        by_utterance.entry(span.utterance_index).or_default().push((span, id));
    }
    let step1 = canon
        .session
        .utterances
        .iter()
        .enumerate()
        .map(|(u, utt)| {
            let mut entities = by_utterance.remove(&u).unwrap_or_default();
            entities.sort();
            let mut tagged = String::with_capacity(utt.text.len() + entities.len() * 10);
            let mut cursor = 0;
            for (span, id) in entities {
                tagged.push_str(char_slice(&utt.text, cursor, span.start_char));
                tagged.push_str(&format!("<E{id}>"));
                tagged.push_str(span.slice(&utt.text));
                tagged.push_str(&format!("</E{id}>"));
                cursor = span.end_char;
            }
            tagged.push_str(char_slice(&utt.text, cursor, usize::MAX));
            (utt.speaker, tagged)
        })
        .collect();
    let mut step2: Vec<TriggerLine> = canon
        .triggers
        .iter()
        .map(|t| TriggerLine {
            entity_id: t.entity_id,
            trigger_type: t.trigger_type.clone(),
            ecr_chain_id: t.ecr_chain_id,
        })
        .collect();
    step2.sort_by_key(|t| t.entity_id);
    let mut step3: Vec<TripletLine> = canon
        .arguments
        .iter()
        .map(|a| TripletLine {
            argument_id: a.entity_id,
            argument_type: a.argument_type.clone(),
            trigger_id: a.trigger_entity_id,
        })
        .collect();
    step3.sort_by_key(|a| a.argument_id);
    TaggedTranscript { step1, step2, step3 }
}

/// Renders the three-step transcript that [`parse_transcript`] accepts.
pub fn render_transcript(annotated: &AnnotatedSession) -> String {
    transcript_of(annotated).render()
}

/// Speaker-prefixed lines, the plain dialogue format used in prompts.
pub fn render_plain(session: &DialogueSession) -> String {
    let mut out = String::new();
    for u in &session.utterances {
        out.push_str(u.speaker.marker());
        out.push_str(": ");
        out.push_str(&u.text);
        out.push('\n');
    }
    out
}
