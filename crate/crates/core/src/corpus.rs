//! Dialogue, session and frame types, session splitting, the JSON-lines
//! corpus format and descriptive statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenize::Tokenizer;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dialogue '{0}' has no utterances")]
    EmptyDialogue(String),
    #[error("session window must be at least 2, got {0}")]
    InvalidWindow(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("session '{session_id}': {invariant}")]
    InvariantViolation { session_id: String, invariant: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "E")]
    Expert,
    #[serde(rename = "I")]
    Interviewer,
}

impl Speaker {
    pub fn marker(self) -> &'static str {
        match self {
            Speaker::Expert => "E",
            Speaker::Interviewer => "I",
        }
    }

    pub fn from_marker(s: &str) -> Option<Self> {
        match s {
            "E" => Some(Speaker::Expert),
            "I" => Some(Speaker::Interviewer),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self {
            speaker,
            text: text.into(),
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.text.is_empty() {
            return Err("utterance text is empty".into());
        }
        if self.text.contains(['\n', '\r']) {
            return Err("utterance text contains a newline".into());
        }
        Ok(())
    }
}

/// Whether text or labels came from people or from a language model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Human,
    Pseudo,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub source: Source,
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueSession {
    pub id: String,
    pub parent_dialogue_id: String,
    pub index_in_dialogue: usize,
    pub utterances: Vec<Utterance>,
    pub source: Source,
}

impl DialogueSession {
    /// Utterance texts joined by newlines; the text used for similarity.
    pub fn text(&self) -> String {
        joined_text(&self.utterances)
    }

    /// Wraps a whole dialogue as its single session.
    pub fn from_dialogue(dialogue: &Dialogue) -> Self {
        Self {
            id: format!("{}#0", dialogue.id),
            parent_dialogue_id: dialogue.id.clone(),
            index_in_dialogue: 0,
            utterances: dialogue.utterances.clone(),
            source: dialogue.source,
        }
    }
}

pub fn joined_text(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for (i, u) in utterances.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&u.text);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub utterance_index: usize,
    pub start_char: usize,
    pub end_char: usize,
}

impl Span {
    pub fn new(utterance_index: usize, start_char: usize, end_char: usize) -> Self {
        Self {
            utterance_index,
            start_char,
            end_char,
        }
    }

    pub fn len(&self) -> usize {
        self.end_char.saturating_sub(self.start_char)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of characters shared with `other`; zero across utterances.
    pub fn overlap(&self, other: &Span) -> usize {
        if self.utterance_index != other.utterance_index {
            return 0;
        }
        let lo = self.start_char.max(other.start_char);
        let hi = self.end_char.min(other.end_char);
        hi.saturating_sub(lo)
    }

    /// Slices the span out of `text`, counting characters.
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        char_slice(text, self.start_char, self.end_char)
    }
}

pub(crate) fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b_start = indices.by_ref().nth(start).unwrap_or(text.len());
    let b_end = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        b_start
    };
    &text[b_start..b_end]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriggerEntity {
    pub entity_id: u32,
    pub span: Span,
    pub trigger_type: String,
    pub ecr_chain_id: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgumentEntity {
    pub entity_id: u32,
    pub span: Span,
    pub argument_type: String,
    pub trigger_entity_id: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedSession {
    pub session: DialogueSession,
    pub triggers: Vec<TriggerEntity>,
    pub arguments: Vec<ArgumentEntity>,
    pub label_source: Source,
}

impl AnnotatedSession {
    pub fn unlabeled(session: DialogueSession, label_source: Source) -> Self {
        Self {
            session,
            triggers: Vec::new(),
            arguments: Vec::new(),
            label_source,
        }
    }

    pub fn id(&self) -> &str {
        &self.session.id
    }

    pub fn entity_count(&self) -> usize {
        self.triggers.len() + self.arguments.len()
    }

    /// Checks every structural invariant, and type membership when a
    /// taxonomy is given.
    pub fn validate(&self, taxonomy: Option<&Taxonomy>) -> Result<()> {
        let fail = |invariant: String| CorpusError::InvariantViolation {
            session_id: self.session.id.clone(),
            invariant,
        };
        if self.session.utterances.is_empty() {
            return Err(fail("session has no utterances".into()));
        }
        for (i, u) in self.session.utterances.iter().enumerate() {
            u.check().map_err(|m| fail(format!("utterance {i}: {m}")))?;
        }
        let lengths: Vec<usize> = self.session.utterances.iter().map(Utterance::char_len).collect();

        let mut ids = HashSet::new();
        let mut spans: Vec<(Span, u32)> = Vec::new();
        let mut check_entity = |id: u32, span: &Span| -> Result<()> {
            if id == 0 {
                return Err(fail("entity ids must be positive".into()));
            }
            if !ids.insert(id) {
                return Err(fail(format!("duplicate entity id {id}")));
            }
            let Some(&len) = lengths.get(span.utterance_index) else {
                return Err(fail(format!(
                    "entity {id}: utterance index {} out of range",
                    span.utterance_index
                )));
            };
            if span.start_char >= span.end_char {
                return Err(fail(format!("entity {id}: start_char must be < end_char")));
            }
            if span.end_char > len {
                return Err(fail(format!(
                    "entity {id}: end_char {} exceeds utterance length {len}",
                    span.end_char
                )));
            }
            spans.push((*span, id));
            Ok(())
        };
        for t in &self.triggers {
            check_entity(t.entity_id, &t.span)?;
        }
        for a in &self.arguments {
            check_entity(a.entity_id, &a.span)?;
        }

        spans.sort();
        for pair in spans.windows(2) {
            let (a, ida) = pair[0];
            let (b, idb) = pair[1];
            if a.overlap(&b) > 0 {
                return Err(fail(format!("entity spans {ida} and {idb} overlap")));
            }
        }

        let trigger_ids: HashSet<u32> = self.triggers.iter().map(|t| t.entity_id).collect();
        for a in &self.arguments {
            if !trigger_ids.contains(&a.trigger_entity_id) {
                return Err(fail(format!(
                    "argument {} links to missing trigger {}",
                    a.entity_id, a.trigger_entity_id
                )));
            }
        }

        if let Some(tax) = taxonomy {
            for t in &self.triggers {
                if !tax.trigger_types.contains(&t.trigger_type) {
                    return Err(fail(format!("unknown trigger type '{}'", t.trigger_type)));
                }
            }
            for a in &self.arguments {
                if !tax.argument_types.contains(&a.argument_type) {
                    return Err(fail(format!("unknown argument type '{}'", a.argument_type)));
                }
            }
        }
        Ok(())
    }

    /// Sorts entities by span and renumbers ids from 1 in reading order,
    /// rewriting argument links accordingly.
    pub fn canonicalize(&self) -> AnnotatedSession {
        let mut order: Vec<(Span, u32)> = self
            .triggers
            .iter()
            .map(|t| (t.span, t.entity_id))
            .chain(self.arguments.iter().map(|a| (a.span, a.entity_id)))
            .collect();
        order.sort();
        let remap: HashMap<u32, u32> = order
            .iter()
            .enumerate()
            .map(|(i, &(_, id))| (id, i as u32 + 1))
            .collect();
        let new_id = |id: u32| remap.get(&id).copied().unwrap_or(id);

        let mut triggers: Vec<TriggerEntity> = self
            .triggers
            .iter()
            .map(|t| TriggerEntity {
                entity_id: new_id(t.entity_id),
                ..t.clone()
            })
            .collect();
        triggers.sort_by_key(|t| t.span);
        let mut arguments: Vec<ArgumentEntity> = self
            .arguments
            .iter()
            .map(|a| ArgumentEntity {
                entity_id: new_id(a.entity_id),
                trigger_entity_id: new_id(a.trigger_entity_id),
                ..a.clone()
            })
            .collect();
        arguments.sort_by_key(|a| a.span);
        AnnotatedSession {
            session: self.session.clone(),
            triggers,
            arguments,
            label_source: self.label_source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    HumanHuman,
    HumanPseudo,
    PseudoPseudo,
    /// Assembled mixtures; per-session provenance stays authoritative.
    Mixed,
}

impl Variant {
    /// The (text source, label source) pair a pure variant requires.
    pub fn provenance(self) -> Option<(Source, Source)> {
        match self {
            Variant::HumanHuman => Some((Source::Human, Source::Human)),
            Variant::HumanPseudo => Some((Source::Human, Source::Pseudo)),
            Variant::PseudoPseudo => Some((Source::Pseudo, Source::Pseudo)),
            Variant::Mixed => None,
        }
    }

    pub fn of(source: Source, label_source: Source) -> Option<Variant> {
        match (source, label_source) {
            (Source::Human, Source::Human) => Some(Variant::HumanHuman),
            (Source::Human, Source::Pseudo) => Some(Variant::HumanPseudo),
            (Source::Pseudo, Source::Pseudo) => Some(Variant::PseudoPseudo),
            (Source::Pseudo, Source::Human) => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::HumanHuman => "HH",
            Variant::HumanPseudo => "HP",
            Variant::PseudoPseudo => "PP",
            Variant::Mixed => "MIX",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "hh" | "humanhuman" => Ok(Variant::HumanHuman),
            "hp" | "humanpseudo" => Ok(Variant::HumanPseudo),
            "pp" | "pseudopseudo" => Ok(Variant::PseudoPseudo),
            "mix" | "mixed" => Ok(Variant::Mixed),
            _ => Err(format!("unknown data variant '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub variant: Variant,
    pub sessions: Vec<AnnotatedSession>,
}

impl Dataset {
    /// Builds a dataset after checking each member against the variant.
    pub fn new(variant: Variant, sessions: Vec<AnnotatedSession>) -> Result<Self> {
        let ds = Self { variant, sessions };
        ds.check_variant()?;
        Ok(ds)
    }

    /// Infers the variant from the members; `Mixed` when they disagree.
    pub fn inferred(sessions: Vec<AnnotatedSession>) -> Result<Self> {
        let mut variants = BTreeSet::new();
        for s in &sessions {
            let v = Variant::of(s.session.source, s.label_source).ok_or_else(|| {
                CorpusError::InvariantViolation {
                    session_id: s.id().to_string(),
                    invariant: "pseudo text with human labels is not a supported variant".into(),
                }
            })?;
            variants.insert(v.short_name());
        }
        let variant = match variants.len() {
            0 | 2.. => Variant::Mixed,
            _ => sessions
                .first()
                .and_then(|s| Variant::of(s.session.source, s.label_source))
                .unwrap_or(Variant::Mixed),
        };
        Dataset::new(variant, sessions)
    }

    pub fn check_variant(&self) -> Result<()> {
        for s in &self.sessions {
            let pair = (s.session.source, s.label_source);
            let ok = match self.variant.provenance() {
                Some(expected) => pair == expected,
                None => Variant::of(pair.0, pair.1).is_some(),
            };
            if !ok {
                return Err(CorpusError::InvariantViolation {
                    session_id: s.id().to_string(),
                    invariant: format!(
                        "provenance ({:?}, {:?}) inconsistent with variant {:?}",
                        pair.0, pair.1, self.variant
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

/// The set of trigger (frame) types and argument types.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Taxonomy {
    pub trigger_types: BTreeSet<String>,
    pub argument_types: BTreeSet<String>,
}

impl Taxonomy {
    pub fn new<T, A>(triggers: T, arguments: A) -> Result<Self>
    where
        T: IntoIterator,
        T::Item: Into<String>,
        A: IntoIterator,
        A::Item: Into<String>,
    {
        let trigger_types: BTreeSet<String> = triggers.into_iter().map(Into::into).collect();
        let argument_types: BTreeSet<String> = arguments.into_iter().map(Into::into).collect();
        if trigger_types.is_empty() || argument_types.is_empty() {
            return Err(CorpusError::InvalidTaxonomy(
                "trigger and argument type sets must be non-empty".into(),
            ));
        }
        if let Some(shared) = trigger_types.intersection(&argument_types).next() {
            return Err(CorpusError::InvalidTaxonomy(format!(
                "type '{shared}' is both a trigger and an argument type"
            )));
        }
        Ok(Self {
            trigger_types,
            argument_types,
        })
    }

    pub fn is_trigger(&self, ty: &str) -> bool {
        self.trigger_types.contains(ty)
    }

    pub fn is_argument(&self, ty: &str) -> bool {
        self.argument_types.contains(ty)
    }
}

impl Default for Taxonomy {
    /// The cooking-domain types named in the annotation guidelines' prose.
    fn default() -> Self {
        Taxonomy::new(
            ["PLACE", "BAKE_FRY", "SIMMER", "MIX"],
            ["Object", "Time", "Temperature", "Manner", "Instrument"],
        )
        .expect("default taxonomy is valid")
    }
}

// ---------------------------------------------------------------------------
// Session splitting

/// Cuts a dialogue into consecutive sessions of at most `window`
/// utterances. A trailing remainder shorter than `ceil(window / 3)` is
/// folded into the previous session, which may then exceed the window.
pub fn split_dialogue(dialogue: &Dialogue, window: usize) -> Result<Vec<DialogueSession>> {
    if window < 2 {
        return Err(CorpusError::InvalidWindow(window));
    }
    if dialogue.utterances.is_empty() {
        return Err(CorpusError::EmptyDialogue(dialogue.id.clone()));
    }
    let mut chunks: Vec<&[Utterance]> = dialogue.utterances.chunks(window).collect();
    let min_tail = window.div_ceil(3);
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < min_tail) {
        let tail = chunks.pop().unwrap().len();
        let start = (chunks.len() - 1) * window;
        let merged = &dialogue.utterances[start..start + window + tail];
        *chunks.last_mut().unwrap() = merged;
    }
    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(index, utts)| DialogueSession {
            id: format!("{}#{index}", dialogue.id),
            parent_dialogue_id: dialogue.id.clone(),
            index_in_dialogue: index,
            utterances: utts.to_vec(),
            source: dialogue.source,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// JSON-lines format

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceLine {
    speaker: Speaker,
    text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TriggerLine {
    eid: u32,
    u: usize,
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    ty: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ecr: Option<i64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArgumentLine {
    eid: u32,
    u: usize,
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    ty: String,
    trigger_eid: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionLine {
    id: String,
    parent_dialogue_id: String,
    index_in_dialogue: usize,
    source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_source: Option<Source>,
    utterances: Vec<UtteranceLine>,
    #[serde(default)]
    triggers: Vec<TriggerLine>,
    #[serde(default)]
    arguments: Vec<ArgumentLine>,
}

impl SessionLine {
    fn from_annotated(a: &AnnotatedSession) -> Self {
        let mut line = Self::from_session(&a.session);
        line.label_source = Some(a.label_source);
        line.triggers = a
            .triggers
            .iter()
            .map(|t| TriggerLine {
                eid: t.entity_id,
                u: t.span.utterance_index,
                start: t.span.start_char,
                end: t.span.end_char,
                ty: t.trigger_type.clone(),
                ecr: t.ecr_chain_id,
            })
            .collect();
        line.arguments = a
            .arguments
            .iter()
            .map(|x| ArgumentLine {
                eid: x.entity_id,
                u: x.span.utterance_index,
                start: x.span.start_char,
                end: x.span.end_char,
                ty: x.argument_type.clone(),
                trigger_eid: x.trigger_entity_id,
            })
            .collect();
        line
    }

    fn from_session(s: &DialogueSession) -> Self {
        Self {
            id: s.id.clone(),
            parent_dialogue_id: s.parent_dialogue_id.clone(),
            index_in_dialogue: s.index_in_dialogue,
            source: s.source,
            label_source: None,
            utterances: s
                .utterances
                .iter()
                .map(|u| UtteranceLine {
                    speaker: u.speaker,
                    text: u.text.clone(),
                })
                .collect(),
            triggers: Vec::new(),
            arguments: Vec::new(),
        }
    }

    fn into_session(self) -> (DialogueSession, Option<Source>, Vec<TriggerLine>, Vec<ArgumentLine>) {
        let session = DialogueSession {
            id: self.id,
            parent_dialogue_id: self.parent_dialogue_id,
            index_in_dialogue: self.index_in_dialogue,
            utterances: self
                .utterances
                .into_iter()
                .map(|u| Utterance::new(u.speaker, u.text))
                .collect(),
            source: self.source,
        };
        (session, self.label_source, self.triggers, self.arguments)
    }
}

fn lines_of<R: Read>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
}

/// Parses a corpus from any reader. Blank lines are skipped; every
/// session is validated before it is returned.
pub fn parse_corpus<R: Read>(reader: R, taxonomy: Option<&Taxonomy>) -> Result<Vec<AnnotatedSession>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in lines_of(reader) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SessionLine = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let (session, label_source, triggers, arguments) = parsed.into_session();
        let label_source = label_source.ok_or_else(|| CorpusError::Parse {
            line: line_no,
            message: "missing field `label_source`".into(),
        })?;
        let annotated = AnnotatedSession {
            triggers: triggers
                .into_iter()
                .map(|t| TriggerEntity {
                    entity_id: t.eid,
                    span: Span::new(t.u, t.start, t.end),
                    trigger_type: t.ty,
                    ecr_chain_id: t.ecr,
                })
                .collect(),
            arguments: arguments
                .into_iter()
                .map(|a| ArgumentEntity {
                    entity_id: a.eid,
                    span: Span::new(a.u, a.start, a.end),
                    argument_type: a.ty,
                    trigger_entity_id: a.trigger_eid,
                })
                .collect(),
            session,
            label_source,
        };
        annotated.validate(taxonomy)?;
        if !seen.insert(annotated.session.id.clone()) {
            return Err(CorpusError::InvariantViolation {
                session_id: annotated.session.id.clone(),
                invariant: "duplicate session id in corpus".into(),
            });
        }
        out.push(annotated);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path, taxonomy: Option<&Taxonomy>) -> Result<Vec<AnnotatedSession>> {
    parse_corpus(File::open(path)?, taxonomy)
}

pub fn serialize_session(session: &AnnotatedSession) -> String {
    serde_json::to_string(&SessionLine::from_annotated(session)).expect("session serializes")
}

pub fn write_corpus_to<W: Write>(sessions: &[AnnotatedSession], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for s in sessions {
        writeln!(w, "{}", serialize_session(s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_corpus(sessions: &[AnnotatedSession], path: &Path) -> Result<()> {
    write_corpus_to(sessions, File::create(path)?)
}

/// Reads unlabeled sessions; label fields, when present, are ignored.
pub fn read_sessions(path: &Path) -> Result<Vec<DialogueSession>> {
    let mut out = Vec::new();
    for (line_no, line) in lines_of(File::open(path)?) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SessionLine = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let (session, ..) = parsed.into_session();
        AnnotatedSession::unlabeled(session.clone(), Source::Human).validate(None)?;
        out.push(session);
    }
    Ok(out)
}

pub fn write_sessions(sessions: &[DialogueSession], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in sessions {
        let line = serde_json::to_string(&SessionLine::from_session(s)).expect("session serializes");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads whole dialogues: `{"id", "source", "utterances": [{"speaker", "text"}]}`.
pub fn read_dialogues(path: &Path) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (line_no, line) in lines_of(File::open(path)?) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        for (i, u) in d.utterances.iter().enumerate() {
            u.check().map_err(|m| CorpusError::InvariantViolation {
                session_id: d.id.clone(),
                invariant: format!("utterance {i}: {m}"),
            })?;
        }
        out.push(d);
    }
    Ok(out)
}

pub fn write_dialogues(dialogues: &[Dialogue], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in dialogues {
        writeln!(w, "{}", serde_json::to_string(d).expect("dialogue serializes"))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LengthStats {
    pub sessions: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    /// (bucket lower bound, count), contiguous from the shortest bucket
    /// to the longest.
    pub histogram: Vec<(usize, usize)>,
}

pub fn session_token_count(session: &DialogueSession, tokenizer: &dyn Tokenizer) -> usize {
    session.utterances.iter().map(|u| tokenizer.count(&u.text)).sum()
}

pub fn length_stats(
    sessions: &[DialogueSession],
    tokenizer: &dyn Tokenizer,
    bucket_width: usize,
) -> Result<LengthStats> {
    if sessions.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let width = bucket_width.max(1);
    let counts: Vec<usize> = sessions.iter().map(|s| session_token_count(s, tokenizer)).collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;

    let mut buckets: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in &counts {
        *buckets.entry(c / width).or_default() += 1;
    }
    let lo = *buckets.keys().next().unwrap();
    let hi = *buckets.keys().next_back().unwrap();
    let histogram = (lo..=hi)
        .map(|b| (b * width, buckets.get(&b).copied().unwrap_or(0)))
        .collect();
    Ok(LengthStats {
        sessions: counts.len(),
        mean,
        stddev: var.sqrt(),
        histogram,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LabelCount {
    pub count: usize,
    pub per_session_density: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LabelDistribution {
    pub triggers: BTreeMap<String, LabelCount>,
    pub arguments: BTreeMap<String, LabelCount>,
}

impl LabelDistribution {
    pub fn get(&self, ty: &str) -> Option<&LabelCount> {
        self.triggers.get(ty).or_else(|| self.arguments.get(ty))
    }

    pub fn total(&self) -> usize {
        self.triggers.values().chain(self.arguments.values()).map(|c| c.count).sum()
    }
}

/// Counts observed trigger and argument types; unseen types are absent.
pub fn label_distribution(sessions: &[AnnotatedSession]) -> Result<LabelDistribution> {
    if sessions.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let mut triggers: BTreeMap<String, usize> = BTreeMap::new();
    let mut arguments: BTreeMap<String, usize> = BTreeMap::new();
    for s in sessions {
        for t in &s.triggers {
            *triggers.entry(t.trigger_type.clone()).or_default() += 1;
        }
        for a in &s.arguments {
            *arguments.entry(a.argument_type.clone()).or_default() += 1;
        }
    }
    let n = sessions.len() as f64;
    let finish = |m: BTreeMap<String, usize>| {
        m.into_iter()
            .map(|(k, count)| {
                (
                    k,
                    LabelCount {
                        count,
                        per_session_density: count as f64 / n,
                    },
                )
            })
            .collect()
    };
    Ok(LabelDistribution {
        triggers: finish(triggers),
        arguments: finish(arguments),
    })
}
