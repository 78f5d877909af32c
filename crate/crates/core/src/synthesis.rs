//! Pseudo-dialogue generation (self-instruct loop) and pseudo-labeling
//! with the three-step tagging scheme.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::annoparse::{parse_transcript, render_plain, render_transcript, AnnoParseError};
use crate::budget::RngAlgorithm;
use crate::corpus::{
    parse_corpus, serialize_session, AnnotatedSession, Dialogue, DialogueSession, Source, Speaker,
    Taxonomy, Utterance,
};
use crate::llm::{complete_all, ChatClient, ChatMessage, ChatRequest, ChatResponse, LlmError};
use crate::similarity::{rouge_l_tokens, top_k_similar};
use crate::tokenize::Tokenizer;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} few-shot dialogues, got {found}")]
    FewshotCountMismatch { expected: usize, found: usize },
    #[error("pool has {available} sessions but {needed} are required")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("gave up after {attempts} attempts with {accepted} dialogues accepted")]
    AttemptCapExceeded { attempts: usize, accepted: usize },
    #[error("unparseable dialogue reply at line {line}: {detail}")]
    MalformedDialogueReply { line: usize, detail: String },
    #[error("anchor session '{0}' is not in the exemplar pool")]
    AnchorMissing(String),
    #[error("no definition text for type '{0}'")]
    MissingTypeDefinition(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthesisError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub n_fewshot_human: usize,
    pub n_fewshot_pseudo: usize,
    /// Candidates whose best ROUGE-L against existing dialogues reaches
    /// this value are rejected.
    pub accept_threshold: f64,
    pub temperature: f64,
    pub seed: u64,
    /// Defaults to four times the number of dialogues requested.
    pub max_attempts: Option<usize>,
    pub model_id: String,
    pub max_output_tokens: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_fewshot_human: 6,
            n_fewshot_pseudo: 2,
            accept_threshold: 0.7,
            temperature: 0.7,
            seed: 0,
            max_attempts: None,
            model_id: "gpt-4-0613".into(),
            max_output_tokens: 2048,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fewshot_human + self.n_fewshot_pseudo == 0 {
            return Err(SynthesisError::InvalidConfig("at least one few-shot dialogue is required".into()));
        }
        if !(self.accept_threshold > 0.0 && self.accept_threshold <= 1.0) {
            return Err(SynthesisError::InvalidConfig(format!(
                "accept_threshold {} outside (0, 1]",
                self.accept_threshold
            )));
        }
        Ok(())
    }

    pub fn n_fewshot(&self) -> usize {
        self.n_fewshot_human + self.n_fewshot_pseudo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    /// Most similar exemplars per prompt, not counting the anchor.
    pub n_similar_fewshots: usize,
    /// A richly annotated exemplar that closes every demonstration list.
    pub anchor_session_id: String,
    pub min_exemplar_entities: usize,
    pub temperature: f64,
    pub model_id: String,
    pub max_output_tokens: u32,
    pub retry_on_parse_failure: bool,
    pub max_in_flight: usize,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            n_similar_fewshots: 2,
            anchor_session_id: String::new(),
            min_exemplar_entities: 5,
            temperature: 0.0,
            model_id: "gpt-4-0613".into(),
            max_output_tokens: 4096,
            retry_on_parse_failure: true,
            max_in_flight: 4,
        }
    }
}

/// Instruction text for every trigger and argument type.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeDefinitions {
    #[serde(default)]
    pub triggers: BTreeMap<String, String>,
    #[serde(default)]
    pub arguments: BTreeMap<String, String>,
}

impl TypeDefinitions {
    pub fn taxonomy(&self) -> std::result::Result<Taxonomy, crate::corpus::CorpusError> {
        Taxonomy::new(self.triggers.keys().cloned(), self.arguments.keys().cloned())
    }

    fn check_covers(&self, taxonomy: &Taxonomy) -> Result<()> {
        for (types, defs) in [
            (&taxonomy.trigger_types, &self.triggers),
            (&taxonomy.argument_types, &self.arguments),
        ] {
            for ty in types {
                if defs.get(ty).is_none_or(|d| d.trim().is_empty()) {
                    return Err(SynthesisError::MissingTypeDefinition(ty.clone()));
                }
            }
        }
        Ok(())
    }
}

const DIALOGUE_SYSTEM_PROMPT: &str = "You write technical interview dialogues about cooking. An \
expert (E) explains how to cook a dish and an interviewer (I) asks questions that draw out the \
details of the process. Every line of a dialogue starts with the speaker marker \"E:\" or \"I:\" followed by one utterance.";

/// Prompt asking for one new dialogue in the style of `fewshots`.
pub fn build_dialogue_prompt(fewshots: &[&DialogueSession], config: &GenerationConfig) -> Result<ChatRequest> {
    if fewshots.len() != config.n_fewshot() {
        return Err(SynthesisError::FewshotCountMismatch {
            expected: config.n_fewshot(),
            found: fewshots.len(),
        });
    }
    let total: usize = fewshots.iter().map(|s| s.utterances.len()).sum();
    let avg = (total as f64 / fewshots.len() as f64).round() as usize;

    let mut user = format!("Here are {} example dialogues.\n", fewshots.len());
    for (k, s) in fewshots.iter().enumerate() {
        user.push_str(&format!("\nDialogue {}:\n", k + 1));
        user.push_str(&render_plain(s));
    }
    user.push_str(&format!(
        "\nWrite one new dialogue in the same format, about {avg} utterances long, on a cooking \
topic different from all of the examples. Output only the dialogue lines.\n"
    ));
    Ok(ChatRequest {
        system_prompt: DIALOGUE_SYSTEM_PROMPT.into(),
        messages: vec![ChatMessage::user(user)],
        temperature: config.temperature,
        model_id: config.model_id.clone(),
        max_output_tokens: config.max_output_tokens,
    })
}

/// Reads `E: text` / `I: text` lines. Blank lines are skipped; anything
/// else rejects the reply.
pub fn parse_dialogue_reply(reply: &str) -> Result<Vec<Utterance>> {
    let mut utterances = Vec::new();
    for (i, line) in reply.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut chars = line.chars();
        let speaker = chars.next().map(String::from).and_then(|m| Speaker::from_marker(&m));
        let rest = chars.as_str();
        let text = rest.strip_prefix(':').or_else(|| rest.strip_prefix('：'));
        match (speaker, text) {
            (Some(speaker), Some(text)) if !text.trim().is_empty() => {
                utterances.push(Utterance::new(speaker, text.trim()));
            }
            _ => {
                return Err(SynthesisError::MalformedDialogueReply {
                    line: i + 1,
                    detail: format!("expected 'E: …' or 'I: …', got {line:?}"),
                })
            }
        }
    }
    if utterances.is_empty() {
        return Err(SynthesisError::MalformedDialogueReply {
            line: 0,
            detail: "reply contains no utterances".into(),
        });
    }
    Ok(utterances)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Accepted { dialogue_id: String, max_similarity: f64 },
    Rejected { max_similarity: f64 },
    Malformed { detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationAttempt {
    pub attempt: usize,
    pub fewshot_ids: Vec<String>,
    pub outcome: AttemptOutcome,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GenerationReport {
    pub accepted: Vec<Dialogue>,
    pub attempts: Vec<GenerationAttempt>,
    /// Every response, rejected ones included, for cost accounting.
    pub responses: Vec<ChatResponse>,
}

fn owned_surfaces(tokenizer: &dyn Tokenizer, text: &str) -> Vec<String> {
    tokenizer.surfaces(text).into_iter().map(String::from).collect()
}

/// Self-instruct loop. Each accepted dialogue is appended to
/// `pseudo_pool` at once and becomes eligible as a few-shot for later
/// attempts. Until the pseudo pool can fill its slots, all few-shots come
/// from the human pool.
///
/// When the attempt cap is hit, the dialogues accepted so far remain in
/// `pseudo_pool`.
pub fn generate_pseudo_dialogues<C: ChatClient + ?Sized>(
    human_pool: &[DialogueSession],
    pseudo_pool: &mut Vec<DialogueSession>,
    client: &C,
    config: &GenerationConfig,
    n_target: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<GenerationReport> {
    config.validate()?;
    if n_target == 0 {
        return Err(SynthesisError::InvalidConfig("n_target must be at least 1".into()));
    }
    if human_pool.len() < config.n_fewshot_human {
        return Err(SynthesisError::PoolTooSmall {
            needed: config.n_fewshot_human,
            available: human_pool.len(),
        });
    }
    let max_attempts = config.max_attempts.unwrap_or(4 * n_target);
    let mut rng = RngAlgorithm::ChaCha8.seeded(config.seed);

    let mut existing: Vec<Vec<String>> = human_pool
        .iter()
        .chain(pseudo_pool.iter())
        .map(|s| owned_surfaces(tokenizer, &s.text()))
        .collect();
    let mut ids: HashSet<String> = human_pool.iter().chain(pseudo_pool.iter()).map(|s| s.id.clone()).collect();
    let mut report = GenerationReport::default();

    for attempt in 0..max_attempts {
        if report.accepted.len() == n_target {
            break;
        }
        let bootstrap = pseudo_pool.len() < config.n_fewshot_pseudo;
        let n_human = if bootstrap { config.n_fewshot() } else { config.n_fewshot_human };
        if human_pool.len() < n_human {
            return Err(SynthesisError::PoolTooSmall {
                needed: n_human,
                available: human_pool.len(),
            });
        }
        let mut fewshots: Vec<&DialogueSession> = index::sample(&mut rng, human_pool.len(), n_human)
            .into_iter()
            .map(|i| &human_pool[i])
            .collect();
        if !bootstrap {
            fewshots.extend(
                index::sample(&mut rng, pseudo_pool.len(), config.n_fewshot_pseudo)
                    .into_iter()
                    .map(|i| &pseudo_pool[i]),
            );
        }
        let fewshot_ids = fewshots.iter().map(|s| s.id.clone()).collect();
        let request = build_dialogue_prompt(&fewshots, config)?;
        let response = client.complete(&request)?;
        let reply = response.text.clone();
        report.responses.push(response);

        let outcome = match parse_dialogue_reply(&reply) {
            Err(e) => AttemptOutcome::Malformed { detail: e.to_string() },
            Ok(utterances) => {
                let mut dialogue_id = format!("pd-s{}-a{attempt:05}", config.seed);
                while ids.contains(&dialogue_id) || ids.contains(&format!("{dialogue_id}#0")) {
                    dialogue_id.push('x');
                }
                let dialogue = Dialogue {
                    id: dialogue_id.clone(),
                    source: Source::Pseudo,
                    utterances,
                };
                let session = DialogueSession::from_dialogue(&dialogue);
                let tokens = owned_surfaces(tokenizer, &session.text());
                let best = existing
                    .iter()
                    .map(|e| rouge_l_tokens(&tokens, e).value())
                    .fold(0.0, f64::max);
                if best < config.accept_threshold {
                    existing.push(tokens);
                    ids.insert(dialogue_id.clone());
                    ids.insert(session.id.clone());
                    pseudo_pool.push(session);
                    report.accepted.push(dialogue);
                    AttemptOutcome::Accepted {
                        dialogue_id,
                        max_similarity: best,
                    }
                } else {
                    AttemptOutcome::Rejected { max_similarity: best }
                }
            }
        };
        report.attempts.push(GenerationAttempt {
            attempt,
            fewshot_ids,
            outcome,
        });
    }
    if report.accepted.len() < n_target {
        return Err(SynthesisError::AttemptCapExceeded {
            attempts: report.attempts.len(),
            accepted: report.accepted.len(),
        });
    }
    Ok(report)
}

/// Sessions annotated with at least `min_entities` triggers and arguments.
pub fn build_exemplar_pool(sessions: &[AnnotatedSession], min_entities: usize) -> Vec<AnnotatedSession> {
    sessions
        .iter()
        .filter(|s| s.entity_count() >= min_entities)
        .cloned()
        .collect()
}

/// The `n_similar_fewshots` pool sessions closest to `target` by ROUGE-L,
/// most similar first, followed by the anchor. A pool session with the
/// target's own id is never chosen as a similar exemplar.
pub fn select_label_fewshots(
    target: &DialogueSession,
    pool: &[AnnotatedSession],
    config: &LabelingConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<AnnotatedSession>> {
    let anchor = pool
        .iter()
        .find(|s| s.id() == config.anchor_session_id)
        .ok_or_else(|| SynthesisError::AnchorMissing(config.anchor_session_id.clone()))?;
    let candidates: Vec<(&str, String)> = pool
        .iter()
        .filter(|s| s.id() != config.anchor_session_id && s.id() != target.id)
        .map(|s| (s.id(), s.session.text()))
        .collect();
    if candidates.len() < config.n_similar_fewshots {
        return Err(SynthesisError::PoolTooSmall {
            needed: config.n_similar_fewshots + 1,
            available: candidates.len() + 1,
        });
    }
    let top = top_k_similar(&target.text(), &candidates, config.n_similar_fewshots, tokenizer)
        .expect("k checked against the pool size");
    let mut out: Vec<AnnotatedSession> = top
        .iter()
        .map(|id| pool.iter().find(|s| s.id() == id).expect("id comes from the pool").clone())
        .collect();
    out.push(anchor.clone());
    Ok(out)
}

fn labeling_system_prompt(taxonomy: &Taxonomy, definitions: &TypeDefinitions) -> String {
    let mut p = String::from(
        "You annotate semantic frames in cooking interviews between an expert (E) and an interviewer (I).\n\
A trigger is the predicate span that evokes a cooking event. An argument is a span that gives a \
detail of an event and belongs to exactly one trigger.\n\nTrigger types:\n",
    );
    for ty in &taxonomy.trigger_types {
        p.push_str(&format!("- {ty}: {}\n", definitions.triggers[ty].trim()));
    }
    p.push_str("\nArgument types:\n");
    for ty in &taxonomy.argument_types {
        p.push_str(&format!("- {ty}: {}\n", definitions.arguments[ty].trim()));
    }
    p.push_str(
        "\nLabel the dialogue in three steps, each under its header.\n\
Step 1: Repeat every utterance on its own line with its speaker marker and wrap each trigger and \
argument in a numbered tag such as <E1>…</E1>. Do not change any other character.\n\
Step 2: List every trigger as \"Ek: TYPE\". Triggers that mention the same event end with the same \
\" ecr=N\".\n\
Step 3: List every argument as a triplet \"(Ek, TYPE, Ej)\" where Ej is the trigger it belongs to.\n",
    );
    p
}

/// System prompt with type definitions, one user/assistant pair per
/// few-shot, and the target as the final user message.
pub fn build_labeling_prompt(
    target: &DialogueSession,
    fewshots: &[AnnotatedSession],
    taxonomy: &Taxonomy,
    definitions: &TypeDefinitions,
    config: &LabelingConfig,
) -> Result<ChatRequest> {
    definitions.check_covers(taxonomy)?;
    let mut messages = Vec::with_capacity(2 * fewshots.len() + 1);
    for shot in fewshots {
        messages.push(ChatMessage::user(render_plain(&shot.session)));
        messages.push(ChatMessage::assistant(render_transcript(shot)));
    }
    messages.push(ChatMessage::user(render_plain(target)));
    Ok(ChatRequest {
        system_prompt: labeling_system_prompt(taxonomy, definitions),
        messages,
        temperature: config.temperature,
        model_id: config.model_id.clone(),
        max_output_tokens: config.max_output_tokens,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFailure {
    pub session_id: String,
    pub error: AnnoParseError,
    pub attempts: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelingReport {
    /// In input order; failed sessions are absent.
    pub labeled: Vec<AnnotatedSession>,
    pub failures: Vec<LabelFailure>,
    pub responses: Vec<ChatResponse>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    session_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    labeled: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<LabelFailure>,
    responses: Vec<ChatResponse>,
}

enum Done {
    Labeled(AnnotatedSession),
    Failed(LabelFailure),
}

fn load_checkpoint(path: &Path, taxonomy: &Taxonomy) -> Result<HashMap<String, (Done, Vec<ChatResponse>)>> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| SynthesisError::Checkpoint(format!("line {}: {m}", i + 1));
        let entry: CheckpointLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let result = match (entry.labeled, entry.failure) {
            (Some(v), None) => {
                let mut sessions = parse_corpus(v.to_string().as_bytes(), Some(taxonomy)).map_err(|e| bad(e.to_string()))?;
                Done::Labeled(sessions.pop().ok_or_else(|| bad("empty session".into()))?)
            }
            (None, Some(f)) => Done::Failed(f),
            _ => return Err(bad("exactly one of `labeled` and `failure` is required".into())),
        };
        done.insert(entry.session_id, (result, entry.responses));
    }
    Ok(done)
}

fn checkpoint_line(session_id: &str, result: &Done, responses: &[ChatResponse]) -> String {
    let (labeled, failure) = match result {
        Done::Labeled(s) => (Some(serde_json::from_str(&serialize_session(s)).expect("valid json")), None),
        Done::Failed(f) => (None, Some(f.clone())),
    };
    serde_json::to_string(&CheckpointLine {
        session_id: session_id.to_string(),
        labeled,
        failure,
        responses: responses.to_vec(),
    })
    .expect("checkpoint line serializes")
}

/// Everything `label_sessions` needs besides the sessions themselves.
pub struct Labeler<'a, C: ChatClient + ?Sized> {
    pub client: &'a C,
    pub pool: &'a [AnnotatedSession],
    pub config: &'a LabelingConfig,
    pub taxonomy: &'a Taxonomy,
    pub definitions: &'a TypeDefinitions,
    pub tokenizer: &'a dyn Tokenizer,
}

/// Pseudo-labels `sessions`. Unparseable replies are retried once (if
/// configured) and then recorded as failures. A client error stops the
/// batch; with a `checkpoint` file, finished sessions are kept there and
/// skipped on the next call.
pub fn label_sessions<C: ChatClient + ?Sized>(
    sessions: &[DialogueSession],
    labeler: &Labeler<'_, C>,
    checkpoint: Option<&Path>,
) -> Result<LabelingReport> {
    let Labeler {
        client,
        pool,
        config,
        taxonomy,
        definitions,
        tokenizer,
    } = *labeler;
    definitions.check_covers(taxonomy)?;
    let mut done = match checkpoint {
        Some(p) => load_checkpoint(p, taxonomy)?,
        None => HashMap::new(),
    };
    let mut sink = match checkpoint {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };

    let pending: Vec<&DialogueSession> = sessions.iter().filter(|s| !done.contains_key(&s.id)).collect();
    let mut requests = Vec::with_capacity(pending.len());
    for s in &pending {
        let shots = select_label_fewshots(s, pool, config, tokenizer)?;
        requests.push(build_labeling_prompt(s, &shots, taxonomy, definitions, config)?);
    }

    let chunk = config.max_in_flight.max(1);
    let mut abort = None;
    'outer: for (sessions_chunk, requests_chunk) in pending.chunks(chunk).zip(requests.chunks(chunk)) {
        let results = complete_all(client, requests_chunk, config.max_in_flight);
        for ((session, request), result) in sessions_chunk.iter().zip(requests_chunk).zip(results) {
            let mut responses = Vec::new();
            let mut attempts = 0u32;
            let mut next = result;
            let outcome = loop {
                let response = match next {
                    Ok(r) => r,
                    Err(e) => {
                        abort = Some(e);
                        break 'outer;
                    }
                };
                attempts += 1;
                let parsed = parse_transcript(&response.text, session, taxonomy, Source::Pseudo);
                responses.push(response);
                match parsed {
                    Ok(a) => break Done::Labeled(a),
                    Err(_) if attempts == 1 && config.retry_on_parse_failure => next = client.complete(request),
                    Err(error) => {
                        break Done::Failed(LabelFailure {
                            session_id: session.id.clone(),
                            error,
                            attempts,
                        })
                    }
                }
            };
            if let Some(f) = sink.as_mut() {
                writeln!(f, "{}", checkpoint_line(&session.id, &outcome, &responses))?;
                f.flush()?;
            }
            done.insert(session.id.clone(), (outcome, responses));
        }
    }
    if let Some(e) = abort {
        return Err(e.into());
    }

    let mut report = LabelingReport::default();
    for s in sessions {
        let Some((outcome, responses)) = done.remove(&s.id) else { continue };
        report.responses.extend(responses);
        match outcome {
            Done::Labeled(a) => report.labeled.push(a),
            Done::Failed(f) => report.failures.push(f),
        }
    }
    Ok(report)
}
