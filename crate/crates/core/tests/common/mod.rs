//! Seeded random sessions for property and acceptance tests.
#![allow(dead_code)]

use framemix_core::corpus::{ArgumentEntity, TriggerEntity};
use framemix_core::{AnnotatedSession, DialogueSession, Source, Span, Speaker, Taxonomy, Utterance};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

const ALPHABET: &[char] = &[
    '餃', '子', 'を', '並', 'べ', 'る', '焼', 'く', '鍋', 'に', '油', 'は', 'い', 'え', '、', '。', '分', '火', '（',
    '）', ' ', 'a', 'b', '1', ':', '(', ')', 'E', 'ｶ', 'é',
];

pub fn random_text<R: Rng>(rng: &mut R, len: usize) -> String {
    let mut chars: Vec<char> = (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect();
    for i in [0, len - 1] {
        if chars[i] == ' ' {
            chars[i] = 'を';
        }
    }
    chars.into_iter().collect()
}

pub fn random_dialogue_session<R: Rng>(rng: &mut R, id: &str) -> DialogueSession {
    let n = rng.random_range(1..=6);
    DialogueSession {
        id: id.to_string(),
        parent_dialogue_id: id.to_string(),
        index_in_dialogue: 0,
        utterances: (0..n)
            .map(|_| {
                let speaker = if rng.random_bool(0.5) { Speaker::Expert } else { Speaker::Interviewer };
                let len = rng.random_range(1..=30);
                Utterance::new(speaker, random_text(rng, len))
            })
            .collect(),
        source: Source::Human,
    }
}

/// A valid session: non-overlapping spans, every argument linked to a
/// trigger, scattered entity ids, some ECR chains.
pub fn random_session<R: Rng>(rng: &mut R, id: &str) -> AnnotatedSession {
    let session = random_dialogue_session(rng, id);
    let mut spans = Vec::new();
    for (u, utt) in session.utterances.iter().enumerate() {
        let len = utt.char_len();
        let mut cursor = rng.random_range(0..=2);
        while cursor < len {
            if rng.random_bool(0.35) {
                let width = rng.random_range(1..=4).min(len - cursor);
                spans.push(Span::new(u, cursor, cursor + width));
                cursor += width;
            }
            cursor += rng.random_range(1..=4);
        }
    }
    spans.shuffle(rng);
    let mut ids: Vec<u32> = (1..=200).collect();
    ids.shuffle(rng);

    let tax = Taxonomy::default();
    let trigger_types: Vec<&String> = tax.trigger_types.iter().collect();
    let argument_types: Vec<&String> = tax.argument_types.iter().collect();
    let mut triggers: Vec<TriggerEntity> = Vec::new();
    let mut arguments: Vec<ArgumentEntity> = Vec::new();
    let mut pending_args = Vec::new();
    for (k, span) in spans.into_iter().enumerate() {
        if k == 0 || rng.random_bool(0.4) {
            triggers.push(TriggerEntity {
                entity_id: ids[k],
                span,
                trigger_type: trigger_types.choose(rng).unwrap().to_string(),
                ecr_chain_id: rng.random_bool(0.3).then(|| rng.random_range(0..3)),
            });
        } else {
            pending_args.push((ids[k], span));
        }
    }
    for (id, span) in pending_args {
        let head = triggers.choose(rng).unwrap().entity_id;
        arguments.push(ArgumentEntity {
            entity_id: id,
            span,
            argument_type: argument_types.choose(rng).unwrap().to_string(),
            trigger_entity_id: head,
        });
    }
    let label_source = if rng.random_bool(0.5) { Source::Human } else { Source::Pseudo };
    let a = AnnotatedSession {
        session,
        triggers,
        arguments,
        label_source,
    };
    a.validate(Some(&tax)).expect("generator yields valid sessions");
    a
}

/// Entities in span order with ids kept.
pub fn span_sorted(mut a: AnnotatedSession) -> AnnotatedSession {
    a.triggers.sort_by_key(|t| t.span);
    a.arguments.sort_by_key(|x| x.span);
    a
}

pub fn without_ecr(mut a: AnnotatedSession) -> AnnotatedSession {
    for t in &mut a.triggers {
        t.ecr_chain_id = None;
    }
    a
}
