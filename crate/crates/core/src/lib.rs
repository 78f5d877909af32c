//! Training-data tooling for conversational semantic frame analysis.
//!
//! The crate covers the whole data path: splitting dialogues into
//! sessions, generating pseudo-dialogues and pseudo-labels with a chat
//! model, parsing the inline-tagged labeling output into frames,
//! planning budget-constrained mixtures of human and generated data, and
//! scoring predictions with span-overlap weighted F1.

pub mod annoparse;
pub mod budget;
pub mod corpus;
pub mod evaluation;
pub mod llm;
pub mod money;
pub mod similarity;
pub mod synthesis;
pub mod tokenize;

pub use corpus::{
    AnnotatedSession, ArgumentEntity, Dataset, Dialogue, DialogueSession, Source, Span, Speaker,
    Taxonomy, TriggerEntity, Utterance, Variant,
};
pub use money::Money;
