//! Diagnosis and mitigation of name-regularity bias in named-entity
//! recognition.
//!
//! - [`corpus`]: CoNLL ingestion, IOB2 labels, mentions.
//! - [`lm`]: Kneser-Ney n-gram model used as a context-only entity typer.
//! - [`tagger`]: windowed feed-forward tagger with a true and a noisy head.
//! - [`robust`]: adversarial noisy labels and entity masking.
//! - [`benchgen`]: diagnostic set selection and bias-probing transforms.
//! - [`evalkit`]: mention/boundary scoring and paired t-tests.

pub mod corpus;
pub mod error;
pub mod lm;

pub use error::{Error, Result};
pub mod benchgen;
pub mod evalkit;
pub mod robust;
pub mod tagger;
