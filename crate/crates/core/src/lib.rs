//! Fully zero-shot text classification with a masked language model.
//!
//! Each class name is expanded into its `k` nearest tokens in the model's
//! embedding space ([`verbalizer`]). The model's logits at the prompt's mask
//! position are then aggregated over those label words with similarity-based
//! weights ([`aggregator`]). No labeled data or fine-tuning is involved: the
//! engine only consumes a vocabulary, an embedding table and mask-position
//! logits exported from the model ([`tensorio`], [`backend`]).

pub mod aggregator;
pub mod backend;
pub mod cli;
pub mod config;
pub mod eval;
pub mod fixture;
pub mod prompting;
pub mod tensorio;
pub mod verbalizer;
