//! Concept-level supervision for tiny autoregressive language models.
//!
//! A training target is a set of interchangeable completions (synonyms or
//! hypernyms of a noun, taken from a lexicon or a concept service) instead
//! of one next token. The crate covers the whole loop: concept extraction
//! ([`lexicon`], [`concept_client`], [`dataset`]), tokenization
//! ([`tokenizer`]), a small pre-norm transformer with hand-written
//! gradients ([`model`]), concept and next-token objectives
//! ([`training`]), and perplexity, transfer and top-k reports
//! ([`evaluation`]). [`pipeline`] chains them over on-disk datasets and is
//! what the `ncp` binary drives.
//!
//! Runnable walkthroughs live in `examples/`: `lexicon`,
//! `concept_extraction`, `datasets`, `tokenizer`, `train`, `evaluate`,
//! `gradcheck`, `pipeline`, `toy_experiments` and `demo_data`.

pub mod concept_client;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod grammar;
pub mod lexicon;
pub mod model;
pub mod pipeline;
pub mod text;
pub mod tokenizer;
pub mod training;
