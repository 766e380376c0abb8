//! Seeded toy experiments on the concept grammar comparing NCP-trained
//! models with matched NTP baselines.

use serde::{Deserialize, Serialize};

use crate::dataset::{ConceptRecord, LexiconDetector, Source, augment, build_records, inflate};
use crate::error::Result;
use crate::evaluation::{Metric, concept_entropy, inspect_topk_words, perplexity};
use crate::grammar::{self, DOMAINS, Surface};
use crate::lexicon::{Level, normalize_word};
use crate::model::{ModelConfig, ModelState};
use crate::text::{join_tokens, split_sentence};
use crate::tokenizer::{CompletionMap, Scheme, Tokenizer};
use crate::training::{Encoder, LossKind, Optimizer, TrainConfig, train_records};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Sentences per grammar domain.
    pub train_sentences: usize,
    pub test_sentences: usize,
    /// Primary-member probability for the flattening corpus.
    pub skew: f64,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_sentences: 120,
            test_sentences: 40,
            skew: 0.6,
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            context_len: 16,
            train: TrainConfig {
                learning_rate: 0.01,
                batch_size: 16,
                epochs: 12,
                seed: 0,
                optimizer: Optimizer::adam(),
                grad_clip: Some(1.0),
            },
        }
    }
}

struct Setup {
    tok: Tokenizer,
    cmap: CompletionMap,
    train: Vec<ConceptRecord>,
    test: Vec<ConceptRecord>,
}

fn records(n: usize, surface: Surface, seed: u64) -> Result<Vec<ConceptRecord>> {
    let lex = grammar::lexicon();
    let mut sentences = Vec::new();
    for (i, d) in DOMAINS.iter().enumerate() {
        for s in grammar::generate(d, n, surface, seed.wrapping_mul(31).wrapping_add(i as u64))? {
            sentences.push(split_sentence(&s));
        }
    }
    build_records(&sentences, &LexiconDetector::new(&lex), Level::Synonym, Source::ContextFree, &lex, None)
}

fn setup(cfg: &ExperimentConfig, seed: u64, train: Surface, test: Surface) -> Result<Setup> {
    let train = records(cfg.train_sentences, train, seed)?;
    let test = records(cfg.test_sentences, test, seed ^ 0x5eed_0000)?;
    let mut lines: Vec<String> = train.iter().map(ConceptRecord::spaced_words).collect();
    lines.extend(train.iter().chain(&test).flat_map(|r| r.completions.iter().cloned()));
    let tok = Tokenizer::train(lines.iter().map(String::as_str), 10_000, Scheme::Word)?;
    let cmap = CompletionMap::build(&tok, train.iter().chain(&test));
    Ok(Setup { tok, cmap, train, test })
}

fn init(cfg: &ExperimentConfig, vocab: usize, seed: u64) -> Result<ModelState> {
    ModelState::init(ModelConfig {
        vocab_size: vocab,
        context_len: cfg.context_len,
        d_model: cfg.d_model,
        n_layers: cfg.n_layers,
        n_heads: cfg.n_heads,
        d_ff: cfg.d_ff,
        seed,
    })
}

fn seeded(tc: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..tc.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatteningOutcome {
    pub seed: u64,
    /// Mean entropy (nats) over the concept set at test target positions.
    pub ncp_entropy: f64,
    pub ntp_entropy: f64,
    /// Concept-set members found in the top-|set| word predictions, summed.
    pub ncp_topk_hits: usize,
    pub ntp_topk_hits: usize,
}

impl FlatteningOutcome {
    pub fn flatter(&self) -> bool {
        self.ncp_entropy >= self.ntp_entropy
    }
}

/// Trains an NCP-augmentation model and the volume-matched NTP baseline
/// on a skewed corpus, then compares how evenly each spreads probability
/// over the known concept set.
pub fn flattening(cfg: &ExperimentConfig, seed: u64) -> Result<FlatteningOutcome> {
    let s = setup(cfg, seed, Surface::Skewed(cfg.skew), Surface::Skewed(cfg.skew))?;
    let enc = Encoder::new(&s.tok, &s.cmap);
    let base = init(cfg, s.tok.vocab_size(), seed)?;
    let tc = seeded(&cfg.train, seed);
    let aug = augment(&s.train);
    let inflated = inflate(&s.train, |r| r.completions.len());
    let (ncp, _) = train_records(base.clone(), &aug, &[], LossKind::Ntp, &enc, &tc)?;
    let (ntp, _) = train_records(base, &inflated, &[], LossKind::Ntp, &enc, &tc)?;

    let mean_entropy = |m: &ModelState| -> Result<f64> {
        let mut total = 0.0;
        for r in &s.test {
            total += concept_entropy(m, r, &enc)?;
        }
        Ok(total / s.test.len() as f64)
    };
    let hits = |m: &ModelState| -> Result<usize> {
        let mut n = 0;
        for r in &s.test {
            let prefix = join_tokens(&r.sentence[..r.target_span.0]);
            let set: Vec<String> = r.completions.iter().map(|c| normalize_word(c)).collect();
            n += inspect_topk_words(m, &prefix, set.len(), &enc)?
                .iter()
                .filter(|(w, _)| set.contains(&normalize_word(w)))
                .count();
        }
        Ok(n)
    };
    Ok(FlatteningOutcome {
        seed,
        ncp_entropy: mean_entropy(&ncp)?,
        ntp_entropy: mean_entropy(&ntp)?,
        ncp_topk_hits: hits(&ncp)?,
        ntp_topk_hits: hits(&ntp)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutOutcome {
    pub seed: u64,
    pub ncp_ppl: f64,
    pub ntp_ppl: f64,
}

impl HeldOutOutcome {
    pub fn ncp_wins(&self) -> bool {
        self.ncp_ppl < self.ntp_ppl
    }
}

/// Trains on sentences that only ever use each concept's primary member,
/// then scores sentences that only use the other members. The NCP-loss
/// model sees the other members as completions; the baseline never does.
pub fn held_out(cfg: &ExperimentConfig, seed: u64) -> Result<HeldOutOutcome> {
    let s = setup(cfg, seed, Surface::PrimaryOnly, Surface::HeldOut)?;
    let enc = Encoder::new(&s.tok, &s.cmap);
    let base = init(cfg, s.tok.vocab_size(), seed)?;
    let tc = seeded(&cfg.train, seed);
    let inflated = inflate(&s.train, |r| r.completions.len());
    let (ncp, _) = train_records(base.clone(), &s.train, &[], LossKind::Ncp, &enc, &tc)?;
    let (ntp, _) = train_records(base, &inflated, &[], LossKind::Ntp, &enc, &tc)?;
    let label = crate::dataset::Variant::Base;
    Ok(HeldOutOutcome {
        seed,
        ncp_ppl: perplexity(&ncp, &s.test, Metric::NtpPpl, &enc, &label, "held-out")?.value,
        ntp_ppl: perplexity(&ntp, &s.test, Metric::NtpPpl, &enc, &label, "held-out")?.value,
    })
}
