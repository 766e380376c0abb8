#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use ncp::dataset::{ConceptRecord, Source};
use ncp::lexicon::Level;
use ncp::model::{ModelConfig, ModelState};
use ncp::tokenizer::{CompletionMap, Scheme, Tokenizer};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

/// Raw reply, expected items (sorted), and whether the reply lacks a list.
pub const NOISY_REPLIES: &[(&str, &[&str], bool)] = &[
    ("[item1, item2, item3]", &["item1", "item2", "item3"], false),
    ("[]", &[], false),
    ("Sure! [pie , tart]", &["pie", "tart"], false),
    ("[Pie, TART, pie]", &["pie", "tart"], false),
    ("[ mom ,mommy,  mother ]", &["mom", "mommy", "mother"], false),
    ("Here you go:\n[dessert, baked goods]\nHope this helps.", &["baked goods", "dessert"], false),
    ("[\"pie\", \"tart\"]", &["pie", "tart"], false),
    ("['pie', 'tart']", &["pie", "tart"], false),
    ("pie, tart", &[], true),
    ("", &[], true),
    ("I cannot help with that.", &[], true),
    ("[pie, tart", &[], true),
    ("[pie,,tart,]", &["pie", "tart"], false),
    ("[baked   goods, ice cream]", &["baked goods", "ice cream"], false),
    ("[pie,\n\ttart]", &["pie", "tart"], false),
    ("[pie] and also [cake]", &["pie"], false),
    ("```\n[pie, tart]\n```", &["pie", "tart"], false),
    ("[  ]", &[], false),
    ("[*pie*, `tart`]", &["pie", "tart"], false),
    ("[Crème Brûlée, Flan]", &["crème brûlée", "flan"], false),
];

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/demo")
}

/// Entries expected from `tests/fixtures/wordnet`, written out by reading
/// the sample files: (lemma, synonyms, hypernyms).
pub const WORDNET_ORACLE: &[(&str, &[&str], &[&str])] = &[
    ("auto", &["automobile", "car"], &["entity"]),
    ("automobile", &["auto", "car"], &["entity"]),
    ("baked goods", &["bakery product"], &["food"]),
    ("bakery product", &["baked goods"], &["food"]),
    ("bar", &["cake"], &["entity"]),
    ("cake", &[], &["baked goods", "bakery product", "dessert", "sweet"]),
    ("car", &["auto", "automobile"], &["entity"]),
    ("dessert", &["sweet"], &["food"]),
    ("entity", &[], &[]),
    ("female parent", &["mom", "mother"], &["parent"]),
    ("food", &[], &["entity"]),
    ("mom", &["female parent", "mother"], &["parent"]),
    ("mother", &["female parent", "mom"], &["parent"]),
    ("parent", &[], &["entity"]),
    ("pie", &["tart"], &["dessert", "sweet"]),
    ("sweet", &["dessert"], &["food"]),
    ("tart", &["pie"], &["dessert", "sweet"]),
];

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn record(sentence: &str, span: (usize, usize), extra: &[&str]) -> ConceptRecord {
    let sentence = words(sentence);
    let original = sentence[span.0..span.1].join(" ");
    let mut completions: BTreeSet<String> = extra.iter().map(|s| s.to_string()).collect();
    completions.insert(original.clone());
    ConceptRecord {
        sentence,
        target_span: span,
        original,
        completions,
        level: Some(Level::Synonym),
        source: Source::ContextFree,
    }
}

pub const CONTEXT: &[&str] = &["my", "mom", "baked", "a", "the", "kid", "ate", "sweet", "we", "like"];
pub const NOUNS: &[&str] = &["cake", "pie", "tart", "dessert", "cookie", "bread", "treat"];
pub const PHRASES: &[&str] = &["sweet treat", "baked bread", "sweet pie"];

/// A small closed world: 17 distinct words, so the word-level vocabulary
/// has exactly 20 entries.
pub struct World {
    pub tok: Tokenizer,
    pub cmap: CompletionMap,
}

impl World {
    pub fn new(scheme: Scheme) -> Self {
        let lines: Vec<String> = CONTEXT
            .iter()
            .chain(NOUNS)
            .chain(PHRASES)
            .map(|s| s.to_string())
            .chain(["my mom baked a sweet pie", "the kid ate a cake", "we like bread"].map(String::from))
            .collect();
        let size = match scheme {
            Scheme::Word => 20,
            Scheme::Bpe => 40,
        };
        let tok = Tokenizer::train(lines.iter().map(String::as_str), size, scheme).unwrap();
        let all: Vec<&str> = NOUNS.iter().chain(PHRASES).copied().collect();
        let cmap = CompletionMap::build(&tok, [&record("cake", (0, 1), &all)]);
        World { tok, cmap }
    }

    pub fn enc(&self) -> ncp::training::Encoder<'_> {
        ncp::training::Encoder::new(&self.tok, &self.cmap)
    }
}

/// Random sentence around a noun or phrase target carrying `k` completions.
pub fn random_record(rng: &mut impl Rng, k: usize) -> ConceptRecord {
    let pool: Vec<&str> = NOUNS.iter().chain(PHRASES).copied().collect();
    let original = *pool.choose(rng).unwrap();
    let mut sentence: Vec<String> = (0..rng.random_range(1..=5))
        .map(|_| CONTEXT.choose(rng).unwrap().to_string())
        .collect();
    let start = sentence.len();
    sentence.extend(words(original));
    let end = sentence.len();
    for _ in 0..rng.random_range(0..=3) {
        sentence.push(CONTEXT.choose(rng).unwrap().to_string());
    }
    let mut others: Vec<&str> = pool.iter().copied().filter(|w| *w != original).collect();
    others.shuffle(rng);
    let mut completions: BTreeSet<String> = others[..k - 1].iter().map(|s| s.to_string()).collect();
    completions.insert(original.to_string());
    ConceptRecord {
        sentence,
        target_span: (start, end),
        original: original.to_string(),
        completions,
        level: Some(Level::Hypernym),
        source: Source::ContextAware,
    }
}

pub fn random_model(rng: &mut impl Rng, vocab_size: usize) -> ModelState {
    let d_model = *[8, 16].choose(rng).unwrap();
    let n_heads = *[1, 2, 4].choose(rng).unwrap();
    ModelState::init(ModelConfig {
        vocab_size,
        context_len: 80,
        d_model,
        n_layers: rng.random_range(1..=2),
        n_heads,
        d_ff: *[8, 16, 32].choose(rng).unwrap(),
        seed: rng.next_u64(),
    })
    .unwrap()
}

pub fn toy_config(vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size,
        context_len: 16,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        seed,
    }
}

/// A model whose next-token distribution ignores its input: every output
/// weight is zero and the output bias is `logits`.
pub fn constant_model(logits: &[f64]) -> ModelState {
    let mut m = ModelState::init(ModelConfig {
        context_len: 80,
        ..toy_config(logits.len(), 0)
    })
    .unwrap();
    m.params.w_out.data.iter_mut().for_each(|w| *w = 0.0);
    m.params.b_out.data.copy_from_slice(logits);
    m
}

/// Bias vector giving the listed tokens the listed probabilities and
/// spreading the remainder evenly (or, if none remains, effectively zero).
pub fn logits_for(tok: &Tokenizer, probs: &[(&str, f64)]) -> Vec<f64> {
    let v = tok.vocab_size();
    let assigned: f64 = probs.iter().map(|p| p.1).sum();
    let rest = v - probs.len();
    let fill = if assigned < 1.0 { ((1.0 - assigned) / rest as f64).ln() } else { -1000.0 };
    let mut logits = vec![fill; v];
    for (t, p) in probs {
        logits[tok.vocab().id(t).unwrap_or_else(|| panic!("`{t}` not in vocab"))] = p.ln();
    }
    logits
}
