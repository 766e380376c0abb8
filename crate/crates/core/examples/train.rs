//! Trains the same small transformer twice on demo kitchen records, once
//! with the concept-level objective and once on augmented single-completion
//! records, then compares how each spreads probability over the concept.
//!
//! ```text
//! cargo run --release --example train -- [epochs]
//! ```

use std::path::Path;

use ncp::dataset::{LexiconDetector, Source, SplitRequest, augment, build_records, split};
use ncp::evaluation::concept_distribution;
use ncp::lexicon::{Level, Lexicon, LexiconFormat};
use ncp::model::{ModelConfig, ModelState};
use ncp::pipeline::read_corpus;
use ncp::tokenizer::{CompletionMap, Scheme, Tokenizer};
use ncp::training::{Encoder, LossKind, TrainConfig, train_records};

fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).map(|e| e.parse()).transpose()?.unwrap_or(6);
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    let lex = Lexicon::load(&demo.join("lexicon.tsv"), LexiconFormat::NativeTsv)?;
    let sentences = read_corpus(&demo.join("kitchen.txt"))?;
    let records = build_records(&sentences, &LexiconDetector::new(&lex), Level::Synonym, Source::ContextFree, &lex, None)?;
    let parts = split(&records, &SplitRequest { train: 100, val: 20, test: 20, seed: 1 })?;

    let corpus: Vec<String> = records.iter().map(|r| r.spaced_words()).chain(records.iter().flat_map(|r| r.completions.iter().cloned())).collect();
    let tok = Tokenizer::train(corpus.iter().map(String::as_str), 400, Scheme::Word)?;
    let cmap = CompletionMap::build(&tok, &records);
    let enc = Encoder::new(&tok, &cmap);

    let init = ModelState::init(ModelConfig {
        vocab_size: tok.vocab_size(),
        context_len: 24,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        seed: 3,
    })?;
    let tc = TrainConfig { epochs, batch_size: 16, ..TrainConfig::default() };

    let runs = [
        ("ncp-loss", LossKind::Ncp, parts.train.clone(), parts.val.clone()),
        ("ncp-augmentation", LossKind::Ntp, augment(&parts.train), augment(&parts.val)),
    ];
    let probe = parts.test.iter().find(|r| r.completions.len() > 2).unwrap_or(&parts.test[0]);
    for (name, kind, train, val) in runs {
        let (state, log) = train_records(init.clone(), &train, &val, kind, &enc, &tc)?;
        println!("{name} ({} training records)", train.len());
        for e in &log {
            println!("  epoch {:>2} {:<5} {:.4}", e.epoch, e.split, e.loss);
        }
        println!("  \"{}\" over {{{}}}:", probe.sentence_text(), probe.completions.iter().cloned().collect::<Vec<_>>().join(", "));
        for (word, p) in concept_distribution(&state, probe, &enc)? {
            println!("    {word:<10} {p:.3}");
        }
    }
    Ok(())
}
