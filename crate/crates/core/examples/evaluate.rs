//! Trains one concept-loss model per demo domain, scores both on both test
//! splits, and prints the perplexities, the cross-domain transfer matrix
//! and the top next-word predictions for a few prefixes.
//!
//! ```text
//! cargo run --release --example evaluate
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ncp::dataset::{LexiconDetector, Source, SplitRequest, Splits, Variant, build_records, split};
use ncp::evaluation::{
    Metric, best_by_perplexity, best_by_ratio, build_transfer_matrices, inspect_topk, perplexity, render_best,
    render_matrices,
};
use ncp::lexicon::{Level, Lexicon, LexiconFormat};
use ncp::model::{ModelConfig, ModelState};
use ncp::pipeline::read_corpus;
use ncp::tokenizer::{CompletionMap, Scheme, Tokenizer};
use ncp::training::{Encoder, LossKind, TrainConfig, train_records};

const DOMAINS: [&str; 2] = ["kitchen", "street"];

fn main() -> anyhow::Result<()> {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    let lex = Lexicon::load(&demo.join("lexicon.tsv"), LexiconFormat::NativeTsv)?;
    let req = SplitRequest { train: 100, val: 20, test: 20, seed: 5 };

    let mut data: BTreeMap<&str, Splits> = BTreeMap::new();
    for d in DOMAINS {
        let sentences = read_corpus(&demo.join(format!("{d}.txt")))?;
        let recs = build_records(&sentences, &LexiconDetector::new(&lex), Level::Synonym, Source::ContextFree, &lex, None)?;
        data.insert(d, split(&recs, &req)?);
    }
    let all: Vec<_> = data.values().flat_map(|s| s.train.iter().chain(&s.val).chain(&s.test)).cloned().collect();
    let corpus: Vec<String> = all.iter().map(|r| r.spaced_words()).chain(all.iter().flat_map(|r| r.completions.iter().cloned())).collect();
    let tok = Tokenizer::train(corpus.iter().map(String::as_str), 500, Scheme::Word)?;
    let cmap = CompletionMap::build(&tok, &all);
    let enc = Encoder::new(&tok, &cmap);

    let init = ModelState::init(ModelConfig {
        vocab_size: tok.vocab_size(),
        context_len: 24,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        seed: 9,
    })?;
    let tc = TrainConfig { epochs: 4, batch_size: 16, ..TrainConfig::default() };

    let mut results = Vec::new();
    let mut models = Vec::new();
    for d in DOMAINS {
        let variant: Variant = format!("ncp-loss/synonym/context-free/{d}").parse()?;
        let (state, _) = train_records(init.clone(), &data[d].train, &data[d].val, LossKind::Ncp, &enc, &tc)?;
        for e in DOMAINS {
            let r = perplexity(&state, &data[e].test, Metric::NcpPpl, &enc, &variant, e)?;
            println!("{:<40} on {e:<8} {} {:>10.3} ({} tokens)", r.model_id, r.metric, r.value, r.token_count);
            results.push(r);
        }
        models.push((variant, state));
    }

    let matrices = build_transfer_matrices(&results)?;
    println!("\n{}", render_matrices(&matrices));
    println!("{}", render_best(&best_by_ratio(&matrices), &best_by_perplexity(&results)));

    for (variant, state) in &models {
        for prefix in ["My mom baked a", "The big"] {
            let top = inspect_topk(state, prefix, 3, &tok)?;
            let shown: Vec<String> = top.iter().map(|(t, p)| format!("{t} {p:.3}")).collect();
            println!("{variant} | {prefix} -> {}", shown.join(", "));
        }
    }
    Ok(())
}
