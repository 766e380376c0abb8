//! Compares analytic gradients against central finite differences for
//! both objectives on a tiny randomly initialized model.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use std::collections::BTreeSet;

use ncp::dataset::{ConceptRecord, Source};
use ncp::lexicon::Level;
use ncp::model::{ModelConfig, ModelState};
use ncp::tokenizer::{CompletionMap, Scheme, Tokenizer};
use ncp::training::{Encoder, FD_EPS, LossKind, grad_check, loss_and_grad};

fn main() -> anyhow::Result<()> {
    let text = "my mom baked a sweet treat for the kids";
    let sentence: Vec<String> = text.split(' ').map(String::from).collect();
    let record = ConceptRecord {
        sentence,
        target_span: (4, 6),
        original: "sweet treat".into(),
        completions: BTreeSet::from(["sweet treat".into(), "pie".into(), "tart".into()]),
        level: Some(Level::Hypernym),
        source: Source::ContextAware,
    };
    record.validate()?;

    for scheme in [Scheme::Word, Scheme::Bpe] {
        let tok = Tokenizer::train([text, "pie", "tart"], 40, scheme)?;
        let cmap = CompletionMap::build(&tok, [&record]);
        let enc = Encoder::new(&tok, &cmap);
        let state = ModelState::init(ModelConfig {
            vocab_size: tok.vocab_size(),
            context_len: 32,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            seed: 17,
        })?;
        println!("{} tokenizer, {} parameters, eps {FD_EPS:e}", scheme.as_str(), state.config.param_count());
        for kind in [LossKind::Ntp, LossKind::Ncp] {
            let (loss, grad) = loss_and_grad(&state, &record, kind, &enc)?;
            let report = grad_check(&state, &record, kind, &enc)?;
            println!(
                "  {kind}: loss {:.5}, |grad| {:.4e}, max rel error {:.3e} at {}[{}]",
                loss.total,
                grad.norm(),
                report.max_rel_error,
                report.worst.0,
                report.worst.1
            );
        }
    }
    Ok(())
}
