//! Trains word-level and BPE tokenizers on the demo corpus, builds the
//! completion map for a concept record and rewrites its target span with
//! each alternative completion.
//!
//! ```text
//! cargo run --example tokenizer
//! ```

use std::path::Path;

use ncp::dataset::{LexiconDetector, Source, build_records};
use ncp::lexicon::{Level, Lexicon, LexiconFormat};
use ncp::pipeline::read_corpus;
use ncp::tokenizer::{CompletionMap, Scheme, Tokenizer, substitute_span};

fn main() -> anyhow::Result<()> {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    let lex = Lexicon::load(&demo.join("lexicon.tsv"), LexiconFormat::NativeTsv)?;
    let sentences = read_corpus(&demo.join("kitchen.txt"))?;
    let records = build_records(&sentences, &LexiconDetector::new(&lex), Level::Hypernym, Source::ContextFree, &lex, None)?;
    let lines: Vec<String> = records.iter().flat_map(|r| {
        let mut v = vec![r.spaced_words()];
        v.extend(r.completions.iter().cloned());
        v
    }).collect();

    let record = records.iter().find(|r| r.original == "ice cream").unwrap_or(&records[0]);
    println!("record: {} [{}]", record.sentence_text(), record.original);

    for (scheme, size) in [(Scheme::Word, 500), (Scheme::Bpe, 200)] {
        let tok = Tokenizer::train(lines.iter().map(String::as_str), size, scheme)?;
        let cmap = CompletionMap::build(&tok, &records);
        let (ids, spans) = tok.encode_words(&record.sentence);
        let (s, e) = record.target_span;
        let span = (spans[s].0, spans[e - 1].1);

        println!("\n{} tokenizer: {} types, {} merges", scheme.as_str(), tok.vocab_size(), tok.merges().len());
        println!("  ids      {ids:?}");
        println!("  pieces   {:?}", ids.iter().map(|&i| tok.vocab().token(i).unwrap_or("?")).collect::<Vec<_>>());
        for c in &record.completions {
            let swapped = substitute_span(&ids, span, c, &cmap)?;
            println!("  {c:<14} -> {:>2} tokens: {}", swapped.len(), tok.decode(&swapped));
        }
    }

    Ok(())
}
