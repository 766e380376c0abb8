//! Loads a native TSV lexicon and a WordNet database sample, then queries
//! both at the synonym and hypernym levels.
//!
//! ```text
//! cargo run --example lexicon
//! ```

use std::path::Path;

use ncp::lexicon::{Level, Lexicon, LexiconFormat};

fn show(lex: &Lexicon, lemma: &str) {
    let join = |level| lex.lookup(lemma, level).iter().cloned().collect::<Vec<_>>().join(", ");
    println!("  {lemma:<10} syn [{}]  hyp [{}]", join(Level::Synonym), join(Level::Hypernym));
}

fn main() -> anyhow::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));

    let native = Lexicon::parse_tsv("cake\tsyn:pie,cookie\thyp:dessert,baked goods\n", "inline")?;
    println!("native TSV ({} entry):", native.len());
    show(&native, "Cake");
    show(&native, "zzzz_unknown");

    let demo = Lexicon::load(&root.join("data/demo/lexicon.tsv"), LexiconFormat::NativeTsv)?;
    println!("\ndemo lexicon ({} entries):", demo.len());
    for lemma in ["mom", "cake", "ice cream", "bus"] {
        show(&demo, lemma);
    }

    let wordnet = Lexicon::load(&root.join("tests/fixtures/wordnet"), LexiconFormat::WordnetDb)?;
    println!("\nwordnet sample ({} lemmas, first sense, direct hypernyms):", wordnet.len());
    for lemma in ["cake", "mother", "car", "tart"] {
        show(&wordnet, lemma);
    }

    println!("\nserialized:\n{}", wordnet.to_tsv().lines().take(4).collect::<Vec<_>>().join("\n"));
    Ok(())
}
