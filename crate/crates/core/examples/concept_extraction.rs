//! Builds concept-service prompts, parses noisy replies, and resolves
//! context-aware concept sets for demo sentences by replaying the bundled
//! cassette. Set `CONCEPT_SERVICE_URL=http://...` to query a live service
//! instead.
//!
//! ```text
//! cargo run --example concept_extraction
//! ```

use std::path::Path;

use ncp::concept_client::{ClientSettings, ConceptClient, ConceptQuery, Endpoint, build_prompt, parse_response};
use ncp::dataset::{LexiconDetector, Source, extract_targets, resolve_record};
use ncp::lexicon::{Level, Lexicon, LexiconFormat};
use ncp::text::split_sentence;

fn main() -> anyhow::Result<()> {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");

    let q = ConceptQuery::new("My mom baked a cake.", "cake", Level::Hypernym)?;
    let prompt = build_prompt(&q)?;
    println!("system:  {}\nmessage: {}\n", prompt.system, prompt.message);

    for raw in ["[item1, item2, item3]", "Sure! [Pie , tart, pie]", "[]", "no list here"] {
        let parsed = parse_response(raw);
        println!("{raw:<26} -> {:?} (missing list: {})", parsed.items, parsed.missing_list);
    }

    let endpoint = match std::env::var(ncp::config::SERVICE_ENV) {
        Ok(url) => Endpoint::parse(&url)?,
        Err(_) => Endpoint::Replay(demo.join("cassette.jsonl")),
    };
    let client = ConceptClient::connect(&endpoint, ClientSettings::default())?;
    let lex = Lexicon::load(&demo.join("lexicon.tsv"), LexiconFormat::NativeTsv)?;
    let detector = LexiconDetector::new(&lex);

    let corpus = std::fs::read_to_string(demo.join("kitchen.txt"))?;
    for line in corpus.lines().take(3) {
        let sentence = split_sentence(line);
        println!("\n{line}");
        for span in extract_targets(&sentence, &detector) {
            for level in [Level::Synonym, Level::Hypernym] {
                for source in [Source::ContextFree, Source::ContextAware] {
                    let r = resolve_record(&sentence, span, level, source, &lex, Some(&client))?;
                    let set: Vec<&str> = r.completions.iter().map(String::as_str).collect();
                    println!("  {:<6} {level:<8} {source:<13} {{{}}}", r.original, set.join(", "));
                }
            }
        }
    }
    Ok(())
}
