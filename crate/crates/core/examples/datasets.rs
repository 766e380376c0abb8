//! Turns the demo kitchen corpus into concept records, then writes plain,
//! augmented and volume-matched inflated datasets with a split manifest.
//!
//! ```text
//! cargo run --example datasets -- /tmp/ncp-datasets
//! ```

use std::path::{Path, PathBuf};

use ncp::concept_client::{ClientSettings, ConceptClient, Endpoint};
use ncp::dataset::{
    LexiconDetector, Source, SplitManifest, SplitRequest, Splits, augment, augmented_key, build_records, inflate_matched,
    inflated_key, records_key, split,
};
use ncp::lexicon::{Level, Lexicon, LexiconFormat};
use ncp::pipeline::read_corpus;

fn main() -> anyhow::Result<()> {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ncp-datasets"));
    std::fs::create_dir_all(&out)?;

    let lex = Lexicon::load(&demo.join("lexicon.tsv"), LexiconFormat::NativeTsv)?;
    let client = ConceptClient::connect(&Endpoint::Replay(demo.join("cassette.jsonl")), ClientSettings::default())?;
    let sentences = read_corpus(&demo.join("kitchen.txt"))?;
    let detector = LexiconDetector::new(&lex);

    let req = SplitRequest { train: 100, val: 20, test: 20, seed: 13 };
    let mut manifest = SplitManifest::new("kitchen", &req);
    let level = Level::Synonym;
    let plain = build_records(&sentences, &detector, level, Source::ContextFree, &lex, None)?;
    let aware = build_records(&sentences, &detector, level, Source::ContextAware, &lex, Some(&client))?;
    let none = build_records(&sentences, &detector, level, Source::NoConcept, &lex, None)?;

    let plain_splits = split(&plain, &req)?;
    let none_splits = split(&none, &req)?;
    manifest.add_dataset(&out, &records_key(Some(level), Source::ContextFree), &plain_splits)?;
    manifest.add_dataset(&out, &records_key(Some(level), Source::ContextAware), &split(&aware, &req)?)?;
    manifest.add_dataset(&out, &records_key(None, Source::NoConcept), &none_splits)?;
    let augmented = Splits {
        train: augment(&plain_splits.train),
        val: augment(&plain_splits.val),
        test: augment(&plain_splits.test),
    };
    manifest.add_dataset(&out, &augmented_key(level, Source::ContextFree), &augmented)?;
    let inflated = Splits {
        train: inflate_matched(&none_splits.train, &plain_splits.train)?,
        val: inflate_matched(&none_splits.val, &plain_splits.val)?,
        test: inflate_matched(&none_splits.test, &plain_splits.test)?,
    };
    manifest.add_dataset(&out, &inflated_key(level), &inflated)?;
    manifest.save(&out.join("manifest.json"))?;
    manifest.verify(&out)?;

    let example = plain.iter().find(|r| r.completions.len() > 2).unwrap_or(&plain[0]);
    println!("record: {}", serde_json::to_string(example)?);
    println!("augmented into {} single-completion records", augment(std::slice::from_ref(example)).len());
    for (key, files) in &manifest.datasets {
        println!("{key:<34} train {:>4}  val {:>3}  test {:>3}", files.train.records, files.val.records, files.test.records);
    }
    println!("wrote {}", out.display());
    Ok(())
}
