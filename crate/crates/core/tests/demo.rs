mod common;

use std::collections::BTreeSet;

use common::demo_dir;
use ncp::concept_client::read_cassette;
use ncp::grammar::{DemoSpec, demo_files};
use ncp::lexicon::{Lexicon, LexiconFormat};
use ncp::tokenizer::{CompletionMap, Scheme, Tokenizer};
use rand::SeedableRng;
use rand::seq::IndexedRandom;

#[test]
fn bundled_demo_matches_generator() {
    for (name, contents) in demo_files(&DemoSpec::default()).unwrap() {
        let on_disk = std::fs::read_to_string(demo_dir().join(name)).unwrap();
        assert!(on_disk == contents, "data/demo/{name} is stale; rerun the demo_data example");
    }
}

#[test]
fn demo_lexicon_round_trips() {
    let path = demo_dir().join("lexicon.tsv");
    let lex = Lexicon::load(&path, LexiconFormat::NativeTsv).unwrap();
    assert!(lex.len() > 20);
    assert_eq!(lex.to_tsv(), std::fs::read_to_string(&path).unwrap());
    assert_eq!(Lexicon::parse_tsv(&lex.to_tsv(), "again").unwrap(), lex);
}

#[test]
fn cassette_entries_are_unique() {
    let entries = read_cassette(&demo_dir().join("cassette.jsonl")).unwrap();
    let keys: BTreeSet<_> = entries.iter().map(|e| (&e.sentence, &e.noun, e.level)).collect();
    assert_eq!(keys.len(), entries.len());
}

#[test]
fn sampled_words_match_fresh_tokenization() {
    let text: String = ["kitchen.txt", "street.txt"]
        .iter()
        .map(|f| std::fs::read_to_string(demo_dir().join(f)).unwrap())
        .collect();
    let lines: Vec<&str> = text.lines().collect();
    let tok = Tokenizer::train(lines.iter().copied(), 120, Scheme::Bpe).unwrap();
    let pool: Vec<&str> = text.split_whitespace().collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let sample: Vec<&str> = (0..1000).map(|_| *pool.choose(&mut rng).unwrap()).collect();
    let rec = common::record("x", (0, 1), &sample);
    let cmap = CompletionMap::build(&tok, [&rec]);
    for w in &sample {
        assert_eq!(cmap.get(w).unwrap(), tok.encode(w).as_slice(), "{w}");
    }
}
