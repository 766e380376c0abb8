mod common;

use std::collections::BTreeSet;

use common::{NOISY_REPLIES, WORDNET_ORACLE, fixture_dir};
use ncp::concept_client::{
    CassetteEntry, ClientSettings, ConceptClient, ConceptQuery, HYPERNYM_SYSTEM_PROMPT, ReplayTransport,
    SYNONYM_SYSTEM_PROMPT, build_prompt, parse_response, parse_response_bytes,
};
use ncp::error::Error;
use ncp::lexicon::{Level, Lexicon, LexiconFormat};
use proptest::prelude::*;

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[test]
fn noisy_reply_suite() {
    assert_eq!(NOISY_REPLIES.len(), 20);
    for (raw, expected, missing) in NOISY_REPLIES {
        let parsed = parse_response(raw);
        assert_eq!(parsed.to_set(), set(expected), "reply {raw:?}");
        assert_eq!(parsed.missing_list, *missing, "reply {raw:?}");
    }
}

#[test]
fn reply_items_keep_first_appearance_order() {
    let parsed = parse_response("[tart, Pie, tart, cake]");
    assert_eq!(parsed.items, ["tart", "pie", "cake"]);
}

#[test]
fn prompts_follow_the_templates() {
    let q = ConceptQuery::new("I baked a cake.", "cake", Level::Synonym).unwrap();
    let p = build_prompt(&q).unwrap();
    assert_eq!(p.system, SYNONYM_SYSTEM_PROMPT);
    assert_eq!(p.message, "Generate contextual synonyms for the word cake in the sentence I baked a cake.");

    let q = ConceptQuery::new("I baked a cake.", "cake", Level::Hypernym).unwrap();
    let p = build_prompt(&q).unwrap();
    assert_eq!(p.system, HYPERNYM_SYSTEM_PROMPT);
    assert!(p.message.starts_with("Generate contextual hypernym for the word cake"));
    assert!(ConceptQuery::new("", "cake", Level::Synonym).is_err());
}

fn replay(reply: &str) -> ConceptClient {
    let entries = [Level::Synonym, Level::Hypernym].map(|level| CassetteEntry {
        sentence: "My mom baked a cake.".into(),
        noun: "cake".into(),
        level,
        reply: reply.into(),
    });
    ConceptClient::new(Box::new(ReplayTransport::from_entries(entries)), ClientSettings::default())
}

#[test]
fn replayed_replies_pass_through_the_parser() {
    let q = ConceptQuery::new("My mom baked a cake.", "cake", Level::Synonym).unwrap();
    assert_eq!(replay("[pie, tart]").fetch_concepts(&q).unwrap(), set(&["pie", "tart"]));
    assert!(replay("[]").fetch_concepts(&q).unwrap().is_empty());
    assert_eq!(replay("[Cake, pie, cake]").fetch_concepts(&q).unwrap(), set(&["pie"]));

    let other = ConceptQuery::new("We ate a cake.", "cake", Level::Synonym).unwrap();
    assert!(replay("[pie]").fetch_concepts(&other).is_err());
}

#[test]
fn native_example_line() {
    let lex = Lexicon::parse_tsv("cake\tsyn:pie,cookie\thyp:dessert,baked goods\n", "example").unwrap();
    assert_eq!(*lex.lookup("cake", Level::Synonym), set(&["cookie", "pie"]));
    assert_eq!(*lex.lookup("cake", Level::Hypernym), set(&["baked goods", "dessert"]));
    assert!(lex.lookup("zzzz_unknown", Level::Synonym).is_empty());
}

#[test]
fn unknown_format_tag_is_rejected() {
    let err = "wordnet-xml".parse::<LexiconFormat>().unwrap_err();
    assert!(matches!(err, Error::UnknownFormat(_)));
}

#[test]
fn wordnet_sample_matches_hand_oracle() {
    let lex = Lexicon::load(&fixture_dir("wordnet"), LexiconFormat::WordnetDb).unwrap();
    assert_eq!(lex.len(), WORDNET_ORACLE.len());
    for (lemma, syn, hyp) in WORDNET_ORACLE {
        assert_eq!(*lex.lookup(lemma, Level::Synonym), set(syn), "synonyms of {lemma}");
        assert_eq!(*lex.lookup(lemma, Level::Hypernym), set(hyp), "hypernyms of {lemma}");
    }
    let via_file = Lexicon::load(&fixture_dir("wordnet").join("index.noun"), LexiconFormat::WordnetDb).unwrap();
    assert_eq!(via_file, lex);
}

#[test]
fn wordnet_import_round_trips_through_tsv() {
    let lex = Lexicon::load(&fixture_dir("wordnet"), LexiconFormat::WordnetDb).unwrap();
    let tsv = lex.to_tsv();
    assert_eq!(Lexicon::parse_tsv(&tsv, "rt").unwrap(), lex);
    assert!(tsv.contains("cake\tsyn:\thyp:baked goods,bakery product,dessert,sweet\n"));
}

#[test]
fn wordnet_missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = Lexicon::load(dir.path(), LexiconFormat::WordnetDb).unwrap_err();
    assert!(matches!(err, Error::MissingFile(_)));
}

#[test]
fn wordnet_bad_index_line_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture_dir("wordnet/data.noun"), dir.path().join("data.noun")).unwrap();
    std::fs::write(dir.path().join("index.noun"), "cake n 1 0 1 0 00005000\npie n x\n").unwrap();
    match Lexicon::load(dir.path(), LexiconFormat::WordnetDb).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
}

fn lemma() -> impl Strategy<Value = String> {
    "[a-z]{1,6}( [a-z]{1,5})?"
}

fn lexicon_text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        (lemma(), prop::collection::vec(lemma(), 0..4), prop::collection::vec(lemma(), 0..4)),
        0..12,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .map(|(l, s, h)| format!("{l}\tsyn:{}\thyp:{}\n", s.join(","), h.join(",")))
            .collect()
    })
}

proptest! {
    #[test]
    fn parser_is_total_on_bytes(raw in prop::collection::vec(any::<u8>(), 0..200)) {
        let parsed = parse_response_bytes(&raw);
        for item in &parsed.items {
            prop_assert!(!item.is_empty());
            prop_assert_eq!(item.clone(), item.to_lowercase());
            prop_assert!(!item.contains("  "));
        }
        let unique: BTreeSet<_> = parsed.items.iter().collect();
        prop_assert_eq!(unique.len(), parsed.items.len());
    }

    #[test]
    fn parser_is_total_on_listy_text(raw in r"[a-zA-Z \[\],'`*.\n]{0,80}") {
        let parsed = parse_response(&raw);
        prop_assert_eq!(parsed.missing_list, !raw.contains('[') || !raw[raw.find('[').unwrap()..].contains(']'));
    }

    #[test]
    fn lexicon_round_trip(text in lexicon_text()) {
        let lex = Lexicon::parse_tsv(&text, "prop").unwrap();
        let again = Lexicon::parse_tsv(&lex.to_tsv(), "again").unwrap();
        prop_assert_eq!(&again, &lex);
        prop_assert_eq!(again.to_tsv(), lex.to_tsv());
        for (lemma, _) in lex.iter() {
            for level in [Level::Synonym, Level::Hypernym] {
                prop_assert!(!lex.lookup(lemma, level).contains(lemma));
            }
        }
    }
}
