//! A small synthetic "concept grammar": templated sentences whose nouns come
//! from known synonym sets, in two domains. It produces the bundled demo
//! corpus, its lexicon, and a replay cassette standing in for the concept
//! service, with the reply formatting noise a real chat model produces.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::concept_client::CassetteEntry;
use crate::dataset::{ConceptRecord, LexiconDetector, extract_targets};
use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, Level, normalize_word};
use crate::text::split_sentence;

#[derive(Debug, Clone, Copy)]
pub struct Concept {
    pub key: &'static str,
    /// Interchangeable surface forms; the first is the primary one.
    pub members: &'static [&'static str],
    pub hypernyms: &'static [&'static str],
    /// Extra words a context-aware service suggests on top of the members.
    pub contextual: &'static [&'static str],
}

pub const CONCEPTS: &[Concept] = &[
    Concept { key: "cake", members: &["cake", "gateau", "torte"], hypernyms: &["dessert", "sweet"], contextual: &["treat"] },
    Concept { key: "pie", members: &["pie", "tart", "flan"], hypernyms: &["pastry", "dessert"], contextual: &[] },
    Concept { key: "icecream", members: &["ice cream", "gelato", "sorbet"], hypernyms: &["frozen treat", "dessert"], contextual: &[] },
    Concept { key: "mother", members: &["mom", "mother", "mum"], hypernyms: &["parent", "woman"], contextual: &["ma"] },
    Concept { key: "father", members: &["dad", "father", "papa"], hypernyms: &["parent", "man"], contextual: &["pa"] },
    Concept { key: "kid", members: &["kid", "child", "youngster"], hypernyms: &["person", "juvenile"], contextual: &[] },
    Concept { key: "pan", members: &["pan", "skillet", "griddle"], hypernyms: &["cookware", "utensil"], contextual: &[] },
    Concept { key: "oven", members: &["oven", "stove", "range"], hypernyms: &["appliance", "device"], contextual: &[] },
    Concept { key: "knife", members: &["knife", "blade", "cutter"], hypernyms: &["tool", "utensil"], contextual: &[] },
    Concept { key: "car", members: &["car", "automobile", "auto"], hypernyms: &["vehicle", "machine"], contextual: &["ride"] },
    Concept { key: "bus", members: &["bus", "coach", "shuttle"], hypernyms: &["vehicle", "transport"], contextual: &[] },
    Concept { key: "dog", members: &["dog", "hound", "pup"], hypernyms: &["animal", "pet"], contextual: &["mutt"] },
    Concept { key: "road", members: &["road", "street", "avenue"], hypernyms: &["way", "route"], contextual: &[] },
    Concept { key: "shop", members: &["shop", "store", "boutique"], hypernyms: &["business", "building"], contextual: &[] },
];

pub const DOMAINS: [&str; 2] = ["kitchen", "street"];

const ADJECTIVES: &[&str] = &["big", "small", "fresh", "new", "red", "warm", "quiet", "busy"];
const TIMES: &[&str] = &["today", "yesterday", "tonight", "again"];

const KITCHEN: &[&str] = &[
    "{time} my {mother} baked a {adj} {cake} in the {oven} .",
    "the {pan} on the {oven} was {adj} .",
    "my {father} cut the {pie} with a {adj} {knife} .",
    "we ate {icecream} and {cake} with my {mother} {time} .",
    "the {kid} wanted more {pie} after dinner .",
    "{time} my {father} cleaned the {pan} and the {knife} .",
];

const STREET: &[&str] = &[
    "the {adj} {car} stopped near the {shop} {time} .",
    "a {adj} {dog} ran across the {road} .",
    "my {father} parked the {car} by the {shop} .",
    "the {kid} waited for the {bus} on the {road} {time} .",
    "{time} my {mother} walked the {dog} to the {shop} .",
    "the {bus} was late because the {road} was {adj} .",
];

pub fn templates(domain: &str) -> Result<&'static [&'static str]> {
    match domain {
        "kitchen" => Ok(KITCHEN),
        "street" => Ok(STREET),
        _ => Err(Error::InvalidInput(format!(
            "grammar has no domain `{domain}` (known: {})",
            DOMAINS.join(", ")
        ))),
    }
}

pub fn concept(key: &str) -> Option<&'static Concept> {
    CONCEPTS.iter().find(|c| c.key == key)
}

/// The concept a surface word belongs to.
pub fn concept_of(word: &str) -> Option<&'static Concept> {
    let w = normalize_word(word);
    CONCEPTS.iter().find(|c| c.members.contains(&w.as_str()))
}

/// How noun slots pick their surface form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    /// Primary member with this probability, otherwise a uniform other one.
    Skewed(f64),
    PrimaryOnly,
    /// Never the primary member.
    HeldOut,
}

fn pick_member(c: &Concept, surface: Surface, rng: &mut ChaCha8Rng) -> &'static str {
    let others = &c.members[1..];
    match surface {
        Surface::PrimaryOnly => c.members[0],
        Surface::HeldOut => others.choose(rng).copied().unwrap_or(c.members[0]),
        Surface::Skewed(p) => {
            if others.is_empty() || rng.random::<f64>() < p {
                c.members[0]
            } else {
                others.choose(rng).copied().expect("non-empty")
            }
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut cs = s.chars();
    match cs.next() {
        Some(f) => f.to_uppercase().chain(cs).collect(),
        None => String::new(),
    }
}

/// Fills one template. Punctuation tokens are attached to the preceding
/// word.
pub fn fill(template: &str, surface: Surface, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = Vec::new();
    for tok in template.split_whitespace() {
        let w = match tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
            Some("adj") => ADJECTIVES.choose(rng).expect("non-empty").to_string(),
            Some("time") => TIMES.choose(rng).expect("non-empty").to_string(),
            Some(key) => {
                let c = concept(key).unwrap_or_else(|| panic!("template names unknown concept `{key}`"));
                pick_member(c, surface, rng).to_string()
            }
            None => tok.to_string(),
        };
        if w == "." || w == "," {
            if let Some(last) = words.last_mut() {
                last.push_str(&w);
                continue;
            }
        }
        words.push(w);
    }
    capitalize(&words.join(" "))
}

/// `n` sentences for `domain`, deterministic in `seed`.
pub fn generate(domain: &str, n: usize, surface: Surface, seed: u64) -> Result<Vec<String>> {
    let ts = templates(domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| fill(ts.choose(&mut rng).expect("non-empty"), surface, &mut rng))
        .collect())
}

/// Like [`generate`] but without repeated sentences.
pub fn generate_distinct(domain: &str, n: usize, surface: Surface, seed: u64) -> Result<Vec<String>> {
    let ts = templates(domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 100 * n.max(10) {
            return Err(Error::InvalidInput(format!(
                "grammar cannot produce {n} distinct `{domain}` sentences"
            )));
        }
        let s = fill(ts.choose(&mut rng).expect("non-empty"), surface, &mut rng);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Lexicon where every member lists the other members as synonyms and the
/// concept's hypernyms.
pub fn lexicon() -> Lexicon {
    let mut lex = Lexicon::new();
    for c in CONCEPTS {
        for m in c.members {
            lex.insert(m, c.members.iter(), c.hypernyms.iter());
        }
    }
    lex
}

/// FNV-1a, used to make cassette choices stable without an RNG.
fn fnv(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.bytes().chain([0xff]) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// What a context-aware service would list for `noun` in `sentence`: the
/// other members minus one that does not fit this particular context, plus
/// contextual extras; for hypernyms the first hypernym plus the extras'
/// counterpart.
pub fn contextual_items(sentence: &str, noun: &str, level: Level) -> Option<Vec<String>> {
    let c = concept_of(noun)?;
    let w = normalize_word(noun);
    let h = fnv(&[sentence, &w, level.as_str()]);
    let items: Vec<String> = match level {
        Level::Synonym => {
            let others: Vec<&str> = c.members.iter().copied().filter(|m| *m != w).collect();
            let drop = (h % (others.len() as u64 + 1)) as usize;
            others
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != drop)
                .map(|(_, m)| m.to_string())
                .chain(c.contextual.iter().map(|s| s.to_string()))
                .collect()
        }
        Level::Hypernym => {
            let k = 1 + (h % c.hypernyms.len() as u64) as usize;
            c.hypernyms.iter().take(k).map(|s| s.to_string()).collect()
        }
    };
    Some(items)
}

/// Formats a list the way a chat model might, picked by hash.
pub fn noisy_reply(items: &[String], key: u64) -> String {
    if items.is_empty() {
        return match key % 2 {
            0 => "[]".into(),
            _ => "I could not find any. []".into(),
        };
    }
    let plain = items.join(", ");
    match key % 7 {
        0 => format!("[{plain}]"),
        1 => format!("Sure! Here is the list: [{plain}]"),
        2 => format!(
            "[{}]",
            items.iter().map(|i| format!("\"{i}\"")).collect::<Vec<_>>().join(", ")
        ),
        3 => format!(
            "[{}].",
            items.iter().map(|i| capitalize(i)).collect::<Vec<_>>().join(", ")
        ),
        4 => format!("[{}]\nLet me know if you need more.", items.join(",")),
        5 => format!("**Answer:** [{plain}, ]"),
        _ => format!("  [ {} ]  ", items.join(" , ")),
    }
}

/// Cassette entries for every (sentence, target noun, level) the extractor
/// will query on `sentences`, keyed exactly as the client sends them.
pub fn cassette(sentences: &[String], lex: &Lexicon) -> Vec<CassetteEntry> {
    let det = LexiconDetector::new(lex);
    let mut out = Vec::new();
    for s in sentences {
        let words = split_sentence(s);
        for span in extract_targets(&words, &det) {
            let rec = ConceptRecord::no_concept(words.clone(), span).expect("detector span is valid");
            let text = rec.sentence_text();
            for level in Level::ALL {
                let items = contextual_items(&text, &rec.original, level).unwrap_or_default();
                let key = fnv(&[&text, &rec.original, level.as_str(), "fmt"]);
                out.push(CassetteEntry {
                    sentence: text.clone(),
                    noun: rec.original.clone(),
                    level,
                    reply: noisy_reply(&items, key),
                });
            }
        }
    }
    out.sort_by(|a, b| (&a.sentence, &a.noun, a.level).cmp(&(&b.sentence, &b.noun, b.level)));
    out.dedup();
    out
}

/// Parameters of the bundled demo corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSpec {
    pub sentences_per_domain: usize,
    pub skew: f64,
    pub seed: u64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            sentences_per_domain: 140,
            skew: 0.6,
            seed: 7,
        }
    }
}

pub const DEMO_CONFIG: &str = "\
# Two synthetic domains generated from the concept grammar.
paths.out = out
paths.lexicon = lexicon.tsv
corpus.kitchen = kitchen.txt
corpus.street = street.txt
concept_service.url = replay:cassette.jsonl

[run]
seed = 13
variants = all

[split]
train = 100
val = 20
test = 20

[tokenizer]
scheme = word
vocab_size = 500

[model]
d_model = 16
n_layers = 1
n_heads = 2
d_ff = 32
context_len = 24

[train]
learning_rate = 0.01
batch_size = 16
epochs = 4
optimizer = adam

[eval]
prefixes = My mom baked a | The big | A small
top_k = 5
";

/// Every demo file name with its contents.
pub fn demo_files(spec: &DemoSpec) -> Result<Vec<(&'static str, String)>> {
    let lex = lexicon();
    let mut files = Vec::new();
    let mut all = Vec::new();
    for (i, (domain, name)) in DOMAINS.iter().zip(["kitchen.txt", "street.txt"]).enumerate() {
        let sents = generate_distinct(domain, spec.sentences_per_domain, Surface::Skewed(spec.skew), spec.seed + i as u64)?;
        files.push((name, sents.iter().map(|s| format!("{s}\n")).collect::<String>()));
        all.extend(sents);
    }
    files.push(("lexicon.tsv", lex.to_tsv()));
    let mut cas = String::new();
    for e in cassette(&all, &lex) {
        cas.push_str(&serde_json::to_string(&e)?);
        cas.push('\n');
    }
    files.push(("cassette.jsonl", cas));
    files.push(("demo.conf", DEMO_CONFIG.to_string()));
    Ok(files)
}

pub fn write_demo(dir: &std::path::Path, spec: &DemoSpec) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, text) in demo_files(spec)? {
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}
