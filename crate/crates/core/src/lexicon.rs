//! Dictionary-style lexical resource: context-independent synonyms and
//! hypernyms per lemma.
//!
//! Two on-disk sources are supported. The native format is a UTF-8 TSV file,
//! one lemma per line:
//!
//! ```text
//! cake	syn:pie,cookie	hyp:dessert,baked goods
//! ```
//!
//! The `syn:`/`hyp:` prefixes are mandatory; an empty list is written as a
//! bare `syn:`. The second source is a WordNet database directory holding
//! `index.noun` and `data.noun`, which is reduced to first-sense synonyms and
//! direct hypernyms.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concept resolution level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Synonym,
    Hypernym,
}

impl Level {
    pub const ALL: [Level; 2] = [Level::Synonym, Level::Hypernym];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Synonym => "synonym",
            Level::Hypernym => "hypernym",
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synonym" | "syn" => Ok(Level::Synonym),
            "hypernym" | "hyp" => Ok(Level::Hypernym),
            other => Err(Error::InvalidInput(format!("unknown level `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexiconFormat {
    NativeTsv,
    WordnetDb,
}

impl FromStr for LexiconFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native-tsv" => Ok(LexiconFormat::NativeTsv),
            "wordnet-db" => Ok(LexiconFormat::WordnetDb),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LexEntry {
    pub synonyms: BTreeSet<String>,
    pub hypernyms: BTreeSet<String>,
}

impl LexEntry {
    pub fn get(&self, level: Level) -> &BTreeSet<String> {
        match level {
            Level::Synonym => &self.synonyms,
            Level::Hypernym => &self.hypernyms,
        }
    }
}

/// Immutable lemma → entry map. Lookups never fail.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, LexEntry>,
}

static EMPTY: BTreeSet<String> = BTreeSet::new();

/// Lowercase, trim and collapse internal whitespace (and WordNet underscores)
/// to single spaces.
pub fn normalize_word(word: &str) -> String {
    word.split(|c: char| c.is_whitespace() || c == '_')
        .filter(|p| !p.is_empty())
        .map(|p| p.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds (or merges into) the entry for `lemma`. Items equal to the lemma
    /// and empty items are dropped.
    pub fn insert<S, H>(&mut self, lemma: &str, synonyms: S, hypernyms: H)
    where
        S: IntoIterator,
        S::Item: AsRef<str>,
        H: IntoIterator,
        H::Item: AsRef<str>,
    {
        let key = normalize_word(lemma);
        if key.is_empty() {
            return;
        }
        let clean = |items: &mut BTreeSet<String>, src: Vec<String>| {
            for w in src {
                if !w.is_empty() && w != key {
                    items.insert(w);
                }
            }
        };
        let syn: Vec<String> = synonyms.into_iter().map(|w| normalize_word(w.as_ref())).collect();
        let hyp: Vec<String> = hypernyms.into_iter().map(|w| normalize_word(w.as_ref())).collect();
        let entry = self.entries.entry(key.clone()).or_default();
        clean(&mut entry.synonyms, syn);
        clean(&mut entry.hypernyms, hyp);
    }

    pub fn lookup(&self, lemma: &str, level: Level) -> &BTreeSet<String> {
        self.entries
            .get(&normalize_word(lemma))
            .map_or(&EMPTY, |e| e.get(level))
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.entries.contains_key(&normalize_word(lemma))
    }

    pub fn entry(&self, lemma: &str) -> Option<&LexEntry> {
        self.entries.get(&normalize_word(lemma))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LexEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Longest lemma, in words. Used by the noun detector for multi-word
    /// matching.
    pub fn max_lemma_words(&self) -> usize {
        self.entries
            .keys()
            .map(|k| k.split(' ').count())
            .max()
            .unwrap_or(0)
    }

    pub fn load(path: &Path, format: LexiconFormat) -> Result<Self> {
        match format {
            LexiconFormat::NativeTsv => {
                let text = fs::read_to_string(path)?;
                Self::parse_tsv(&text, &path.display().to_string())
            }
            LexiconFormat::WordnetDb => load_wordnet(path),
        }
    }

    pub fn parse_tsv(text: &str, source: &str) -> Result<Self> {
        let mut lex = Lexicon::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            }
            let lemma = normalize_word(fields[0]);
            if lemma.is_empty() {
                return Err(Error::parse(source, line_no, "empty lemma"));
            }
            let syn = fields[1]
                .strip_prefix("syn:")
                .ok_or_else(|| Error::parse(source, line_no, "second field must start with `syn:`"))?;
            let hyp = fields[2]
                .strip_prefix("hyp:")
                .ok_or_else(|| Error::parse(source, line_no, "third field must start with `hyp:`"))?;
            lex.insert(&lemma, split_list(syn), split_list(hyp));
        }
        Ok(lex)
    }

    /// Native TSV rendering, sorted by lemma. Parsing the output yields an
    /// equal lexicon.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (lemma, e) in &self.entries {
            let syn: Vec<&str> = e.synonyms.iter().map(String::as_str).collect();
            let hyp: Vec<&str> = e.hypernyms.iter().map(String::as_str).collect();
            let _ = writeln!(out, "{lemma}\tsyn:{}\thyp:{}", syn.join(","), hyp.join(","));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|w| !w.is_empty()).collect()
}

struct Synset {
    words: Vec<String>,
    hypernyms: Vec<u64>,
}

/// Strips the syntactic marker WordNet appends to some adjectives, e.g.
/// `galore(ip)`.
fn clean_wordnet_lemma(w: &str) -> String {
    let base = match w.find('(') {
        Some(i) if w.ends_with(')') => &w[..i],
        _ => w,
    };
    normalize_word(base)
}

fn parse_data_line(line: &str, source: &str, line_no: usize) -> Result<(u64, Synset)> {
    let body = line.split(" | ").next().unwrap_or(line);
    let mut it = body.split_whitespace();
    let mut next = |what: &str| {
        it.next()
            .ok_or_else(|| Error::parse(source, line_no, format!("missing {what}")))
    };
    let offset: u64 = next("synset offset")?
        .parse()
        .map_err(|_| Error::parse(source, line_no, "bad synset offset"))?;
    let _lex_filenum = next("lex_filenum")?;
    let _ss_type = next("ss_type")?;
    let w_cnt = usize::from_str_radix(next("w_cnt")?, 16)
        .map_err(|_| Error::parse(source, line_no, "bad w_cnt (expected hex)"))?;
    let mut words = Vec::with_capacity(w_cnt);
    for _ in 0..w_cnt {
        words.push(clean_wordnet_lemma(next("word")?));
        let _lex_id = next("lex_id")?;
    }
    let p_cnt: usize = next("p_cnt")?
        .parse()
        .map_err(|_| Error::parse(source, line_no, "bad p_cnt"))?;
    let mut hypernyms = Vec::new();
    for _ in 0..p_cnt {
        let symbol = next("pointer symbol")?;
        let target: u64 = next("pointer offset")?
            .parse()
            .map_err(|_| Error::parse(source, line_no, "bad pointer offset"))?;
        let pos = next("pointer pos")?;
        let _src_tgt = next("pointer source/target")?;
        if (symbol == "@" || symbol == "@i") && pos == "n" {
            hypernyms.push(target);
        }
    }
    Ok((offset, Synset { words, hypernyms }))
}

/// Returns (lemma, first-sense synset offset).
fn parse_index_line(line: &str, source: &str, line_no: usize) -> Result<(String, u64)> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    let bad = |msg: &str| Error::parse(source, line_no, msg.to_string());
    if toks.len() < 6 {
        return Err(bad("too few fields"));
    }
    let lemma = normalize_word(toks[0]);
    let synset_cnt: usize = toks[2].parse().map_err(|_| bad("bad synset_cnt"))?;
    let p_cnt: usize = toks[3].parse().map_err(|_| bad("bad p_cnt"))?;
    // pointers, then sense_cnt and tagsense_cnt
    let first = 4 + p_cnt + 2;
    if synset_cnt == 0 || toks.len() < first + synset_cnt {
        return Err(bad("synset offsets missing"));
    }
    let offset = toks[first].parse().map_err(|_| bad("bad synset offset"))?;
    Ok((lemma, offset))
}

fn load_wordnet(path: &Path) -> Result<Lexicon> {
    let dir = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let data_path = dir.join("data.noun");
    let index_path = dir.join("index.noun");
    for p in [&data_path, &index_path] {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    let data_src = data_path.display().to_string();
    let index_src = index_path.display().to_string();

    let mut synsets = HashMap::new();
    for (i, line) in fs::read_to_string(&data_path)?.lines().enumerate() {
        // license header lines start with two spaces
        if line.starts_with("  ") || line.trim().is_empty() {
            continue;
        }
        let (offset, synset) = parse_data_line(line, &data_src, i + 1)?;
        synsets.insert(offset, synset);
    }

    let mut lex = Lexicon::new();
    for (i, line) in fs::read_to_string(&index_path)?.lines().enumerate() {
        if line.starts_with("  ") || line.trim().is_empty() {
            continue;
        }
        let (lemma, offset) = parse_index_line(line, &index_src, i + 1)?;
        let synset = synsets.get(&offset).ok_or_else(|| {
            Error::parse(&index_src, i + 1, format!("synset {offset:08} not in data.noun"))
        })?;
        let hypernyms: Vec<&str> = synset
            .hypernyms
            .iter()
            .filter_map(|o| synsets.get(o))
            .flat_map(|s| s.words.iter().map(String::as_str))
            .collect();
        lex.insert(&lemma, synset.words.iter(), hypernyms);
    }
    Ok(lex)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cake_lexicon() -> Lexicon {
        Lexicon::parse_tsv("cake\tsyn:pie,cookie\thyp:dessert,baked goods\n", "test").unwrap()
    }

    #[test]
    fn parses_native_line() {
        let lex = cake_lexicon();
        let syn: Vec<_> = lex.lookup("cake", Level::Synonym).iter().cloned().collect();
        let hyp: Vec<_> = lex.lookup("cake", Level::Hypernym).iter().cloned().collect();
        assert_eq!(syn, ["cookie", "pie"]);
        assert_eq!(hyp, ["baked goods", "dessert"]);
    }

    #[test]
    fn empty_file_is_empty_lexicon() {
        let lex = Lexicon::parse_tsv("", "empty").unwrap();
        assert!(lex.is_empty());
    }

    #[test]
    fn unknown_lemma_is_empty() {
        let lex = cake_lexicon();
        assert!(lex.lookup("zzzz_unknown", Level::Synonym).is_empty());
        assert!(lex.lookup("zzzz_unknown", Level::Hypernym).is_empty());
    }

    #[test]
    fn lookup_lowercases_query() {
        let lex = cake_lexicon();
        assert_eq!(lex.lookup("  CAKE ", Level::Synonym).len(), 2);
    }

    #[test]
    fn self_is_excluded_and_lists_deduplicated() {
        let lex = Lexicon::parse_tsv("Cake\tsyn:cake, pie,PIE ,  tart\thyp:\n", "t").unwrap();
        let syn: Vec<_> = lex.lookup("cake", Level::Synonym).iter().cloned().collect();
        assert_eq!(syn, ["pie", "tart"]);
        assert!(lex.lookup("cake", Level::Hypernym).is_empty());
    }

    #[test]
    fn multi_word_items_use_single_spaces() {
        let lex = Lexicon::parse_tsv("cake\tsyn:\thyp:baked   goods\n", "t").unwrap();
        assert!(lex.lookup("cake", Level::Hypernym).contains("baked goods"));
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let err = Lexicon::parse_tsv("cake\tsyn:pie\thyp:dessert\nbad line\n", "f.tsv").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = Lexicon::parse_tsv("cake\tpie\thyp:dessert\n", "f.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = Lexicon::parse_tsv("cake\tsyn:\tdessert\n", "f.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn unknown_format_tag() {
        assert!(matches!(
            "xml".parse::<LexiconFormat>(),
            Err(Error::UnknownFormat(_))
        ));
    }

    #[test]
    fn tsv_round_trip() {
        let lex = cake_lexicon();
        let again = Lexicon::parse_tsv(&lex.to_tsv(), "rt").unwrap();
        assert_eq!(lex, again);
        assert_eq!(lex.to_tsv(), again.to_tsv());
    }

    #[test]
    fn wordnet_marker_is_stripped() {
        assert_eq!(clean_wordnet_lemma("baked_goods"), "baked goods");
        assert_eq!(clean_wordnet_lemma("galore(ip)"), "galore");
    }
}
