//! Word-level and BPE tokenizers plus the word → token-span map used to swap
//! whole completions into a sequence.
//!
//! Tokens carry no implicit spaces. In the BPE scheme the final piece of a
//! word ends in `</w>`, which is how decoding recovers word boundaries.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{ConceptRecord, Span};
use crate::error::{Error, Result};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
const END_OF_WORD: &str = "</w>";
const N_SPECIAL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Word,
    Bpe,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Word => "word",
            Scheme::Bpe => "bpe",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Scheme::Word),
            "bpe" => Ok(Scheme::Bpe),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

/// Bijective token ↔ id table. The three special tokens always take ids
/// 0, 1, 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_of: HashMap<String, usize>,
    token_of: Vec<String>,
}

impl Vocab {
    fn with_specials() -> Self {
        let mut v = Vocab {
            id_of: HashMap::new(),
            token_of: Vec::new(),
        };
        for s in [BOS, EOS, UNK] {
            v.push(s);
        }
        v
    }

    fn push(&mut self, token: &str) -> usize {
        if let Some(&id) = self.id_of.get(token) {
            return id;
        }
        let id = self.token_of.len();
        self.token_of.push(token.to_string());
        self.id_of.insert(token.to_string(), id);
        id
    }

    pub fn bos(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        1
    }

    pub fn unk(&self) -> usize {
        2
    }

    pub fn len(&self) -> usize {
        self.token_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_of.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.token_of.get(id).map(String::as_str)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, t) in self.token_of.iter().enumerate() {
            let _ = writeln!(out, "{id}\t{t}");
        }
        out
    }

    pub fn parse_tsv(text: &str, source: &str) -> Result<Self> {
        let mut v = Vocab {
            id_of: HashMap::new(),
            token_of: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(source, i + 1, "expected `id<TAB>token`"))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse(source, i + 1, "bad token id"))?;
            if id != v.len() {
                return Err(Error::parse(source, i + 1, format!("expected id {}, found {id}", v.len())));
            }
            if v.id_of.contains_key(tok) {
                return Err(Error::parse(source, i + 1, format!("duplicate token `{tok}`")));
            }
            v.push(tok);
        }
        if v.token_of.len() < N_SPECIAL || v.token_of[..N_SPECIAL] != [BOS, EOS, UNK] {
            return Err(Error::parse(source, 1, "vocab must start with <bos>, <eos>, <unk>"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    scheme: Scheme,
    vocab: Vocab,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
}

impl Tokenizer {
    /// Trains a vocabulary of at most `size` tokens (specials included) on
    /// whitespace-separated text.
    pub fn train<'a>(corpus: impl IntoIterator<Item = &'a str>, size: usize, scheme: Scheme) -> Result<Self> {
        if size < N_SPECIAL + 1 {
            return Err(Error::InvalidInput(format!(
                "vocab size {size} leaves no room beyond the {N_SPECIAL} special tokens"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for line in corpus {
            for w in line.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::InvalidInput("cannot train a tokenizer on an empty corpus".into()));
        }
        let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        match scheme {
            Scheme::Word => {
                let mut vocab = Vocab::with_specials();
                for (w, _) in words.iter().take(size - N_SPECIAL) {
                    vocab.push(w);
                }
                Ok(Self::from_parts(Scheme::Word, vocab, Vec::new()))
            }
            Scheme::Bpe => Ok(train_bpe(&words, size)),
        }
    }

    fn from_parts(scheme: Scheme, vocab: Vocab, merges: Vec<(String, String)>) -> Self {
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Self {
            scheme,
            vocab,
            merges,
            merge_rank,
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Token ids for a single whitespace-free word.
    pub fn encode_word(&self, word: &str) -> Vec<usize> {
        match self.scheme {
            Scheme::Word => vec![self.vocab.id(word).unwrap_or(self.vocab.unk())],
            Scheme::Bpe => {
                let mut symbols = word_symbols(word);
                loop {
                    let best = symbols
                        .windows(2)
                        .enumerate()
                        .filter_map(|(i, w)| {
                            self.merge_rank
                                .get(&(w[0].clone(), w[1].clone()))
                                .map(|&r| (r, i))
                        })
                        .min();
                    let Some((_, i)) = best else { break };
                    let right = symbols.remove(i + 1);
                    symbols[i].push_str(&right);
                }
                symbols
                    .iter()
                    .map(|s| self.vocab.id(s).unwrap_or(self.vocab.unk()))
                    .collect()
            }
        }
    }

    /// Concatenated ids for a sequence of words (which may themselves
    /// contain spaces), plus the id range each word occupies.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> (Vec<usize>, Vec<Span>) {
        let mut ids = Vec::new();
        let mut spans = Vec::with_capacity(words.len());
        for w in words {
            let start = ids.len();
            for part in w.as_ref().split_whitespace() {
                ids.extend(self.encode_word(part));
            }
            spans.push((start, ids.len()));
        }
        (ids, spans)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let words: Vec<&str> = text.split_whitespace().collect();
        self.encode_words(&words).0
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let tok = |id: usize| self.vocab.token(id).unwrap_or(UNK);
        match self.scheme {
            Scheme::Word => ids.iter().map(|&i| tok(i)).collect::<Vec<_>>().join(" "),
            Scheme::Bpe => {
                let mut out = String::new();
                let mut at_boundary = true;
                for &id in ids {
                    let t = tok(id);
                    if at_boundary && !out.is_empty() {
                        out.push(' ');
                    }
                    match t.strip_suffix(END_OF_WORD) {
                        Some(stem) => {
                            out.push_str(stem);
                            at_boundary = true;
                        }
                        None => {
                            out.push_str(t);
                            at_boundary = id < N_SPECIAL;
                        }
                    }
                }
                out
            }
        }
    }

    /// Writes `vocab.tsv` and `merges.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("vocab.tsv"), self.vocab.to_tsv())?;
        let mut m = format!("scheme\t{}\n", self.scheme.as_str());
        for (a, b) in &self.merges {
            let _ = writeln!(m, "{a} {b}");
        }
        fs::write(dir.join("merges.txt"), m)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vpath = dir.join("vocab.tsv");
        let mpath = dir.join("merges.txt");
        let vtext = fs::read_to_string(&vpath).map_err(|_| Error::MissingFile(vpath.clone()))?;
        let vocab = Vocab::parse_tsv(&vtext, &vpath.display().to_string())?;
        let mtext = fs::read_to_string(&mpath).map_err(|_| Error::MissingFile(mpath.clone()))?;
        let msrc = mpath.display().to_string();
        let mut lines = mtext.lines();
        let scheme: Scheme = lines
            .next()
            .and_then(|l| l.strip_prefix("scheme\t"))
            .ok_or_else(|| Error::parse(&msrc, 1, "expected `scheme<TAB>word|bpe` header"))?
            .parse()?;
        let mut merges = Vec::new();
        for (i, l) in lines.enumerate() {
            let (a, b) = l
                .split_once(' ')
                .ok_or_else(|| Error::parse(&msrc, i + 2, "expected `left right`"))?;
            merges.push((a.to_string(), b.to_string()));
        }
        Ok(Self::from_parts(scheme, vocab, merges))
    }
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

/// Standard BPE: start from characters, repeatedly merge the most frequent
/// adjacent pair (ties broken lexicographically) until the vocabulary is
/// full or no pair occurs at least twice.
fn train_bpe(words: &[(&str, usize)], size: usize) -> Tokenizer {
    let mut symbols: Vec<(Vec<String>, usize)> =
        words.iter().map(|(w, c)| (word_symbols(w), *c)).collect();

    let mut alphabet: HashMap<&str, usize> = HashMap::new();
    for (syms, c) in &symbols {
        for s in syms {
            *alphabet.entry(s.as_str()).or_default() += c;
        }
    }
    let mut alphabet: Vec<(&str, usize)> = alphabet.into_iter().collect();
    alphabet.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut vocab = Vocab::with_specials();
    for (s, _) in alphabet.iter().take(size - N_SPECIAL) {
        vocab.push(s);
    }

    let mut merges = Vec::new();
    while vocab.len() < size {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, c) in &symbols {
            for w in syms.windows(2) {
                if vocab.id(&w[0]).is_some() && vocab.id(&w[1]).is_some() {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
                }
            }
        }
        let best = pairs
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some(((a, b), count)) = best else { break };
        if count < 2 {
            break;
        }
        let (a, b) = (a.to_string(), b.to_string());
        let merged = format!("{a}{b}");
        for (syms, _) in symbols.iter_mut() {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == a && syms[i + 1] == b {
                    syms[i] = merged.clone();
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        vocab.push(&merged);
        merges.push((a, b));
    }
    Tokenizer::from_parts(Scheme::Bpe, vocab, merges)
}

/// Precomputed word → token ids for every target and completion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompletionMap {
    spans: BTreeMap<String, Vec<usize>>,
}

impl CompletionMap {
    pub fn build<'a>(tok: &Tokenizer, records: impl IntoIterator<Item = &'a ConceptRecord>) -> Self {
        let mut spans = BTreeMap::new();
        for r in records {
            for w in std::iter::once(&r.original).chain(&r.completions) {
                if !spans.contains_key(w) {
                    spans.insert(w.clone(), tok.encode(w));
                }
            }
        }
        Self { spans }
    }

    pub fn get(&self, word: &str) -> Result<&[usize]> {
        self.spans
            .get(word)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingCompletion(word.to_string()))
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.spans.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (w, ids) in &self.spans {
            let ids: Vec<String> = ids.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{w}\t{}", ids.join(","));
        }
        out
    }

    pub fn parse_tsv(text: &str, source: &str) -> Result<Self> {
        let mut spans = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (w, ids) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(source, i + 1, "expected `word<TAB>ids`"))?;
            let ids = ids
                .split(',')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(source, i + 1, "bad token id list"))?;
            if ids.is_empty() {
                return Err(Error::parse(source, i + 1, "empty token span"));
            }
            spans.insert(w.to_string(), ids);
        }
        Ok(Self { spans })
    }
}

/// Replaces `tokens[start..end]` with the completion's span. The result may
/// be longer or shorter than the input.
pub fn substitute_span(tokens: &[usize], (start, end): Span, completion: &str, cmap: &CompletionMap) -> Result<Vec<usize>> {
    if !(start <= end && end <= tokens.len()) {
        return Err(Error::InvalidInput(format!(
            "span ({start}, {end}) out of range for {} tokens",
            tokens.len()
        )));
    }
    let repl = cmap.get(completion)?;
    let mut out = Vec::with_capacity(tokens.len() - (end - start) + repl.len());
    out.extend_from_slice(&tokens[..start]);
    out.extend_from_slice(repl);
    out.extend_from_slice(&tokens[end..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_vocab_minimal() {
        let t = Tokenizer::train(["a b a"], 5, Scheme::Word).unwrap();
        assert_eq!(t.vocab_size(), 5);
        assert_eq!(t.vocab().token(3), Some("a"));
        assert_eq!(t.vocab().token(4), Some("b"));
        assert_eq!(t.encode("a c"), vec![3, t.vocab().unk()]);
    }

    #[test]
    fn empty_corpus_and_tiny_size_rejected() {
        assert!(Tokenizer::train(["  ", ""], 10, Scheme::Word).is_err());
        assert!(Tokenizer::train(["a"], 3, Scheme::Bpe).is_err());
    }

    #[test]
    fn bpe_first_merge() {
        let t = Tokenizer::train(["aaab"], 20, Scheme::Bpe).unwrap();
        assert_eq!(t.merges()[0], ("a".to_string(), "a".to_string()));
    }

    #[test]
    fn bpe_decodes_word_boundaries() {
        let t = Tokenizer::train(["baked goods and more baked goods"], 12, Scheme::Bpe).unwrap();
        let ids = t.encode("baked goods");
        assert!(ids.len() >= 2);
        assert_eq!(t.decode(&ids), "baked goods");
    }

    #[test]
    fn substitution_grows_and_shrinks() {
        let t = Tokenizer::train(["i baked a cake", "baked goods"], 50, Scheme::Bpe).unwrap();
        let mut cmap = CompletionMap::default();
        cmap.spans.insert("cake".into(), t.encode("cake"));
        cmap.spans.insert("baked goods".into(), t.encode("baked goods"));
        let seq = t.encode("i baked a cake");
        let (s, e) = (seq.len() - cmap.get("cake").unwrap().len(), seq.len());
        let out = substitute_span(&seq, (s, e), "baked goods", &cmap).unwrap();
        let grow = cmap.get("baked goods").unwrap().len() as isize - (e - s) as isize;
        assert_eq!(out.len() as isize, seq.len() as isize + grow);
        assert_eq!(t.decode(&out), "i baked a baked goods");
        assert!(matches!(
            substitute_span(&seq, (s, e), "pie", &cmap),
            Err(Error::MissingCompletion(_))
        ));
    }

    #[test]
    fn vocab_file_validation() {
        assert!(Vocab::parse_tsv("0\t<bos>\n1\t<eos>\n2\t<unk>\n3\ta\n", "v").is_ok());
        assert!(Vocab::parse_tsv("0\t<bos>\n2\t<eos>\n", "v").is_err());
        assert!(Vocab::parse_tsv("0\t<bos>\n1\t<eos>\n2\t<unk>\n3\ta\n4\ta\n", "v").is_err());
        assert!(Vocab::parse_tsv("0\ta\n1\t<eos>\n2\t<unk>\n", "v").is_err());
    }
}
