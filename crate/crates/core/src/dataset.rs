//! Concept-annotated training records and the files built from them.
//!
//! A [`ConceptRecord`] is one sentence with one marked target noun and the
//! set of completions that count as "the same concept" at that position.
//! From a corpus we build one record file per (level, source) pair plus the
//! `no_concept` file, then derive the augmented (one record per completion)
//! and inflated (original repeated to matched volume) files used for
//! training.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept_client::{ConceptClient, ConceptQuery};
use crate::error::{Error, Result};
use crate::lexicon::{normalize_word, Level, Lexicon};
use crate::text::{join_tokens, restore_case, split_sentence};

/// Half-open token range `[start, end)`.
pub type Span = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ContextFree,
    ContextAware,
    NoConcept,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::ContextFree => "context_free",
            Source::ContextAware => "context_aware",
            Source::NoConcept => "no_concept",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

mod level_or_none {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::lexicon::Level;

    pub fn serialize<S: Serializer>(level: &Option<Level>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(level.map_or("none", Level::as_str))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Level>, D::Error> {
        let s = String::deserialize(d)?;
        if s == "none" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub sentence: Vec<String>,
    pub target_span: Span,
    pub original: String,
    pub completions: BTreeSet<String>,
    #[serde(with = "level_or_none")]
    pub level: Option<Level>,
    pub source: Source,
}

impl ConceptRecord {
    pub fn no_concept(sentence: Vec<String>, span: Span) -> Result<Self> {
        check_span(&sentence, span)?;
        let original = sentence[span.0..span.1].join(" ");
        let rec = ConceptRecord {
            sentence,
            target_span: span,
            completions: BTreeSet::from([original.clone()]),
            original,
            level: None,
            source: Source::NoConcept,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidRecord(msg));
        check_span(&self.sentence, self.target_span)?;
        let (s, e) = self.target_span;
        let spelled = self.sentence[s..e].join(" ");
        if spelled != self.original {
            return bad(format!("span spells `{spelled}`, original is `{}`", self.original));
        }
        if !self.completions.contains(&self.original) {
            return bad(format!("completions do not contain original `{}`", self.original));
        }
        if self.completions.iter().any(|c| c.split(' ').any(str::is_empty)) {
            return bad("completion with empty word".into());
        }
        match (self.source, self.level) {
            (Source::NoConcept, None) => {
                if self.completions.len() != 1 {
                    return bad("no_concept record must have exactly the original as completion".into());
                }
            }
            (Source::NoConcept, Some(_)) => return bad("no_concept record carries a level".into()),
            (_, None) => return bad(format!("{} record without a level", self.source)),
            _ => {}
        }
        Ok(())
    }

    pub fn sentence_text(&self) -> String {
        join_tokens(&self.sentence)
    }

    /// Word tokens separated by single spaces, the form tokenizers train on.
    pub fn spaced_words(&self) -> String {
        self.sentence.join(" ")
    }

    /// Copy of this record with the target span rewritten to `completion`,
    /// which becomes the new original and only completion.
    pub fn retarget(&self, completion: &str) -> ConceptRecord {
        let (s, e) = self.target_span;
        let words: Vec<String> = completion.split(' ').map(str::to_string).collect();
        let mut sentence = Vec::with_capacity(self.sentence.len() - (e - s) + words.len());
        sentence.extend_from_slice(&self.sentence[..s]);
        let new_end = s + words.len();
        sentence.extend(words);
        sentence.extend_from_slice(&self.sentence[e..]);
        ConceptRecord {
            sentence,
            target_span: (s, new_end),
            original: completion.to_string(),
            completions: BTreeSet::from([completion.to_string()]),
            level: self.level,
            source: self.source,
        }
    }
}

fn check_span(sentence: &[String], (s, e): Span) -> Result<()> {
    if sentence.is_empty() {
        return Err(Error::InvalidRecord("empty sentence".into()));
    }
    if !(s < e && e <= sentence.len()) {
        return Err(Error::InvalidRecord(format!(
            "span ({s}, {e}) invalid for sentence of {} tokens",
            sentence.len()
        )));
    }
    Ok(())
}

/// Finds target nouns in a tokenized sentence.
pub trait NounDetector: Sync {
    fn detect(&self, sentence: &[String]) -> Vec<Span>;
}

/// Any run of tokens that is a lexicon lemma counts as a noun; longest match
/// wins, scanning left to right.
pub struct LexiconDetector<'a> {
    lex: &'a Lexicon,
    max_words: usize,
}

impl<'a> LexiconDetector<'a> {
    pub fn new(lex: &'a Lexicon) -> Self {
        Self {
            lex,
            max_words: lex.max_lemma_words().max(1),
        }
    }
}

impl NounDetector for LexiconDetector<'_> {
    fn detect(&self, sentence: &[String]) -> Vec<Span> {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < sentence.len() {
            let longest = (1..=self.max_words.min(sentence.len() - i))
                .rev()
                .find(|&n| self.lex.contains(&sentence[i..i + n].join(" ")));
            match longest {
                Some(n) => {
                    spans.push((i, i + n));
                    i += n;
                }
                None => i += 1,
            }
        }
        spans
    }
}

#[derive(Debug, Deserialize)]
struct Annotation {
    sentence: String,
    spans: Vec<Span>,
}

/// Hand-annotated spans keyed by sentence text; unannotated sentences fall
/// through to `fallback`.
pub struct AnnotatedDetector<D> {
    spans: HashMap<Vec<String>, Vec<Span>>,
    fallback: D,
}

impl<D: NounDetector> AnnotatedDetector<D> {
    pub fn new(spans: HashMap<Vec<String>, Vec<Span>>, fallback: D) -> Self {
        Self { spans, fallback }
    }

    /// Line-delimited `{"sentence": "...", "spans": [[s, e], ...]}`.
    pub fn load(path: &Path, fallback: D) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let mut spans = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let a: Annotation = serde_json::from_str(line)
                .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
            spans.insert(split_sentence(&a.sentence), a.spans);
        }
        Ok(Self::new(spans, fallback))
    }
}

impl<D: NounDetector> NounDetector for AnnotatedDetector<D> {
    fn detect(&self, sentence: &[String]) -> Vec<Span> {
        match self.spans.get(sentence) {
            Some(s) => s.clone(),
            None => self.fallback.detect(sentence),
        }
    }
}

/// Target spans in left-to-right order. Out-of-range spans and spans
/// overlapping an earlier one are dropped.
pub fn extract_targets(sentence: &[String], detector: &dyn NounDetector) -> Vec<Span> {
    let mut spans: Vec<Span> = detector
        .detect(sentence)
        .into_iter()
        .filter(|&(s, e)| s < e && e <= sentence.len())
        .collect();
    spans.sort();
    let mut out: Vec<Span> = Vec::with_capacity(spans.len());
    for sp in spans {
        if out.last().is_none_or(|last| sp.0 >= last.1) {
            out.push(sp);
        }
    }
    out
}

/// Builds the record for one target under one extraction method.
/// Completions come back with the casing of the original word.
pub fn resolve_record(
    sentence: &[String],
    span: Span,
    level: Level,
    source: Source,
    lex: &Lexicon,
    client: Option<&ConceptClient>,
) -> Result<ConceptRecord> {
    let base = ConceptRecord::no_concept(sentence.to_vec(), span)?;
    if source == Source::NoConcept {
        return Ok(base);
    }
    let original = base.original.clone();
    let found: Vec<String> = match source {
        Source::ContextFree => lex.lookup(&original, level).iter().cloned().collect(),
        Source::ContextAware => {
            let client = client.ok_or_else(|| {
                Error::Config("context-aware extraction needs a concept service".into())
            })?;
            let q = ConceptQuery::new(base.sentence_text(), original.clone(), level)?;
            client.fetch_concepts(&q)?.into_iter().collect()
        }
        Source::NoConcept => unreachable!(),
    };
    let lower = normalize_word(&original);
    let mut completions = BTreeSet::from([original.clone()]);
    completions.extend(
        found
            .into_iter()
            .map(|w| normalize_word(&w))
            .filter(|w| !w.is_empty() && *w != lower)
            .map(|w| restore_case(&w, &original)),
    );
    let rec = ConceptRecord {
        completions,
        level: Some(level),
        source,
        ..base
    };
    rec.validate()?;
    Ok(rec)
}

/// Records for every target of every sentence, in corpus order then span
/// order. Resolution runs in parallel; output order does not depend on it.
pub fn build_records(
    sentences: &[Vec<String>],
    detector: &dyn NounDetector,
    level: Level,
    source: Source,
    lex: &Lexicon,
    client: Option<&ConceptClient>,
) -> Result<Vec<ConceptRecord>> {
    let jobs: Vec<(usize, Span)> = sentences
        .iter()
        .enumerate()
        .flat_map(|(i, s)| extract_targets(s, detector).into_iter().map(move |sp| (i, sp)))
        .collect();
    jobs.par_iter()
        .map(|&(i, sp)| resolve_record(&sentences[i], sp, level, source, lex, client))
        .collect()
}

/// One record per completion, each targeting that completion alone.
pub fn augment(records: &[ConceptRecord]) -> Vec<ConceptRecord> {
    records
        .iter()
        .flat_map(|r| {
            if r.completions.len() == 1 {
                vec![r.clone()]
            } else {
                r.completions.iter().map(|c| r.retarget(c)).collect()
            }
        })
        .collect()
}

/// Repeats each record `copies(record)` times with completions reset to the
/// original word.
pub fn inflate(records: &[ConceptRecord], copies: impl Fn(&ConceptRecord) -> usize) -> Vec<ConceptRecord> {
    inflate_by(records, |_, r| copies(r))
}

fn inflate_by(records: &[ConceptRecord], copies: impl Fn(usize, &ConceptRecord) -> usize) -> Vec<ConceptRecord> {
    records
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            let n = copies(i, r);
            let mut plain = r.clone();
            plain.completions = BTreeSet::from([r.original.clone()]);
            std::iter::repeat_n(plain, n)
        })
        .collect()
}

/// Inflates `plain` so each record is repeated as often as its counterpart
/// in `reference` has completions. The two lists must describe the same
/// targets in the same order.
pub fn inflate_matched(plain: &[ConceptRecord], reference: &[ConceptRecord]) -> Result<Vec<ConceptRecord>> {
    if plain.len() != reference.len() {
        return Err(Error::Mismatch(format!(
            "cannot match {} records against {}",
            plain.len(),
            reference.len()
        )));
    }
    for (i, (p, r)) in plain.iter().zip(reference).enumerate() {
        if p.sentence != r.sentence || p.target_span != r.target_span {
            return Err(Error::Mismatch(format!("record {i} targets differ between files")));
        }
    }
    Ok(inflate_by(plain, |i, _| reference[i].completions.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRequest {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<ConceptRecord>,
    pub val: Vec<ConceptRecord>,
    pub test: Vec<ConceptRecord>,
}

impl Splits {
    pub fn get(&self, split: SplitName) -> &[ConceptRecord] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

/// Sentence-disjoint split. Counts are in sentences: every record of a
/// sentence lands in the same split. Sentences are shuffled by `seed`;
/// within a split records keep corpus order.
pub fn split(records: &[ConceptRecord], req: &SplitRequest) -> Result<Splits> {
    let mut sentence_ids: HashMap<&[String], usize> = HashMap::new();
    let mut record_sentence = Vec::with_capacity(records.len());
    for r in records {
        let next = sentence_ids.len();
        record_sentence.push(*sentence_ids.entry(r.sentence.as_slice()).or_insert(next));
    }
    let available = sentence_ids.len();
    let mut remaining = available;
    for (name, want) in [("train", req.train), ("val", req.val), ("test", req.test)] {
        if want > remaining {
            return Err(Error::InsufficientRecords {
                split: name,
                requested: want,
                available: remaining,
            });
        }
        remaining -= want;
    }
    let mut order: Vec<usize> = (0..available).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(req.seed));
    let mut assignment = vec![None; available];
    for (rank, &sid) in order.iter().enumerate() {
        assignment[sid] = if rank < req.train {
            Some(SplitName::Train)
        } else if rank < req.train + req.val {
            Some(SplitName::Val)
        } else if rank < req.train + req.val + req.test {
            Some(SplitName::Test)
        } else {
            None
        };
    }
    let mut out = Splits::default();
    for (r, sid) in records.iter().zip(record_sentence) {
        match assignment[sid] {
            Some(SplitName::Train) => out.train.push(r.clone()),
            Some(SplitName::Val) => out.val.push(r.clone()),
            Some(SplitName::Test) => out.test.push(r.clone()),
            None => {}
        }
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[ConceptRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        r.validate()?;
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ConceptRecord>> {
    let file = fs::File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let src = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ConceptRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(&src, i + 1, e.to_string()))?;
        rec.validate()
            .map_err(|e| Error::parse(&src, i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub train: FileEntry,
    pub val: FileEntry,
    pub test: FileEntry,
}

impl DatasetFiles {
    pub fn get(&self, split: SplitName) -> &FileEntry {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Per-domain descriptor of every record file produced from one sentence
/// split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub domain: String,
    pub seed: u64,
    pub sentences: SplitCounts,
    pub datasets: BTreeMap<String, DatasetFiles>,
}

impl SplitManifest {
    pub fn new(domain: impl Into<String>, req: &SplitRequest) -> Self {
        Self {
            domain: domain.into(),
            seed: req.seed,
            sentences: SplitCounts {
                train: req.train,
                val: req.val,
                test: req.test,
            },
            datasets: BTreeMap::new(),
        }
    }

    /// Writes `splits` under `dir` as `<key>/<split>.jsonl` and registers
    /// them.
    pub fn add_dataset(&mut self, dir: &Path, key: &str, splits: &Splits) -> Result<()> {
        let entry = |name: SplitName| -> Result<FileEntry> {
            let rel = format!("{key}/{}.jsonl", name.as_str());
            let records = splits.get(name);
            write_records(&dir.join(&rel), records)?;
            Ok(FileEntry {
                path: rel,
                records: records.len(),
            })
        };
        let files = DatasetFiles {
            train: entry(SplitName::Train)?,
            val: entry(SplitName::Val)?,
            test: entry(SplitName::Test)?,
        };
        self.datasets.insert(key.to_string(), files);
        Ok(())
    }

    pub fn path_of(&self, dir: &Path, key: &str, split: SplitName) -> Result<PathBuf> {
        let files = self
            .datasets
            .get(key)
            .ok_or_else(|| Error::MissingFile(dir.join(key)))?;
        Ok(dir.join(&files.get(split).path))
    }

    pub fn load_split(&self, dir: &Path, key: &str, split: SplitName) -> Result<Vec<ConceptRecord>> {
        read_records(&self.path_of(dir, key, split)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks every registered file exists and holds the recorded number of
    /// lines.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (key, files) in &self.datasets {
            for split in SplitName::ALL {
                let e = files.get(split);
                let p = dir.join(&e.path);
                let text = fs::read_to_string(&p).map_err(|_| Error::MissingFile(p.clone()))?;
                let lines = text.lines().filter(|l| !l.trim().is_empty()).count();
                if lines != e.records {
                    return Err(Error::Mismatch(format!(
                        "{key}/{}: manifest says {} records, file has {lines}",
                        split.as_str(),
                        e.records
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Dataset key for a (level, source) record file.
pub fn records_key(level: Option<Level>, source: Source) -> String {
    match level {
        Some(l) => format!("{l}.{source}"),
        None => format!("none.{source}"),
    }
}

pub fn augmented_key(level: Level, source: Source) -> String {
    format!("augmented.{level}.{source}")
}

pub fn inflated_key(level: Level) -> String {
    format!("inflated.{level}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Objective {
    NtpBaseline,
    NcpLoss,
    NcpAugmentation,
}

impl Objective {
    fn tag(self) -> &'static str {
        match self {
            Objective::NtpBaseline => "ntp-baseline",
            Objective::NcpLoss => "ncp-loss",
            Objective::NcpAugmentation => "ncp-augmentation",
        }
    }
}

/// One trained model configuration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariantSpec {
    pub objective: Objective,
    pub level: Level,
    /// `None` only for the NTP baselines.
    pub source: Option<Source>,
    pub domain: String,
}

fn source_tag(s: Source) -> &'static str {
    match s {
        Source::ContextFree => "context-free",
        Source::ContextAware => "context-aware",
        Source::NoConcept => "no-concept",
    }
}

impl VariantSpec {
    /// Identifier without the training domain, e.g.
    /// `ncp-loss/synonym/context-free`.
    pub fn family(&self) -> String {
        match self.source {
            Some(s) => format!("{}/{}/{}", self.objective.tag(), self.level, source_tag(s)),
            None => format!("{}/{}", self.objective.tag(), self.level),
        }
    }

    /// The dataset this variant trains on.
    pub fn dataset_key(&self) -> String {
        match (self.objective, self.source) {
            (Objective::NtpBaseline, _) => inflated_key(self.level),
            (Objective::NcpLoss, Some(s)) => records_key(Some(self.level), s),
            (Objective::NcpAugmentation, Some(s)) => augmented_key(self.level, s),
            (_, None) => unreachable!("ncp variants always carry a source"),
        }
    }
}

/// A variant or the untrained base model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Base,
    Trained(VariantSpec),
}

impl Variant {
    pub fn family(&self) -> String {
        match self {
            Variant::Base => "base".into(),
            Variant::Trained(v) => v.family(),
        }
    }

    pub fn domain(&self) -> Option<&str> {
        match self {
            Variant::Base => None,
            Variant::Trained(v) => Some(&v.domain),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Base => f.write_str("base"),
            Variant::Trained(v) => write!(f, "{}/{}", v.family(), v.domain),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(id: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("malformed variant id `{id}`"));
        if id == "base" {
            return Ok(Variant::Base);
        }
        let parts: Vec<&str> = id.split('/').collect();
        let source = |s: &str| match s {
            "context-free" => Ok(Source::ContextFree),
            "context-aware" => Ok(Source::ContextAware),
            _ => Err(bad()),
        };
        let spec = match parts.as_slice() {
            ["ntp-baseline", level, domain] => VariantSpec {
                objective: Objective::NtpBaseline,
                level: level.parse().map_err(|_| bad())?,
                source: None,
                domain: domain.to_string(),
            },
            [obj @ ("ncp-loss" | "ncp-augmentation"), level, src, domain] => VariantSpec {
                objective: if *obj == "ncp-loss" {
                    Objective::NcpLoss
                } else {
                    Objective::NcpAugmentation
                },
                level: level.parse().map_err(|_| bad())?,
                source: Some(source(src)?),
                domain: domain.to_string(),
            },
            _ => return Err(bad()),
        };
        if spec.domain.is_empty() {
            return Err(bad());
        }
        Ok(Variant::Trained(spec))
    }
}

/// Every variant for `domain`: eight NCP variants, two NTP baselines and
/// the base sentinel.
pub fn variant_registry(domain: &str) -> Vec<Variant> {
    let mut out = Vec::new();
    for objective in [Objective::NcpLoss, Objective::NcpAugmentation] {
        for level in Level::ALL {
            for source in [Source::ContextAware, Source::ContextFree] {
                out.push(Variant::Trained(VariantSpec {
                    objective,
                    level,
                    source: Some(source),
                    domain: domain.to_string(),
                }));
            }
        }
    }
    for level in Level::ALL {
        out.push(Variant::Trained(VariantSpec {
            objective: Objective::NtpBaseline,
            level,
            source: None,
            domain: domain.to_string(),
        }));
    }
    out.push(Variant::Base);
    out
}

/// Parses `id` and checks it names a registered variant of one of `domains`.
pub fn resolve_variant(id: &str, domains: &[String]) -> Result<Variant> {
    let valid = || -> Vec<String> {
        let mut v: Vec<String> = domains
            .iter()
            .flat_map(|d| variant_registry(d))
            .map(|v| v.to_string())
            .collect();
        v.sort();
        v.dedup();
        v
    };
    match id.parse::<Variant>() {
        Ok(v) if v.domain().is_none_or(|d| domains.iter().any(|x| x == d)) => Ok(v),
        _ => Err(Error::UnknownVariant {
            id: id.to_string(),
            valid: valid(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        split_sentence(s)
    }

    fn cake_lex() -> Lexicon {
        Lexicon::parse_tsv(
            "cake\tsyn:pie,cookie\thyp:dessert,baked goods\nparty\tsyn:celebration\thyp:event\n",
            "t",
        )
        .unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn detects_single_noun() {
        let lex = cake_lex();
        let d = LexiconDetector::new(&lex);
        let s = toks("I baked a cake .");
        assert_eq!(extract_targets(&s, &d), vec![(3, 4)]);
    }

    #[test]
    fn zero_nouns() {
        let lex = cake_lex();
        let d = LexiconDetector::new(&lex);
        assert!(extract_targets(&toks("nothing to see here"), &d).is_empty());
    }

    #[test]
    fn longest_multiword_match_and_repeats() {
        let lex = Lexicon::parse_tsv("baked goods\tsyn:\thyp:food\ngoods\tsyn:wares\thyp:\n", "t").unwrap();
        let d = LexiconDetector::new(&lex);
        let s = toks("baked goods and goods and baked goods");
        assert_eq!(extract_targets(&s, &d), vec![(0, 2), (3, 4), (5, 7)]);
    }

    #[test]
    fn overlapping_annotations_are_pruned() {
        struct Fixed;
        impl NounDetector for Fixed {
            fn detect(&self, _: &[String]) -> Vec<Span> {
                vec![(2, 4), (0, 1), (3, 5), (1, 1), (4, 9)]
            }
        }
        assert_eq!(extract_targets(&toks("a b c d e f"), &Fixed), vec![(0, 1), (2, 4)]);
    }

    #[test]
    fn resolves_context_free_and_no_concept() {
        let lex = cake_lex();
        let s = toks("I baked a cake .");
        let r = resolve_record(&s, (3, 4), Level::Synonym, Source::ContextFree, &lex, None).unwrap();
        assert_eq!(r.completions, set(&["cake", "cookie", "pie"]));
        let r = resolve_record(&s, (3, 4), Level::Hypernym, Source::NoConcept, &lex, None).unwrap();
        assert_eq!(r.completions, set(&["cake"]));
        assert_eq!(r.level, None);
    }

    #[test]
    fn completions_follow_original_casing() {
        let lex = cake_lex();
        let s = toks("Cake is great .");
        let r = resolve_record(&s, (0, 1), Level::Synonym, Source::ContextFree, &lex, None).unwrap();
        assert_eq!(r.completions, set(&["Cake", "Cookie", "Pie"]));
    }

    #[test]
    fn context_aware_needs_client() {
        let lex = cake_lex();
        let s = toks("I baked a cake .");
        let err = resolve_record(&s, (3, 4), Level::Synonym, Source::ContextAware, &lex, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn augment_expands_per_completion() {
        let lex = cake_lex();
        let s = toks("I baked a cake .");
        let r = resolve_record(&s, (3, 4), Level::Hypernym, Source::ContextFree, &lex, None).unwrap();
        let out = augment(std::slice::from_ref(&r));
        let targets: Vec<_> = out.iter().map(|r| r.original.clone()).collect();
        assert_eq!(targets, ["baked goods", "cake", "dessert"]);
        assert_eq!(out[0].sentence, toks("I baked a baked goods ."));
        assert_eq!(out[0].target_span, (3, 5));
        for o in &out {
            o.validate().unwrap();
            assert_eq!(o.source, Source::ContextFree);
        }
        let single = ConceptRecord::no_concept(s, (3, 4)).unwrap();
        assert_eq!(augment(std::slice::from_ref(&single)), vec![single]);
    }

    #[test]
    fn inflate_repeats_original() {
        let lex = cake_lex();
        let s = toks("I baked a cake .");
        let plain = ConceptRecord::no_concept(s.clone(), (3, 4)).unwrap();
        let rich = resolve_record(&s, (3, 4), Level::Synonym, Source::ContextFree, &lex, None).unwrap();
        let out = inflate_matched(std::slice::from_ref(&plain), std::slice::from_ref(&rich)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|r| *r == plain));
        assert_eq!(inflate(std::slice::from_ref(&plain), |_| 1), vec![plain.clone()]);
        let other = ConceptRecord::no_concept(toks("a cake"), (1, 2)).unwrap();
        assert!(inflate_matched(&[other], &[rich]).is_err());
    }

    #[test]
    fn record_invariants_enforced() {
        let mut r = ConceptRecord::no_concept(toks("I baked a cake ."), (3, 4)).unwrap();
        r.completions.insert("pie".into());
        assert!(r.validate().is_err());
        let mut r2 = ConceptRecord::no_concept(toks("I baked a cake ."), (3, 4)).unwrap();
        r2.original = "pie".into();
        assert!(r2.validate().is_err());
        assert!(ConceptRecord::no_concept(toks("a b"), (1, 3)).is_err());
        assert!(ConceptRecord::no_concept(toks("a b"), (1, 1)).is_err());
    }

    #[test]
    fn record_json_shape() {
        let r = ConceptRecord::no_concept(toks("I baked a cake ."), (3, 4)).unwrap();
        let j = serde_json::to_string(&r).unwrap();
        assert_eq!(
            j,
            r#"{"sentence":["I","baked","a","cake","."],"target_span":[3,4],"original":"cake","completions":["cake"],"level":"none","source":"no_concept"}"#
        );
        let back: ConceptRecord = serde_json::from_str(&j).unwrap();
        assert_eq!(back, r);
    }

    fn distinct(n: usize) -> Vec<ConceptRecord> {
        (0..n)
            .map(|i| ConceptRecord::no_concept(vec![format!("w{i}"), "cake".into()], (1, 2)).unwrap())
            .collect()
    }

    #[test]
    fn minimal_split() {
        let s = split(&distinct(3), &SplitRequest { train: 1, val: 1, test: 1, seed: 0 }).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
    }

    #[test]
    fn split_shortfall_is_named() {
        let err = split(&distinct(3), &SplitRequest { train: 2, val: 1, test: 1, seed: 0 }).unwrap_err();
        match err {
            Error::InsufficientRecords { split, requested, available } => {
                assert_eq!((split, requested, available), ("test", 1, 0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_keeps_sentences_together() {
        let mut recs = Vec::new();
        for i in 0..20 {
            let s = vec![format!("w{i}"), "cake".into(), "pie".into()];
            recs.push(ConceptRecord::no_concept(s.clone(), (1, 2)).unwrap());
            recs.push(ConceptRecord::no_concept(s, (2, 3)).unwrap());
        }
        let req = SplitRequest { train: 10, val: 5, test: 5, seed: 9 };
        let s = split(&recs, &req).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (20, 10, 10));
        let sentences = |v: &[ConceptRecord]| v.iter().map(|r| r.sentence.clone()).collect::<BTreeSet<_>>();
        assert!(sentences(&s.train).is_disjoint(&sentences(&s.test)));
        assert!(sentences(&s.train).is_disjoint(&sentences(&s.val)));
        assert_eq!(split(&recs, &req).unwrap(), s);
    }

    #[test]
    fn variant_ids_round_trip() {
        let reg = variant_registry("demo");
        assert_eq!(reg.len(), 11);
        for v in &reg {
            assert_eq!(&v.to_string().parse::<Variant>().unwrap(), v);
        }
        let v: Variant = "ncp-loss/synonym/context-free/demo".parse().unwrap();
        match &v {
            Variant::Trained(s) => assert_eq!(s.dataset_key(), "synonym.context_free"),
            Variant::Base => panic!(),
        }
        assert!(resolve_variant("ncp-loss/synonym/context-free/other", &["demo".into()]).is_err());
        match resolve_variant("bogus", &["demo".into()]).unwrap_err() {
            Error::UnknownVariant { valid, .. } => assert_eq!(valid.len(), 11),
            e => panic!("{e:?}"),
        }
    }
}
