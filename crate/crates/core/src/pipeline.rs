//! The end-to-end commands behind the `ncp` binary. Each takes a parsed
//! [`RunConfig`] and reads/writes under its output directory:
//!
//! ```text
//! out/<domain>/manifest.json         split manifest
//! out/<domain>/<dataset>/<split>.jsonl
//! out/tokenizer/{vocab.tsv,merges.txt,completions.tsv}
//! out/checkpoints/<variant>.ckpt     `/` in ids becomes `__`
//! out/logs/<variant>.jsonl
//! out/reports/...
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::concept_client::ConceptClient;
use crate::config::RunConfig;
use crate::dataset::{
    AnnotatedDetector, ConceptRecord, LexiconDetector, NounDetector, Objective, Source, SplitManifest, SplitName,
    Splits, Variant, augment, augmented_key, build_records, inflate_matched, inflated_key, records_key,
    resolve_variant, split, variant_registry,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    Metric, PerplexityResult, RecordScore, best_by_perplexity, best_by_ratio, build_transfer_matrices, inspect_topk,
    render_best, render_matrices, render_matrices_csv, results_jsonl, score_records,
};
use crate::lexicon::{Level, Lexicon};
use crate::model::{ModelConfig, ModelState};
use crate::text::split_sentence;
use crate::tokenizer::{CompletionMap, Tokenizer};
use crate::training::{Encoder, GradCheckReport, LossKind, grad_check, train, write_log};

pub const GRADCHECK_LIMIT: f64 = 1e-5;

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn domain_dir(&self, domain: &str) -> PathBuf {
        self.root.join(domain)
    }

    pub fn manifest(&self, domain: &str) -> PathBuf {
        self.domain_dir(domain).join("manifest.json")
    }

    pub fn tokenizer_dir(&self) -> PathBuf {
        self.root.join("tokenizer")
    }

    pub fn completions(&self) -> PathBuf {
        self.tokenizer_dir().join("completions.tsv")
    }

    pub fn checkpoint(&self, variant: &Variant) -> PathBuf {
        self.root.join("checkpoints").join(format!("{}.ckpt", file_stem(variant)))
    }

    pub fn log(&self, variant: &Variant) -> PathBuf {
        self.root.join("logs").join(format!("{}.jsonl", file_stem(variant)))
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn file_stem(v: &Variant) -> String {
    v.to_string().replace('/', "__")
}

/// Domains to operate on: the `--domain` filter if given, else all.
pub fn select_domains(cfg: &RunConfig, only: Option<&str>) -> Result<Vec<String>> {
    let all = cfg.domains();
    match only {
        None => Ok(all),
        Some(d) if all.iter().any(|x| x == d) => Ok(vec![d.to_string()]),
        Some(d) => Err(Error::Config(format!(
            "unknown domain `{d}` (configured: {})",
            all.join(", ")
        ))),
    }
}

/// Variants to operate on: `--variant` if given, else `run.variants`
/// (`all` expands to the full registry of every domain).
pub fn select_variants(cfg: &RunConfig, only: Option<&str>) -> Result<Vec<Variant>> {
    let domains = cfg.domains();
    let ids: Vec<String> = match only {
        Some(id) => vec![id.to_string()],
        None => cfg.variants.clone(),
    };
    let mut out = BTreeSet::new();
    for id in ids {
        if id == "all" {
            out.extend(domains.iter().flat_map(|d| variant_registry(d)));
        } else {
            out.insert(resolve_variant(&id, &domains)?);
        }
    }
    Ok(out.into_iter().collect())
}

pub fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    Ok(text
        .lines()
        .map(split_sentence)
        .filter(|s| !s.is_empty())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractSummary {
    pub domain: String,
    pub sentences: usize,
    /// (dataset key, train, val, test record counts)
    pub datasets: Vec<(String, usize, usize, usize)>,
}

fn summarize(domain: &str, sentences: usize, m: &SplitManifest) -> ExtractSummary {
    ExtractSummary {
        domain: domain.to_string(),
        sentences,
        datasets: m
            .datasets
            .iter()
            .map(|(k, f)| (k.clone(), f.train.records, f.val.records, f.test.records))
            .collect(),
    }
}

/// Concept extraction for every (level, source) combination plus the
/// no-concept records, split by sentence, one manifest per domain.
pub fn cmd_extract(cfg: &RunConfig, domains: &[String]) -> Result<Vec<ExtractSummary>> {
    let lex = Lexicon::load(&cfg.lexicon, cfg.lexicon_format)?;
    let client = match &cfg.service {
        Some(ep) => Some(ConceptClient::connect(ep, cfg.client.clone())?),
        None => None,
    };
    if client.is_none() {
        return Err(Error::Config(
            "context-aware extraction needs concept_service.url (or CONCEPT_SERVICE_URL)".into(),
        ));
    }
    let lex_det = LexiconDetector::new(&lex);
    let annotated;
    let detector: &dyn NounDetector = match &cfg.annotations {
        Some(p) => {
            annotated = AnnotatedDetector::load(p, LexiconDetector::new(&lex))?;
            &annotated
        }
        None => &lex_det,
    };
    let layout = Layout::new(&cfg.out_dir);
    let mut summaries = Vec::new();
    for domain in domains {
        let sentences = read_corpus(&cfg.corpora[domain])?;
        let dir = layout.domain_dir(domain);
        let mut manifest = SplitManifest::new(domain.clone(), &cfg.split);
        let mut jobs: Vec<(Option<Level>, Source)> = Vec::new();
        for level in Level::ALL {
            for source in [Source::ContextFree, Source::ContextAware] {
                jobs.push((Some(level), source));
            }
        }
        jobs.push((None, Source::NoConcept));
        for (level, source) in jobs {
            let records = build_records(
                &sentences,
                detector,
                level.unwrap_or(Level::Synonym),
                source,
                &lex,
                client.as_ref(),
            )?;
            let parts = split(&records, &cfg.split)?;
            manifest.add_dataset(&dir, &records_key(level, source), &parts)?;
        }
        manifest.save(&layout.manifest(domain))?;
        log::info!("{domain}: extracted {} dataset(s)", manifest.datasets.len());
        summaries.push(summarize(domain, sentences.len(), &manifest));
    }
    Ok(summaries)
}

fn load_split_set(m: &SplitManifest, dir: &Path, key: &str) -> Result<Splits> {
    Ok(Splits {
        train: m.load_split(dir, key, SplitName::Train)?,
        val: m.load_split(dir, key, SplitName::Val)?,
        test: m.load_split(dir, key, SplitName::Test)?,
    })
}

fn map_splits(s: &Splits, f: impl Fn(&[ConceptRecord]) -> Result<Vec<ConceptRecord>>) -> Result<Splits> {
    Ok(Splits {
        train: f(&s.train)?,
        val: f(&s.val)?,
        test: f(&s.test)?,
    })
}

/// Derived datasets (augmented per level and source, inflated per level),
/// then the shared tokenizer and completion map over every configured
/// domain.
pub fn cmd_augment(cfg: &RunConfig, domains: &[String]) -> Result<Vec<ExtractSummary>> {
    let layout = Layout::new(&cfg.out_dir);
    let mut summaries = Vec::new();
    for domain in domains {
        let dir = layout.domain_dir(domain);
        let mut manifest = SplitManifest::load(&layout.manifest(domain))?;
        let plain = load_split_set(&manifest, &dir, &records_key(None, Source::NoConcept))?;
        for level in Level::ALL {
            for source in [Source::ContextFree, Source::ContextAware] {
                let base = load_split_set(&manifest, &dir, &records_key(Some(level), source))?;
                let aug = map_splits(&base, |r| Ok(augment(r)))?;
                manifest.add_dataset(&dir, &augmented_key(level, source), &aug)?;
            }
            let reference = load_split_set(&manifest, &dir, &records_key(Some(level), Source::ContextFree))?;
            let inflated = Splits {
                train: inflate_matched(&plain.train, &reference.train)?,
                val: inflate_matched(&plain.val, &reference.val)?,
                test: inflate_matched(&plain.test, &reference.test)?,
            };
            manifest.add_dataset(&dir, &inflated_key(level), &inflated)?;
        }
        manifest.save(&layout.manifest(domain))?;
        let sentences = manifest.sentences.train + manifest.sentences.val + manifest.sentences.test;
        summaries.push(summarize(domain, sentences, &manifest));
    }
    build_tokenizer(cfg, &layout)?;
    Ok(summaries)
}

fn all_records(cfg: &RunConfig, layout: &Layout) -> Result<Vec<ConceptRecord>> {
    let mut out = Vec::new();
    for domain in cfg.domains() {
        let dir = layout.domain_dir(&domain);
        let m = SplitManifest::load(&layout.manifest(&domain))?;
        for key in m.datasets.keys() {
            for split in SplitName::ALL {
                out.extend(m.load_split(&dir, key, split)?);
            }
        }
    }
    Ok(out)
}

fn build_tokenizer(cfg: &RunConfig, layout: &Layout) -> Result<(Tokenizer, CompletionMap)> {
    let records = all_records(cfg, layout)?;
    let mut lines: BTreeSet<String> = records.iter().map(ConceptRecord::spaced_words).collect();
    lines.extend(records.iter().flat_map(|r| r.completions.iter().cloned()));
    let tok = Tokenizer::train(lines.iter().map(String::as_str), cfg.vocab_size, cfg.scheme)?;
    let cmap = CompletionMap::build(&tok, &records);
    tok.save(&layout.tokenizer_dir())?;
    fs::write(layout.completions(), cmap.to_tsv())?;
    log::info!("tokenizer: {} tokens, {} mapped words", tok.vocab_size(), cmap.len());
    Ok((tok, cmap))
}

pub fn load_tokenizer(layout: &Layout) -> Result<(Tokenizer, CompletionMap)> {
    let tok = Tokenizer::load(&layout.tokenizer_dir())?;
    let path = layout.completions();
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingFile(path.clone()))?;
    let cmap = CompletionMap::parse_tsv(&text, &path.display().to_string())?;
    Ok((tok, cmap))
}

pub fn model_config(cfg: &RunConfig, tok: &Tokenizer) -> ModelConfig {
    ModelConfig {
        vocab_size: tok.vocab_size(),
        ..cfg.model.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub variant: String,
    pub checkpoint: PathBuf,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
}

/// Trains each variant from the same seeded initialization and writes its
/// checkpoint and log. `base` stores the initialization untouched.
pub fn cmd_train(cfg: &RunConfig, variants: &[Variant]) -> Result<Vec<TrainSummary>> {
    let layout = Layout::new(&cfg.out_dir);
    let (tok, cmap) = load_tokenizer(&layout)?;
    let enc = Encoder::new(&tok, &cmap);
    let mut out = Vec::new();
    for variant in variants {
        let init = ModelState::init(model_config(cfg, &tok))?;
        let (state, log) = match variant {
            Variant::Base => (init, Vec::new()),
            Variant::Trained(spec) => {
                let manifest = SplitManifest::load(&layout.manifest(&spec.domain))?;
                train(init, &manifest, &layout.domain_dir(&spec.domain), variant, &enc, &cfg.train)?
            }
        };
        let ckpt = layout.checkpoint(variant);
        state.save(&ckpt)?;
        write_log(&layout.log(variant), &log)?;
        let last = |split: &str| log.iter().rev().find(|e| e.split == split).map(|e| e.loss);
        log::info!("trained {variant}");
        out.push(TrainSummary {
            variant: variant.to_string(),
            checkpoint: ckpt,
            final_train_loss: last("train"),
            final_val_loss: last("val"),
        });
    }
    Ok(out)
}

/// The annotated test file used for a model's NCP perplexity.
pub fn ncp_eval_key(variant: &Variant) -> String {
    match variant {
        Variant::Base => records_key(Some(Level::Synonym), Source::ContextFree),
        Variant::Trained(spec) => match (spec.objective, spec.source) {
            (Objective::NtpBaseline, _) | (_, None) => records_key(Some(spec.level), Source::ContextFree),
            (_, Some(s)) => records_key(Some(spec.level), s),
        },
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
struct ScoreLine<'a> {
    model_id: &'a str,
    domain: &'a str,
    metric: Metric,
    #[serde(flatten)]
    score: RecordScore,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub results: Vec<PerplexityResult>,
    pub reports: Vec<PathBuf>,
}

/// Scores every selected checkpoint on every selected domain's test split
/// under both metrics, then writes result lines, per-record score dumps,
/// transfer matrices, best-model summaries and, if prefixes are configured,
/// top-k inspections.
pub fn cmd_eval(cfg: &RunConfig, variants: &[Variant], domains: &[String]) -> Result<EvalOutput> {
    let layout = Layout::new(&cfg.out_dir);
    let (tok, cmap) = load_tokenizer(&layout)?;
    let enc = Encoder::new(&tok, &cmap);
    let mut models = Vec::new();
    for v in variants {
        let path = layout.checkpoint(v);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        models.push((v, ModelState::load(&path)?));
    }
    let mut tests = Vec::new();
    for d in domains {
        let m = SplitManifest::load(&layout.manifest(d))?;
        tests.push((d, m));
    }

    let mut results = Vec::new();
    let mut dump = String::new();
    for (v, state) in &models {
        for (domain, manifest) in &tests {
            let dir = layout.domain_dir(domain);
            for metric in [Metric::NtpPpl, Metric::NcpPpl] {
                let key = match metric {
                    Metric::NtpPpl => records_key(None, Source::NoConcept),
                    Metric::NcpPpl => ncp_eval_key(v),
                };
                let records = manifest.load_split(&dir, &key, SplitName::Test)?;
                let scores = score_records(state, &records, metric, &enc)?;
                let id = v.to_string();
                for s in &scores {
                    dump.push_str(&serde_json::to_string(&ScoreLine {
                        model_id: &id,
                        domain,
                        metric,
                        score: *s,
                    })?);
                    dump.push('\n');
                }
                results.push(PerplexityResult::from_scores(v, domain, metric, &scores)?);
            }
        }
    }

    let dir = layout.reports();
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text)?;
        written.push(p);
        Ok(())
    };
    put("perplexity.jsonl", &results_jsonl(&results)?)?;
    put("scores.jsonl", &dump)?;
    let matrices = build_transfer_matrices(&results)?;
    put("transfer.txt", &render_matrices(&matrices))?;
    put("transfer.csv", &render_matrices_csv(&matrices))?;
    put("best.txt", &render_best(&best_by_ratio(&matrices), &best_by_perplexity(&results)))?;
    if !cfg.prefixes.is_empty() {
        let mut text = String::new();
        for (v, state) in &models {
            text.push_str(&render_topk(state, &v.to_string(), &cfg.prefixes, cfg.top_k, &tok)?);
        }
        put("topk.txt", &text)?;
    }
    Ok(EvalOutput {
        results,
        reports: written,
    })
}

pub fn render_topk(state: &ModelState, label: &str, prefixes: &[String], k: usize, tok: &Tokenizer) -> Result<String> {
    let mut text = String::new();
    for p in prefixes {
        let _ = writeln!(text, "{label} | {p}");
        for (i, (w, prob)) in inspect_topk(state, p, k, tok)?.iter().enumerate() {
            let _ = writeln!(text, "  {:>2}. {w:<16} {prob:.6}", i + 1);
        }
    }
    Ok(text)
}

/// Top-k next tokens for each prefix under each variant's checkpoint.
pub fn cmd_inspect(cfg: &RunConfig, variants: &[Variant], prefixes: &[String]) -> Result<String> {
    if prefixes.is_empty() {
        return Err(Error::Config("no prefixes given (eval.prefixes or --prefix)".into()));
    }
    let layout = Layout::new(&cfg.out_dir);
    let (tok, _) = load_tokenizer(&layout)?;
    let mut out = String::new();
    for v in variants {
        let path = layout.checkpoint(v);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let state = ModelState::load(&path)?;
        out.push_str(&render_topk(&state, &v.to_string(), prefixes, cfg.top_k, &tok)?);
    }
    Ok(out)
}

/// Toy-sized model (width 8, one layer) over the pipeline's vocabulary,
/// checked on the first few training records of the domain's context-free
/// synonym file under both objectives.
pub fn cmd_gradcheck(cfg: &RunConfig, domain: &str) -> Result<Vec<(LossKind, GradCheckReport)>> {
    let layout = Layout::new(&cfg.out_dir);
    let (tok, cmap) = load_tokenizer(&layout)?;
    let enc = Encoder::new(&tok, &cmap);
    let manifest = SplitManifest::load(&layout.manifest(domain))?;
    let records = manifest.load_split(
        &layout.domain_dir(domain),
        &records_key(Some(Level::Synonym), Source::ContextFree),
        SplitName::Train,
    )?;
    let state = ModelState::init(ModelConfig {
        vocab_size: tok.vocab_size(),
        context_len: cfg.model.context_len,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        seed: cfg.seed,
    })?;
    let mut picked: Vec<&ConceptRecord> = records.iter().filter(|r| r.completions.len() > 1).collect();
    if picked.is_empty() {
        picked = records.iter().collect();
    }
    picked.truncate(cfg.gradcheck_records);
    if picked.is_empty() {
        return Err(Error::InvalidInput(format!("no training records for `{domain}`")));
    }
    let mut out = Vec::new();
    for kind in [LossKind::Ntp, LossKind::Ncp] {
        let mut worst: Option<GradCheckReport> = None;
        for r in &picked {
            let rep = grad_check(&state, r, kind, &enc)?;
            if worst.as_ref().is_none_or(|w| rep.max_rel_error > w.max_rel_error) {
                worst = Some(rep);
            }
        }
        out.push((kind, worst.expect("at least one record")));
    }
    Ok(out)
}
