//! Perplexity, cross-domain transfer ratios, concept-set diagnostics and
//! top-k inspection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ConceptRecord, Variant};
use crate::error::{Error, Result};
use crate::model::{ModelState, log_softmax, softmax};
use crate::text::split_sentence;
use crate::tokenizer::Tokenizer;
use crate::training::{Encoder, LossKind, record_loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    NtpPpl,
    NcpPpl,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::NtpPpl => "ntp_ppl",
            Metric::NcpPpl => "ncp_ppl",
        }
    }

    /// The metric transfer ratios use for a model family: NTP for the
    /// baselines and the base model, NCP for everything else.
    pub fn for_family(family: &str) -> Self {
        if family == "base" || family.starts_with("ntp-baseline") {
            Metric::NtpPpl
        } else {
            Metric::NcpPpl
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ntp_ppl" => Ok(Metric::NtpPpl),
            "ncp_ppl" => Ok(Metric::NcpPpl),
            _ => Err(Error::InvalidInput(format!("unknown metric `{s}`"))),
        }
    }
}

/// Summed negative log-likelihood and scored-position count of one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub index: usize,
    pub nll: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityResult {
    pub model_id: String,
    pub family: String,
    /// Training domain of the model; `None` for the base model.
    pub trained_on: Option<String>,
    /// Evaluation domain.
    pub domain: String,
    pub metric: Metric,
    pub value: f64,
    pub nll: f64,
    pub token_count: usize,
}

impl PerplexityResult {
    pub fn from_scores(model: &Variant, domain: &str, metric: Metric, scores: &[RecordScore]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidInput(format!("empty evaluation split for `{domain}`")));
        }
        let nll: f64 = scores.iter().map(|s| s.nll).sum();
        let token_count: usize = scores.iter().map(|s| s.tokens).sum();
        Ok(Self {
            model_id: model.to_string(),
            family: model.family(),
            trained_on: model.domain().map(str::to_string),
            domain: domain.to_string(),
            metric,
            value: (nll / token_count as f64).exp(),
            nll,
            token_count,
        })
    }
}

fn record_score(state: &ModelState, record: &ConceptRecord, metric: Metric, enc: &Encoder, index: usize) -> Result<RecordScore> {
    let e = enc.encode(record)?;
    if e.ids.len() < 2 {
        return Err(Error::InvalidRecord("sentence has no tokens to score".into()));
    }
    let trace = state.forward(&e.ids)?;
    let (start, end) = e.span;
    let mut nll = 0.0;
    for i in 1..e.ids.len() {
        if metric == Metric::NcpPpl && (start..end).contains(&i) {
            continue;
        }
        nll -= log_softmax(trace.logits.row(i - 1))[e.ids[i]];
    }
    if metric == Metric::NcpPpl {
        nll += record_loss(state, record, LossKind::Ncp, enc)?.total;
    }
    Ok(RecordScore {
        index,
        nll,
        tokens: e.ids.len() - 1,
    })
}

/// Per-record scores in record order. Every token after `<bos>` is scored.
/// Under `ncp_ppl` the target span is replaced by the record's NCP loss and
/// still counts as its original token length.
pub fn score_records(state: &ModelState, records: &[ConceptRecord], metric: Metric, enc: &Encoder) -> Result<Vec<RecordScore>> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| record_score(state, r, metric, enc, i))
        .collect()
}

pub fn perplexity(
    state: &ModelState,
    records: &[ConceptRecord],
    metric: Metric,
    enc: &Encoder,
    model: &Variant,
    domain: &str,
) -> Result<PerplexityResult> {
    if records.is_empty() {
        return Err(Error::InvalidInput(format!("empty evaluation split for `{domain}`")));
    }
    let scores = score_records(state, records, metric, enc)?;
    PerplexityResult::from_scores(model, domain, metric, &scores)
}

/// Out-of-domain perplexity divided by the in-domain one; lower is more
/// robust.
pub fn transfer_ratio(out_of_domain: &PerplexityResult, in_domain: &PerplexityResult) -> Result<f64> {
    if out_of_domain.metric != in_domain.metric {
        return Err(Error::Mismatch(format!(
            "metrics differ: {} vs {}",
            out_of_domain.metric, in_domain.metric
        )));
    }
    if out_of_domain.domain != in_domain.domain {
        return Err(Error::Mismatch(format!(
            "evaluation domains differ: {} vs {}",
            out_of_domain.domain, in_domain.domain
        )));
    }
    ratio(out_of_domain.value, in_domain.value)
}

pub fn ratio(out_of_domain: f64, in_domain: f64) -> Result<f64> {
    if !(in_domain > 0.0 && in_domain.is_finite() && out_of_domain.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "cannot form ratio {out_of_domain} / {in_domain}"
        )));
    }
    Ok(out_of_domain / in_domain)
}

/// Transfer ratios of one model family, keyed by (train domain, eval domain).
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub family: String,
    pub metric: Metric,
    pub ratios: BTreeMap<(String, String), f64>,
}

impl TransferMatrix {
    pub fn get(&self, train: &str, eval: &str) -> Option<f64> {
        self.ratios.get(&(train.to_string(), eval.to_string())).copied()
    }

    pub fn train_domains(&self) -> BTreeSet<&str> {
        self.ratios.keys().map(|(t, _)| t.as_str()).collect()
    }

    pub fn eval_domains(&self) -> BTreeSet<&str> {
        self.ratios.keys().map(|(_, e)| e.as_str()).collect()
    }
}

/// Builds the matrix for results of a single family and metric.
pub fn build_transfer_matrix(results: &[PerplexityResult]) -> Result<TransferMatrix> {
    let first = results
        .first()
        .ok_or_else(|| Error::InvalidInput("no results for transfer matrix".into()))?;
    let mut cells: BTreeMap<(String, String), &PerplexityResult> = BTreeMap::new();
    for r in results {
        if r.family != first.family || r.metric != first.metric {
            return Err(Error::Mismatch(format!(
                "transfer matrix mixes {}/{} with {}/{}",
                first.family, first.metric, r.family, r.metric
            )));
        }
        let train = r
            .trained_on
            .clone()
            .ok_or_else(|| Error::InvalidInput(format!("`{}` has no training domain", r.model_id)))?;
        if cells.insert((train.clone(), r.domain.clone()), r).is_some() {
            return Err(Error::Mismatch(format!(
                "duplicate result for {} trained on {train}, evaluated on {}",
                r.family, r.domain
            )));
        }
    }
    let mut ratios = BTreeMap::new();
    for ((train, eval), r) in &cells {
        let reference = cells
            .get(&(eval.clone(), eval.clone()))
            .ok_or_else(|| Error::MissingReference(eval.clone()))?;
        let v = if train == eval { 1.0 } else { transfer_ratio(r, reference)? };
        ratios.insert((train.clone(), eval.clone()), v);
    }
    Ok(TransferMatrix {
        family: first.family.clone(),
        metric: first.metric,
        ratios,
    })
}

/// One matrix per trained family, each using that family's metric.
pub fn build_transfer_matrices(results: &[PerplexityResult]) -> Result<Vec<TransferMatrix>> {
    let mut by_family: BTreeMap<&str, Vec<PerplexityResult>> = BTreeMap::new();
    for r in results {
        if r.trained_on.is_some() && r.metric == Metric::for_family(&r.family) {
            by_family.entry(&r.family).or_default().push(r.clone());
        }
    }
    by_family.values().map(|rs| build_transfer_matrix(rs)).collect()
}

/// Cell summary across families: the lowest ratio (ties go to the
/// lexicographically first family) and the mean ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCell {
    pub train_domain: String,
    pub eval_domain: String,
    pub min_family: String,
    pub min_ratio: f64,
    pub mean_ratio: f64,
    pub families: usize,
}

pub fn best_by_ratio(matrices: &[TransferMatrix]) -> Vec<BestCell> {
    let mut cells: BTreeMap<(String, String), Vec<(&str, f64)>> = BTreeMap::new();
    let mut sorted: Vec<&TransferMatrix> = matrices.iter().collect();
    sorted.sort_by(|a, b| a.family.cmp(&b.family));
    for m in sorted {
        for (k, &v) in &m.ratios {
            cells.entry(k.clone()).or_default().push((&m.family, v));
        }
    }
    cells
        .into_iter()
        .map(|((train, eval), entries)| {
            let (min_family, min_ratio) = entries
                .iter()
                .fold(entries[0], |best, &e| if e.1 < best.1 { e } else { best });
            BestCell {
                train_domain: train,
                eval_domain: eval,
                min_family: min_family.to_string(),
                min_ratio,
                mean_ratio: entries.iter().map(|e| e.1).sum::<f64>() / entries.len() as f64,
                families: entries.len(),
            }
        })
        .collect()
}

/// Lowest raw perplexity per (train domain, eval domain, metric), across
/// families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPerplexity {
    pub train_domain: String,
    pub eval_domain: String,
    pub metric: Metric,
    pub family: String,
    pub value: f64,
}

pub fn best_by_perplexity(results: &[PerplexityResult]) -> Vec<BestPerplexity> {
    let mut best: BTreeMap<(String, String, Metric), (String, f64)> = BTreeMap::new();
    for r in results {
        let Some(train) = &r.trained_on else { continue };
        let key = (train.clone(), r.domain.clone(), r.metric);
        let better = match best.get(&key) {
            None => true,
            Some((fam, v)) => r.value < *v || (r.value == *v && r.family < *fam),
        };
        if better {
            best.insert(key, (r.family.clone(), r.value));
        }
    }
    best.into_iter()
        .map(|((train_domain, eval_domain, metric), (family, value))| BestPerplexity {
            train_domain,
            eval_domain,
            metric,
            family,
            value,
        })
        .collect()
}

fn prefix_ids(tok: &Tokenizer, prefix: &str) -> Vec<usize> {
    let words = split_sentence(prefix);
    let mut ids = vec![tok.vocab().bos()];
    ids.extend(tok.encode_words(&words).0);
    ids
}

fn display_token(tok: &Tokenizer, id: usize) -> String {
    let t = tok.vocab().token(id).unwrap_or("<unk>");
    t.strip_suffix("</w>").unwrap_or(t).to_string()
}

/// Most probable next tokens after `prefix`, descending, ties by token id.
pub fn inspect_topk(state: &ModelState, prefix: &str, k: usize, tok: &Tokenizer) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let ids = prefix_ids(tok, prefix);
    let trace = state.forward(&ids)?;
    let probs = softmax(trace.logits.row(ids.len() - 1));
    let mut ranked: Vec<(usize, f64)> = probs.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|(id, p)| (display_token(tok, id), p))
        .collect())
}

/// Probability of a whole word (its full token span) following `ids`.
fn word_prob(state: &ModelState, ids: &[usize], span: &[usize]) -> Result<f64> {
    let mut seq = ids.to_vec();
    seq.extend_from_slice(&span[..span.len() - 1]);
    let trace = state.forward(&seq)?;
    let mut lp = 0.0;
    for (j, &t) in span.iter().enumerate() {
        lp += log_softmax(trace.logits.row(ids.len() - 1 + j))[t];
    }
    Ok(lp.exp())
}

/// Like [`inspect_topk`] but ranks every word of the completion map by the
/// probability of its full token span, ties by word.
pub fn inspect_topk_words(state: &ModelState, prefix: &str, k: usize, enc: &Encoder) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let ids = prefix_ids(enc.tok, prefix);
    let words: Vec<(&str, &[usize])> = enc.cmap.iter().collect();
    let mut ranked = words
        .par_iter()
        .map(|(w, span)| word_prob(state, &ids, span).map(|p| (w.to_string(), p)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Distribution over the record's completion set at its target position,
/// renormalized over the set; completions in set order.
pub fn concept_distribution(state: &ModelState, record: &ConceptRecord, enc: &Encoder) -> Result<Vec<(String, f64)>> {
    let e = enc.encode(record)?;
    let prefix = &e.ids[..e.span.0];
    let raw = record
        .completions
        .iter()
        .map(|c| word_prob(state, prefix, enc.cmap.get(c)?).map(|p| (c.clone(), p)))
        .collect::<Result<Vec<_>>>()?;
    let z: f64 = raw.iter().map(|(_, p)| p).sum();
    Ok(raw.into_iter().map(|(c, p)| (c, p / z)).collect())
}

/// Entropy (nats) of [`concept_distribution`].
pub fn concept_entropy(state: &ModelState, record: &ConceptRecord, enc: &Encoder) -> Result<f64> {
    Ok(concept_distribution(state, record, enc)?
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(_, p)| -p * p.ln())
        .sum())
}

pub fn results_jsonl(results: &[PerplexityResult]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Aligned plain-text rendering: one block per family, train domains down,
/// eval domains across.
pub fn render_matrices(matrices: &[TransferMatrix]) -> String {
    let mut out = String::new();
    for m in matrices {
        let evals: Vec<&str> = m.eval_domains().into_iter().collect();
        let trains: Vec<&str> = m.train_domains().into_iter().collect();
        let w = evals
            .iter()
            .chain(&trains)
            .map(|s| s.len())
            .chain([10, "train \\ eval".len()])
            .max()
            .unwrap_or(10);
        let _ = writeln!(out, "{} ({})", m.family, m.metric);
        let _ = write!(out, "{:<w$}", "train \\ eval");
        for e in &evals {
            let _ = write!(out, "  {e:>w$}");
        }
        out.push('\n');
        for t in &trains {
            let _ = write!(out, "{t:<w$}");
            for e in &evals {
                match m.get(t, e) {
                    Some(v) => {
                        let _ = write!(out, "  {v:>w$.6}");
                    }
                    None => {
                        let _ = write!(out, "  {:>w$}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn render_matrices_csv(matrices: &[TransferMatrix]) -> String {
    let mut out = String::from("family,metric,train_domain,eval_domain,ratio\n");
    for m in matrices {
        for ((t, e), v) in &m.ratios {
            let _ = writeln!(out, "{},{},{t},{e},{v:.10}", m.family, m.metric);
        }
    }
    out
}

pub fn render_best(cells: &[BestCell], raw: &[BestPerplexity]) -> String {
    let mut out = String::from("best by transfer ratio (min over families; mean over families)\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{} -> {}: min {:.6} ({}), mean {:.6} over {}",
            c.train_domain, c.eval_domain, c.min_ratio, c.min_family, c.mean_ratio, c.families
        );
    }
    out.push_str("\nbest by raw perplexity\n");
    for b in raw {
        let _ = writeln!(
            out,
            "{} -> {} [{}]: {:.6} ({})",
            b.train_domain, b.eval_domain, b.metric, b.value, b.family
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(family: &str, train: &str, eval: &str, value: f64) -> PerplexityResult {
        PerplexityResult {
            model_id: format!("{family}/{train}"),
            family: family.into(),
            trained_on: Some(train.into()),
            domain: eval.into(),
            metric: Metric::NcpPpl,
            value,
            nll: 0.0,
            token_count: 1,
        }
    }

    #[test]
    fn ratio_basics() {
        let a = result("f", "x", "y", 2.0);
        let b = result("f", "y", "y", 1.0);
        assert_eq!(transfer_ratio(&a, &b).unwrap(), 2.0);
        assert_eq!(transfer_ratio(&b, &b).unwrap(), 1.0);
        let mut c = b.clone();
        c.metric = Metric::NtpPpl;
        assert!(matches!(transfer_ratio(&a, &c), Err(Error::Mismatch(_))));
        let mut d = b.clone();
        d.domain = "z".into();
        assert!(matches!(transfer_ratio(&a, &d), Err(Error::Mismatch(_))));
    }

    #[test]
    fn matrix_structure_and_order_invariance() {
        let rs = vec![
            result("f", "a", "a", 10.0),
            result("f", "a", "b", 30.0),
            result("f", "b", "a", 15.0),
            result("f", "b", "b", 20.0),
        ];
        let m = build_transfer_matrix(&rs).unwrap();
        assert_eq!(m.ratios.len(), 4);
        assert_eq!(m.get("a", "a"), Some(1.0));
        assert_eq!(m.get("b", "b"), Some(1.0));
        assert_eq!(m.get("a", "b"), Some(1.5));
        assert_eq!(m.get("b", "a"), Some(1.5));
        let mut rev = rs.clone();
        rev.reverse();
        assert_eq!(build_transfer_matrix(&rev).unwrap(), m);
    }

    #[test]
    fn missing_reference_names_domain() {
        let rs = vec![result("f", "a", "a", 10.0), result("f", "a", "b", 30.0)];
        match build_transfer_matrix(&rs).unwrap_err() {
            Error::MissingReference(d) => assert_eq!(d, "b"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn best_cell_ties_go_to_first_family() {
        let mk = |fam: &str, off: f64| {
            build_transfer_matrix(&[
                result(fam, "a", "a", 1.0),
                result(fam, "a", "b", 2.0 + off),
                result(fam, "b", "b", 1.0),
            ])
            .unwrap()
        };
        let cells = best_by_ratio(&[mk("zeta", 0.0), mk("alpha", 0.0), mk("mid", 1.0)]);
        let ab = cells.iter().find(|c| c.train_domain == "a" && c.eval_domain == "b").unwrap();
        assert_eq!(ab.min_family, "alpha");
        assert_eq!(ab.min_ratio, 2.0);
        assert!((ab.mean_ratio - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_and_table_render() {
        let m = build_transfer_matrix(&[result("f", "a", "a", 1.0), result("f", "b", "a", 3.0)]).unwrap();
        let csv = render_matrices_csv(std::slice::from_ref(&m));
        assert!(csv.contains("f,ncp_ppl,b,a,3.0000000000"));
        let table = render_matrices(&[m]);
        assert!(table.starts_with("f (ncp_ppl)"));
    }
}
