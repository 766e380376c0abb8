//! Span-restricted NTP and NCP objectives, the post-training loop, and a
//! finite-difference gradient checker.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ConceptRecord, Objective, SplitManifest, SplitName, Span, Variant};
use crate::error::{Error, Result};
use crate::model::{ModelState, Params, log_softmax, softmax};
use crate::tokenizer::{CompletionMap, Tokenizer, substitute_span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ntp,
    Ncp,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ntp => "ntp",
            LossKind::Ncp => "ncp",
        }
    }

    /// The objective a variant trains with.
    pub fn for_objective(objective: Objective) -> Self {
        match objective {
            Objective::NcpLoss => LossKind::Ncp,
            Objective::NtpBaseline | Objective::NcpAugmentation => LossKind::Ntp,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Loss of one record. Each record has a single target occurrence, so
/// `per_position` holds one entry keyed by the span's first token index and
/// `total` equals its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_position: Vec<(usize, f64)>,
    pub objective: LossKind,
}

/// Tokenizer plus completion map: everything needed to turn records into
/// token sequences.
#[derive(Debug, Clone, Copy)]
pub struct Encoder<'a> {
    pub tok: &'a Tokenizer,
    pub cmap: &'a CompletionMap,
}

/// A record as token ids, with `<bos>` prepended and the target span
/// shifted accordingly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedRecord {
    pub ids: Vec<usize>,
    pub span: Span,
}

impl<'a> Encoder<'a> {
    pub fn new(tok: &'a Tokenizer, cmap: &'a CompletionMap) -> Self {
        Self { tok, cmap }
    }

    pub fn encode(&self, record: &ConceptRecord) -> Result<EncodedRecord> {
        let (body, spans) = self.tok.encode_words(&record.sentence);
        let (ws, we) = record.target_span;
        if ws >= we || we > spans.len() {
            return Err(Error::InvalidRecord(format!(
                "target span ({ws}, {we}) outside sentence of {} words",
                spans.len()
            )));
        }
        let mut ids = Vec::with_capacity(body.len() + 1);
        ids.push(self.tok.vocab().bos());
        ids.extend(body);
        Ok(EncodedRecord {
            ids,
            span: (spans[ws].0 + 1, spans[we - 1].1 + 1),
        })
    }
}

/// Sums in slice order, starting from the first element, so a single value
/// passes through untouched.
fn ordered_sum(xs: &[f64]) -> f64 {
    xs.iter().skip(1).fold(xs[0], |a, b| a + b)
}

/// Negative log-likelihood of each listed completion of the target span,
/// averaged; optionally with the gradient of that average.
///
/// The input to the network is cut just before the last span token: rows
/// after the span are never scored, and completions of the same length share
/// everything but their final token, so single-token completions share one
/// forward pass.
fn span_objective(
    state: &ModelState,
    rec: &EncodedRecord,
    completions: &[&str],
    cmap: &CompletionMap,
    want_grad: bool,
) -> Result<(f64, Option<Params>)> {
    let (start, end) = rec.span;
    let n = completions.len();
    if n == 0 {
        return Err(Error::InvalidRecord("empty completion set".into()));
    }
    let weight = 1.0 / n as f64;
    // input sequence -> [(completion index, target ids)]
    let mut groups: BTreeMap<Vec<usize>, Vec<(usize, Vec<usize>)>> = BTreeMap::new();
    for (ci, c) in completions.iter().enumerate() {
        let seq = substitute_span(&rec.ids, (start, end), c, cmap)?;
        let span_end = start + cmap.get(c)?.len();
        if span_end > state.config.context_len {
            return Err(Error::ContextOverflow {
                len: span_end,
                max: state.config.context_len,
            });
        }
        groups
            .entry(seq[..span_end - 1].to_vec())
            .or_default()
            .push((ci, seq[start..span_end].to_vec()));
    }

    let v = state.config.vocab_size;
    let mut nll = vec![0.0; n];
    let mut grads: Option<Params> = None;
    for (input, members) in &groups {
        let trace = state.forward(input)?;
        let mut dlogits = if want_grad { vec![0.0; input.len() * v] } else { Vec::new() };
        for (ci, targets) in members {
            let mut s = 0.0;
            for (j, &t) in targets.iter().enumerate() {
                let row = start - 1 + j;
                let logits = trace.logits.row(row);
                s -= log_softmax(logits)[t];
                if want_grad {
                    let p = softmax(logits);
                    let d = &mut dlogits[row * v..(row + 1) * v];
                    for (dv, pv) in d.iter_mut().zip(&p) {
                        *dv += weight * pv;
                    }
                    d[t] -= weight;
                }
            }
            nll[*ci] = s;
        }
        if want_grad {
            let g = state.backward(&trace, &dlogits)?;
            match grads.as_mut() {
                Some(acc) => acc.add_scaled(&g, 1.0),
                None => grads = Some(g),
            }
        }
    }
    Ok((ordered_sum(&nll) / n as f64, grads))
}

fn completions_for(record: &ConceptRecord, kind: LossKind) -> Vec<&str> {
    match kind {
        LossKind::Ntp => vec![record.original.as_str()],
        LossKind::Ncp => record.completions.iter().map(String::as_str).collect(),
    }
}

fn breakdown(kind: LossKind, rec: &EncodedRecord, value: f64) -> LossBreakdown {
    LossBreakdown {
        total: value,
        per_position: vec![(rec.span.0, value)],
        objective: kind,
    }
}

pub fn record_loss(state: &ModelState, record: &ConceptRecord, kind: LossKind, enc: &Encoder) -> Result<LossBreakdown> {
    let rec = enc.encode(record)?;
    let (value, _) = span_objective(state, &rec, &completions_for(record, kind), enc.cmap, false)?;
    Ok(breakdown(kind, &rec, value))
}

/// `−log p(original span | left context)`, teacher-forced over the span.
pub fn ntp_loss(state: &ModelState, record: &ConceptRecord, enc: &Encoder) -> Result<LossBreakdown> {
    record_loss(state, record, LossKind::Ntp, enc)
}

/// Mean over the completion set of `−log p(completion span | left context)`.
pub fn ncp_loss(state: &ModelState, record: &ConceptRecord, enc: &Encoder) -> Result<LossBreakdown> {
    record_loss(state, record, LossKind::Ncp, enc)
}

pub fn loss_and_grad(
    state: &ModelState,
    record: &ConceptRecord,
    kind: LossKind,
    enc: &Encoder,
) -> Result<(LossBreakdown, Params)> {
    let rec = enc.encode(record)?;
    let (value, grads) = span_objective(state, &rec, &completions_for(record, kind), enc.cmap, true)?;
    Ok((breakdown(kind, &rec, value), grads.expect("gradient requested")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 8,
            epochs: 20,
            seed: 0,
            optimizer: Optimizer::adam(),
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be a positive number".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be positive".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return Err(Error::Config("train.grad_clip must be a positive number".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::Config("adam needs 0 ≤ β < 1 and ε > 0".into()));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub split: String,
    pub objective: LossKind,
    pub loss: f64,
}

pub fn write_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = String::new();
    for e in log {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

enum OptState {
    Sgd,
    Adam { m: Params, v: Params, t: i32 },
}

impl OptState {
    fn new(opt: Optimizer, cfg: &crate::model::ModelConfig) -> Self {
        match opt {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam { .. } => OptState::Adam {
                m: Params::zeros(cfg),
                v: Params::zeros(cfg),
                t: 0,
            },
        }
    }

    fn step(&mut self, opt: Optimizer, lr: f64, params: &mut Params, grads: &Params) {
        match (self, opt) {
            (OptState::Sgd, _) => params.add_scaled(grads, -lr),
            (OptState::Adam { m, v, t }, Optimizer::Adam { beta1, beta2, eps }) => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t);
                let bc2 = 1.0 - beta2.powi(*t);
                let named_g = grads.named();
                let named_m = m.named_mut();
                let named_v = v.named_mut();
                for ((((_, p), (_, g)), (_, mt)), (_, vt)) in params
                    .named_mut()
                    .into_iter()
                    .zip(named_g)
                    .zip(named_m)
                    .zip(named_v)
                {
                    for i in 0..p.data.len() {
                        let gi = g.data[i];
                        mt.data[i] = beta1 * mt.data[i] + (1.0 - beta1) * gi;
                        vt.data[i] = beta2 * vt.data[i] + (1.0 - beta2) * gi * gi;
                        let mhat = mt.data[i] / bc1;
                        let vhat = vt.data[i] / bc2;
                        p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            (OptState::Adam { .. }, Optimizer::Sgd) => unreachable!("optimizer state matches config"),
        }
    }
}

/// Mean loss over `records` in record order.
pub fn mean_loss(state: &ModelState, records: &[ConceptRecord], kind: LossKind, enc: &Encoder) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to score".into()));
    }
    let losses = records
        .par_iter()
        .map(|r| record_loss(state, r, kind, enc).map(|b| b.total))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Post-trains `state` on `train` with the given objective. Batches are
/// drawn from a seeded per-epoch shuffle; per-record gradients are computed
/// in parallel against the frozen parameters and reduced in batch order.
pub fn train_records(
    mut state: ModelState,
    train: &[ConceptRecord],
    val: &[ConceptRecord],
    kind: LossKind,
    enc: &Encoder,
    tc: &TrainConfig,
) -> Result<(ModelState, Vec<LogEntry>)> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    for r in train.iter().chain(val) {
        enc.encode(r)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut opt = OptState::new(tc.optimizer, &state.config);
    let mut log = Vec::new();

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for (b, batch) in order.chunks(tc.batch_size).enumerate() {
            let frozen = &state;
            let results = batch
                .par_iter()
                .map(|&i| loss_and_grad(frozen, &train[i], kind, enc))
                .collect::<Result<Vec<_>>>()?;
            let mut grads: Option<Params> = None;
            for (&i, (loss, g)) in batch.iter().zip(results) {
                if !loss.total.is_finite() || !g.all_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b,
                        record: i,
                    });
                }
                epoch_sum += loss.total;
                match grads.as_mut() {
                    Some(acc) => acc.add_scaled(&g, 1.0),
                    None => grads = Some(g),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            if batch.len() > 1 {
                grads.scale(1.0 / batch.len() as f64);
            }
            if let Some(clip) = tc.grad_clip {
                let norm = grads.norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            opt.step(tc.optimizer, tc.learning_rate, &mut state.params, &grads);
        }
        log.push(LogEntry {
            epoch,
            split: "train".into(),
            objective: kind,
            loss: epoch_sum / train.len() as f64,
        });
        if !val.is_empty() {
            log.push(LogEntry {
                epoch,
                split: "val".into(),
                objective: kind,
                loss: mean_loss(&state, val, kind, enc)?,
            });
        }
        log::debug!("epoch {epoch}: {:?}", log.last());
    }
    Ok((state, log))
}

/// Trains the named variant on its dataset from `manifest`. The base
/// sentinel returns the state unchanged with an empty log.
pub fn train(
    state: ModelState,
    manifest: &SplitManifest,
    dir: &Path,
    variant: &Variant,
    enc: &Encoder,
    tc: &TrainConfig,
) -> Result<(ModelState, Vec<LogEntry>)> {
    let spec = match variant {
        Variant::Base => return Ok((state, Vec::new())),
        Variant::Trained(spec) => spec,
    };
    if manifest.domain != spec.domain {
        return Err(Error::Mismatch(format!(
            "variant trains on `{}` but the manifest is for `{}`",
            spec.domain, manifest.domain
        )));
    }
    let key = spec.dataset_key();
    let train_set = manifest.load_split(dir, &key, SplitName::Train)?;
    let val_set = manifest.load_split(dir, &key, SplitName::Val)?;
    train_records(state, &train_set, &val_set, LossKind::for_objective(spec.objective), enc, tc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: (String, usize),
    pub checked: usize,
}

pub const FD_EPS: f64 = 1e-4;
/// Denominator floor for relative errors, so entries whose analytic and
/// numeric values are both ~0 do not divide by zero.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient of the record's loss with central finite
/// differences over every parameter element.
pub fn grad_check(state: &ModelState, record: &ConceptRecord, kind: LossKind, enc: &Encoder) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grad(state, record, kind, enc)?;
    let mut coords = Vec::new();
    for (ti, (name, t)) in state.params.named().iter().enumerate() {
        for i in 0..t.len() {
            coords.push((ti, name.clone(), i));
        }
    }
    let analytic: Vec<Vec<f64>> = grads.named().iter().map(|(_, t)| t.data.clone()).collect();
    let errors = coords
        .par_iter()
        .map(|(ti, _, i)| {
            let eval_at = |delta: f64| -> Result<f64> {
                let mut s = state.clone();
                s.params.named_mut()[*ti].1.data[*i] += delta;
                record_loss(&s, record, kind, enc).map(|b| b.total)
            };
            let numeric = (eval_at(FD_EPS)? - eval_at(-FD_EPS)?) / (2.0 * FD_EPS);
            Ok(relative_error(analytic[*ti][*i], numeric))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (worst_idx, &max_rel_error) = errors
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("model has parameters");
    let (_, name, i) = &coords[worst_idx];
    Ok(GradCheckReport {
        max_rel_error,
        worst: (name.clone(), *i),
        checked: coords.len(),
    })
}
