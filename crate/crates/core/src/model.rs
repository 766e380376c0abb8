//! Tiny pre-norm decoder-only transformer in f64 with hand-written
//! reverse-mode gradients.
//!
//! Layout per block: `x += Attn(LN1(x))`, `x += FFN(LN2(x))`, with a final
//! layer norm and an untied output projection. Positions are learned. The
//! feed-forward activation is tanh-approximated GELU, which keeps the whole
//! network smooth for finite-difference checks.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const CHECKPOINT_MAGIC: &[u8; 8] = b"NCPCKPT1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.context_len < 2 {
            return Err(Error::Config("model.context_len must be at least 2".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, c, d, f) = (self.vocab_size, self.context_len, self.d_model, self.d_ff);
        let per_layer = 2 * d + 4 * d * d + 2 * d + d * f + f + f * d + d;
        v * d + c * d + self.n_layers * per_layer + 2 * d + d * v + v
    }
}

/// Dense row-major matrix; vectors are `1 × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    fn random(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// All trainable arrays. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Tensor,
    pub lnf_b: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (v, c, d, f) = (cfg.vocab_size, cfg.context_len, cfg.d_model, cfg.d_ff);
        let layer = || LayerParams {
            ln1_g: Tensor::zeros(1, d),
            ln1_b: Tensor::zeros(1, d),
            wq: Tensor::zeros(d, d),
            wk: Tensor::zeros(d, d),
            wv: Tensor::zeros(d, d),
            wo: Tensor::zeros(d, d),
            ln2_g: Tensor::zeros(1, d),
            ln2_b: Tensor::zeros(1, d),
            w1: Tensor::zeros(d, f),
            b1: Tensor::zeros(1, f),
            w2: Tensor::zeros(f, d),
            b2: Tensor::zeros(1, d),
        };
        Self {
            tok_emb: Tensor::zeros(v, d),
            pos_emb: Tensor::zeros(c, d),
            layers: (0..cfg.n_layers).map(|_| layer()).collect(),
            lnf_g: Tensor::zeros(1, d),
            lnf_b: Tensor::zeros(1, d),
            w_out: Tensor::zeros(d, v),
            b_out: Tensor::zeros(1, v),
        }
    }

    /// Named arrays in a fixed order (the checkpoint order).
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (n, t) in [
                ("ln1_g", &l.ln1_g),
                ("ln1_b", &l.ln1_b),
                ("wq", &l.wq),
                ("wk", &l.wk),
                ("wv", &l.wv),
                ("wo", &l.wo),
                ("ln2_g", &l.ln2_g),
                ("ln2_b", &l.ln2_b),
                ("w1", &l.w1),
                ("b1", &l.b1),
                ("w2", &l.w2),
                ("b2", &l.b2),
            ] {
                out.push((format!("layers.{i}.{n}"), t));
            }
        }
        out.push(("lnf_g".into(), &self.lnf_g));
        out.push(("lnf_b".into(), &self.lnf_b));
        out.push(("w_out".into(), &self.w_out));
        out.push(("b_out".into(), &self.b_out));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("tok_emb".to_string(), &mut self.tok_emb),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (n, t) in [
                ("ln1_g", &mut l.ln1_g),
                ("ln1_b", &mut l.ln1_b),
                ("wq", &mut l.wq),
                ("wk", &mut l.wk),
                ("wv", &mut l.wv),
                ("wo", &mut l.wo),
                ("ln2_g", &mut l.ln2_g),
                ("ln2_b", &mut l.ln2_b),
                ("w1", &mut l.w1),
                ("b1", &mut l.b1),
                ("w2", &mut l.w2),
                ("b2", &mut l.b2),
            ] {
                out.push((format!("layers.{i}.{n}"), t));
            }
        }
        out.push(("lnf_g".into(), &mut self.lnf_g));
        out.push(("lnf_b".into(), &mut self.lnf_b));
        out.push(("w_out".into(), &mut self.w_out));
        out.push(("b_out".into(), &mut self.b_out));
        out
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`, element-wise.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.named_mut() {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.named()
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Params,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
struct LayerNormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    x_in: Vec<f64>,
    ln1: LayerNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// per head, `T × T`, zero above the diagonal
    probs: Vec<Vec<f64>>,
    o: Vec<f64>,
    x_mid: Vec<f64>,
    ln2: LayerNormCache,
    c: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    /// `T × vocab`
    pub logits: Tensor,
    layers: Vec<LayerCache>,
    lnf: LayerNormCache,
    xf: Vec<f64>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Log-softmax of row `pos`.
    pub fn log_probs(&self, pos: usize) -> Vec<f64> {
        log_softmax(self.logits.row(pos))
    }
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    row.iter().map(|z| z - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

// C (n×m) = A (n×k) · B (k×m)
fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in crow.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *cv += av * bv;
            }
        }
    }
    c
}

// dA (n×k) = dC (n×m) · Bᵀ, with B k×m
fn matmul_bt(dc: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut da = vec![0.0; n * k];
    for i in 0..n {
        let dcrow = &dc[i * m..(i + 1) * m];
        for p in 0..k {
            da[i * k + p] = dcrow.iter().zip(&b[p * m..(p + 1) * m]).map(|(x, y)| x * y).sum();
        }
    }
    da
}

// dB (k×m) += Aᵀ · dC, with A n×k, dC n×m
fn matmul_at_acc(db: &mut [f64], a: &[f64], dc: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let dcrow = &dc[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (dv, cv) in db[p * m..(p + 1) * m].iter_mut().zip(dcrow) {
                *dv += av * cv;
            }
        }
    }
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_mut(b.len()) {
        for (v, bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

fn col_sum_acc(db: &mut [f64], dx: &[f64]) {
    let m = db.len();
    for row in dx.chunks(m) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let d = g.len();
    let t = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; t];
    for i in 0..t {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * g[j] + b[j];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

fn layer_norm_backward(dy: &[f64], cache: &LayerNormCache, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let d = g.len();
    let t = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    for i in 0..t {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let dxh = dyr[j] * g[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let r = cache.rstd[i];
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            dx[i * d + j] = r * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.044_715;

fn gelu(u: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * u * (1.0 + (s * (u + GELU_C * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    let th = (s * (u + GELU_C * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * s * (1.0 + 3.0 * GELU_C * u * u)
}

impl ModelState {
    /// Seeded initialization: unit-variance embeddings, linear weights with
    /// std `1/sqrt(fan_in)`, unit layer norm gains, zero biases. Residual projections are shrunk by
    /// `1/sqrt(2·n_layers)`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (v, c, d, f) = (config.vocab_size, config.context_len, config.d_model, config.d_ff);
        let resid = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        let dstd = 1.0 / (d as f64).sqrt();
        let fstd = 1.0 / (f as f64).sqrt();
        let tok_emb = Tensor::random(v, d, 1.0, &mut rng);
        let pos_emb = Tensor::random(c, d, 1.0, &mut rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1_g: Tensor::filled(1, d, 1.0),
                ln1_b: Tensor::zeros(1, d),
                wq: Tensor::random(d, d, dstd, &mut rng),
                wk: Tensor::random(d, d, dstd, &mut rng),
                wv: Tensor::random(d, d, dstd, &mut rng),
                wo: Tensor::random(d, d, dstd * resid, &mut rng),
                ln2_g: Tensor::filled(1, d, 1.0),
                ln2_b: Tensor::zeros(1, d),
                w1: Tensor::random(d, f, dstd, &mut rng),
                b1: Tensor::zeros(1, f),
                w2: Tensor::random(f, d, fstd * resid, &mut rng),
                b2: Tensor::zeros(1, d),
            })
            .collect();
        let w_out = Tensor::random(d, v, dstd, &mut rng);
        Ok(Self {
            params: Params {
                tok_emb,
                pos_emb,
                layers,
                lnf_g: Tensor::filled(1, d, 1.0),
                lnf_b: Tensor::zeros(1, d),
                w_out,
                b_out: Tensor::zeros(1, v),
            },
            config,
        })
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        if tokens.len() > self.config.context_len {
            return Err(Error::ContextOverflow {
                len: tokens.len(),
                max: self.config.context_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} out of range for vocab of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardTrace> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let p = &self.params;
        let (t, d, f, v) = (tokens.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let (nh, hd) = (cfg.n_heads, cfg.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();

        let mut x = vec![0.0; t * d];
        for (i, &tok) in tokens.iter().enumerate() {
            for ((xv, e), pe) in x[i * d..(i + 1) * d]
                .iter_mut()
                .zip(p.tok_emb.row(tok))
                .zip(p.pos_emb.row(i))
            {
                *xv = e + pe;
            }
        }

        let mut caches = Vec::with_capacity(cfg.n_layers);
        for lp in &p.layers {
            let x_in = x.clone();
            let (a, ln1) = layer_norm(&x, &lp.ln1_g.data, &lp.ln1_b.data);
            let q = matmul(&a, &lp.wq.data, t, d, d);
            let k = matmul(&a, &lp.wk.data, t, d, d);
            let vv = matmul(&a, &lp.wv.data, t, d, d);
            let mut o = vec![0.0; t * d];
            let mut probs = Vec::with_capacity(nh);
            for h in 0..nh {
                let off = h * hd;
                let mut ph = vec![0.0; t * t];
                for i in 0..t {
                    let qi = &q[i * d + off..i * d + off + hd];
                    let scores: Vec<f64> = (0..=i)
                        .map(|j| {
                            let kj = &k[j * d + off..j * d + off + hd];
                            qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                        })
                        .collect();
                    let pr = softmax(&scores);
                    for (j, &pj) in pr.iter().enumerate() {
                        ph[i * t + j] = pj;
                        let vj = &vv[j * d + off..j * d + off + hd];
                        for (ov, vvj) in o[i * d + off..i * d + off + hd].iter_mut().zip(vj) {
                            *ov += pj * vvj;
                        }
                    }
                }
                probs.push(ph);
            }
            let attn = matmul(&o, &lp.wo.data, t, d, d);
            for (xv, av) in x.iter_mut().zip(&attn) {
                *xv += av;
            }
            let x_mid = x.clone();
            let (c, ln2) = layer_norm(&x, &lp.ln2_g.data, &lp.ln2_b.data);
            let mut u = matmul(&c, &lp.w1.data, t, d, f);
            add_bias(&mut u, &lp.b1.data);
            let g: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
            let mut m = matmul(&g, &lp.w2.data, t, f, d);
            add_bias(&mut m, &lp.b2.data);
            for (xv, mv) in x.iter_mut().zip(&m) {
                *xv += mv;
            }
            caches.push(LayerCache {
                x_in,
                ln1,
                a,
                q,
                k,
                v: vv,
                probs,
                o,
                x_mid,
                ln2,
                c,
                u,
                g,
            });
        }

        let (xf, lnf) = layer_norm(&x, &p.lnf_g.data, &p.lnf_b.data);
        let mut logits = matmul(&xf, &p.w_out.data, t, d, v);
        add_bias(&mut logits, &p.b_out.data);
        Ok(ForwardTrace {
            tokens: tokens.to_vec(),
            logits: Tensor {
                rows: t,
                cols: v,
                data: logits,
            },
            layers: caches,
            lnf,
            xf,
        })
    }

    /// Gradients of a scalar loss given its gradient w.r.t. the logits
    /// (`T × vocab`, row-major).
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &[f64]) -> Result<Params> {
        let cfg = &self.config;
        let p = &self.params;
        let (t, d, f, v) = (trace.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size);
        if dlogits.len() != t * v {
            return Err(Error::Shape(format!(
                "logit gradient has {} values, expected {t}×{v}",
                dlogits.len()
            )));
        }
        if trace.layers.len() != cfg.n_layers || trace.logits.cols != v {
            return Err(Error::Shape("trace was not produced by this model".into()));
        }
        let (nh, hd) = (cfg.n_heads, cfg.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();
        let mut grads = Params::zeros(cfg);

        matmul_at_acc(&mut grads.w_out.data, &trace.xf, dlogits, t, d, v);
        col_sum_acc(&mut grads.b_out.data, dlogits);
        let dxf = matmul_bt(dlogits, &p.w_out.data, t, d, v);
        let mut dx = layer_norm_backward(&dxf, &trace.lnf, &p.lnf_g.data, &mut grads.lnf_g.data, &mut grads.lnf_b.data);

        for (li, (lp, cache)) in p.layers.iter().zip(&trace.layers).enumerate().rev() {
            let lg = &mut grads.layers[li];

            // feed-forward branch
            matmul_at_acc(&mut lg.w2.data, &cache.g, &dx, t, f, d);
            col_sum_acc(&mut lg.b2.data, &dx);
            let dg = matmul_bt(&dx, &lp.w2.data, t, f, d);
            let du: Vec<f64> = dg.iter().zip(&cache.u).map(|(g, &u)| g * gelu_grad(u)).collect();
            matmul_at_acc(&mut lg.w1.data, &cache.c, &du, t, d, f);
            col_sum_acc(&mut lg.b1.data, &du);
            let dc = matmul_bt(&du, &lp.w1.data, t, d, f);
            let dmid = layer_norm_backward(&dc, &cache.ln2, &lp.ln2_g.data, &mut lg.ln2_g.data, &mut lg.ln2_b.data);
            for (a, b) in dx.iter_mut().zip(&dmid) {
                *a += b;
            }

            // attention branch
            matmul_at_acc(&mut lg.wo.data, &cache.o, &dx, t, d, d);
            let d_o = matmul_bt(&dx, &lp.wo.data, t, d, d);
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            let mut dv = vec![0.0; t * d];
            for h in 0..nh {
                let off = h * hd;
                let ph = &cache.probs[h];
                for i in 0..t {
                    let doi = &d_o[i * d + off..i * d + off + hd];
                    let dp: Vec<f64> = (0..=i)
                        .map(|j| {
                            let vj = &cache.v[j * d + off..j * d + off + hd];
                            doi.iter().zip(vj).map(|(a, b)| a * b).sum()
                        })
                        .collect();
                    let dot: f64 = (0..=i).map(|j| ph[i * t + j] * dp[j]).sum();
                    for j in 0..=i {
                        let pij = ph[i * t + j];
                        for e in 0..hd {
                            dv[j * d + off + e] += pij * doi[e];
                        }
                        let ds = pij * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for e in 0..hd {
                            dq[i * d + off + e] += ds * cache.k[j * d + off + e];
                            dk[j * d + off + e] += ds * cache.q[i * d + off + e];
                        }
                    }
                }
            }
            matmul_at_acc(&mut lg.wq.data, &cache.a, &dq, t, d, d);
            matmul_at_acc(&mut lg.wk.data, &cache.a, &dk, t, d, d);
            matmul_at_acc(&mut lg.wv.data, &cache.a, &dv, t, d, d);
            let mut da = matmul_bt(&dq, &lp.wq.data, t, d, d);
            for (a, b) in da.iter_mut().zip(matmul_bt(&dk, &lp.wk.data, t, d, d)) {
                *a += b;
            }
            for (a, b) in da.iter_mut().zip(matmul_bt(&dv, &lp.wv.data, t, d, d)) {
                *a += b;
            }
            let din = layer_norm_backward(&da, &cache.ln1, &lp.ln1_g.data, &mut lg.ln1_g.data, &mut lg.ln1_b.data);
            for (a, b) in dx.iter_mut().zip(&din) {
                *a += b;
            }
            debug_assert_eq!(cache.x_in.len(), dx.len());
            debug_assert_eq!(cache.x_mid.len(), dx.len());
        }

        for (i, &tok) in trace.tokens.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            for (g, r) in grads.tok_emb.row_mut(tok).iter_mut().zip(row) {
                *g += r;
            }
            for (g, r) in grads.pos_emb.row_mut(i).iter_mut().zip(row) {
                *g += r;
            }
        }
        Ok(grads)
    }

    /// Binary checkpoint: magic, JSON config header, then every named array
    /// as little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        let header = serde_json::to_vec(&self.config)?;
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for (name, t) in self.params.named() {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
            buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
            for x in &t.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(|_| Error::MissingFile(path.to_path_buf()))?
            .read_to_end(&mut bytes)?;
        let mut r = ByteReader { buf: &bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
        }
        let hlen = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(hlen)?)?;
        config.validate()?;
        let mut params = Params::zeros(&config);
        for (name, t) in params.named_mut() {
            let nlen = r.u32()? as usize;
            let got = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            if got != name {
                return Err(Error::Checkpoint(format!("expected array `{name}`, found `{got}`")));
            }
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            if (rows, cols) != (t.rows, t.cols) {
                return Err(Error::Checkpoint(format!(
                    "`{name}` is {rows}×{cols}, config implies {}×{}",
                    t.rows, t.cols
                )));
            }
            for x in t.data.iter_mut() {
                *x = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last array".into()));
        }
        Ok(Self { config, params })
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
