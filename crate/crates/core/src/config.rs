//! Run configuration: a flat `key = value` file. Keys carry dotted section
//! prefixes (`model.d_model`); a `[model]` header line prefixes the keys
//! that follow it. Relative paths resolve against the file's directory.
//!
//! ```text
//! paths.lexicon = lexicon.tsv
//! corpus.kitchen = kitchen.txt
//! [train]
//! epochs = 5
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::concept_client::{ClientSettings, Endpoint};
use crate::dataset::SplitRequest;
use crate::error::{Error, Result};
use crate::lexicon::LexiconFormat;
use crate::model::ModelConfig;
use crate::tokenizer::Scheme;
use crate::training::{Optimizer, TrainConfig};

pub const SERVICE_ENV: &str = "CONCEPT_SERVICE_URL";

/// Every accepted key with its default (`None` = no default).
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("paths.out", Some("out")),
    ("paths.lexicon", None),
    ("paths.lexicon_format", Some("native-tsv")),
    ("paths.annotations", None),
    ("run.seed", Some("0")),
    ("run.variants", Some("all")),
    ("split.train", Some("80")),
    ("split.val", Some("20")),
    ("split.test", Some("20")),
    ("tokenizer.scheme", Some("word")),
    ("tokenizer.vocab_size", Some("2000")),
    ("model.d_model", Some("16")),
    ("model.n_layers", Some("1")),
    ("model.n_heads", Some("2")),
    ("model.d_ff", Some("32")),
    ("model.context_len", Some("24")),
    ("train.learning_rate", Some("0.01")),
    ("train.batch_size", Some("16")),
    ("train.epochs", Some("5")),
    ("train.optimizer", Some("adam")),
    ("train.adam_beta1", Some("0.9")),
    ("train.adam_beta2", Some("0.999")),
    ("train.adam_eps", Some("1e-8")),
    ("train.grad_clip", Some("1.0")),
    ("concept_service.url", None),
    ("concept_service.retries", Some("2")),
    ("concept_service.max_set", Some("8")),
    ("concept_service.max_tokens", Some("64")),
    ("concept_service.timeout_secs", Some("30")),
    ("eval.prefixes", Some("")),
    ("eval.top_k", Some("5")),
    ("gradcheck.records", Some("2")),
];

const PATH_KEYS: &[&str] = &["paths.out", "paths.lexicon", "paths.annotations"];

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key) || key.strip_prefix("corpus.").is_some_and(|d| !d.is_empty())
}

fn is_path_key(key: &str) -> bool {
    PATH_KEYS.contains(&key) || key.starts_with("corpus.")
}

/// Unparsed key/value pairs with paths already made absolute.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

fn resolve(base: &Path, value: &str) -> String {
    if let Some(p) = value.strip_prefix("replay:") {
        return format!("replay:{}", resolve(base, p));
    }
    let p = Path::new(value);
    if p.is_absolute() || value.is_empty() {
        value.to_string()
    } else {
        base.join(p).to_string_lossy().into_owned()
    }
}

impl RawConfig {
    pub fn parse(text: &str, source: &str, base_dir: &Path) -> Result<Self> {
        let mut raw = RawConfig::default();
        let mut section = String::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source, i + 1, "expected `key = value`"))?;
            let k = k.trim();
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if !is_known(&key) {
                return Err(Error::parse(source, i + 1, format!("unknown key `{key}`")));
            }
            raw.insert(&key, v.trim(), base_dir);
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    fn insert(&mut self, key: &str, value: &str, base: &Path) {
        let v = if is_path_key(key) || key == "concept_service.url" {
            resolve(base, value)
        } else {
            value.to_string()
        };
        self.values.insert(key.to_string(), v);
    }

    /// Overrides one key; relative paths resolve against the working
    /// directory.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(Error::Config(format!("unknown configuration key `{key}`")));
        }
        let cwd = std::env::current_dir()?;
        self.insert(key, value, &cwd);
        Ok(())
    }

    /// Applies `CONCEPT_SERVICE_URL` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(url) = std::env::var(SERVICE_ENV) {
            if !url.trim().is_empty() {
                self.set("concept_service.url", url.trim())?;
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .or_else(|| KEYS.iter().find(|(k, _)| *k == key).and_then(|(_, d)| *d))
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
    }

    fn positive(&self, key: &str) -> Result<usize> {
        match self.parsed::<usize>(key)? {
            0 => Err(Error::Config(format!("`{key}` must be positive"))),
            n => Ok(n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub lexicon: PathBuf,
    pub lexicon_format: LexiconFormat,
    pub annotations: Option<PathBuf>,
    /// Domain name → corpus file, sorted by domain.
    pub corpora: BTreeMap<String, PathBuf>,
    pub seed: u64,
    /// Variant ids, or `["all"]`.
    pub variants: Vec<String>,
    pub split: SplitRequest,
    pub scheme: Scheme,
    pub vocab_size: usize,
    /// `vocab_size` is filled in from the tokenizer at train time.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub service: Option<Endpoint>,
    pub client: ClientSettings,
    pub prefixes: Vec<String>,
    pub top_k: usize,
    pub gradcheck_records: usize,
}

fn existing(path: &str, what: &str) -> Result<PathBuf> {
    let p = PathBuf::from(path);
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::Config(format!("{what} `{}` does not exist", p.display())))
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let seed: u64 = raw.parsed("run.seed")?;
        let mut corpora = BTreeMap::new();
        for (k, v) in &raw.values {
            if let Some(domain) = k.strip_prefix("corpus.") {
                if domain.contains('/') {
                    return Err(Error::Config(format!("domain name `{domain}` may not contain `/`")));
                }
                corpora.insert(domain.to_string(), existing(v, &format!("corpus for `{domain}`"))?);
            }
        }
        if corpora.is_empty() {
            return Err(Error::Config("no corpus.<domain> entries configured".into()));
        }
        let variants: Vec<String> = raw
            .require("run.variants")?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if variants.is_empty() {
            return Err(Error::Config("`run.variants` is empty".into()));
        }
        let service = match raw.get("concept_service.url").filter(|v| !v.is_empty()) {
            Some(u) => {
                let ep = Endpoint::parse(u)?;
                if let Endpoint::Replay(p) = &ep {
                    existing(&p.to_string_lossy(), "cassette")?;
                }
                Some(ep)
            }
            None => None,
        };
        let grad_clip = match raw.require("train.grad_clip")? {
            "none" | "off" | "0" => None,
            _ => Some(raw.parsed::<f64>("train.grad_clip")?),
        };
        let optimizer = match raw.require("train.optimizer")? {
            "sgd" => Optimizer::Sgd,
            "adam" => Optimizer::Adam {
                beta1: raw.parsed("train.adam_beta1")?,
                beta2: raw.parsed("train.adam_beta2")?,
                eps: raw.parsed("train.adam_eps")?,
            },
            other => return Err(Error::Config(format!("unknown optimizer `{other}` (sgd, adam)"))),
        };
        let train = TrainConfig {
            learning_rate: raw.parsed("train.learning_rate")?,
            batch_size: raw.positive("train.batch_size")?,
            epochs: raw.positive("train.epochs")?,
            seed,
            optimizer,
            grad_clip,
        };
        train.validate()?;
        let model = ModelConfig {
            vocab_size: 1,
            context_len: raw.parsed("model.context_len")?,
            d_model: raw.positive("model.d_model")?,
            n_layers: raw.positive("model.n_layers")?,
            n_heads: raw.positive("model.n_heads")?,
            d_ff: raw.positive("model.d_ff")?,
            seed,
        };
        model.validate()?;
        let cfg = RunConfig {
            out_dir: PathBuf::from(raw.require("paths.out")?),
            lexicon: existing(raw.require("paths.lexicon")?, "lexicon")?,
            lexicon_format: raw.require("paths.lexicon_format")?.parse()?,
            annotations: match raw.get("paths.annotations").filter(|v| !v.is_empty()) {
                Some(p) => Some(existing(p, "annotation file")?),
                None => None,
            },
            corpora,
            seed,
            variants,
            split: SplitRequest {
                train: raw.positive("split.train")?,
                val: raw.parsed("split.val")?,
                test: raw.positive("split.test")?,
                seed,
            },
            scheme: raw.require("tokenizer.scheme")?.parse()?,
            vocab_size: raw.positive("tokenizer.vocab_size")?,
            model,
            train,
            service,
            client: ClientSettings {
                retries: raw.parsed("concept_service.retries")?,
                max_set: raw.positive("concept_service.max_set")?,
                max_tokens: raw.positive("concept_service.max_tokens")?,
                timeout: Duration::from_secs(raw.positive("concept_service.timeout_secs")? as u64),
            },
            prefixes: raw
                .require("eval.prefixes")
                .unwrap_or("")
                .split('|')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
            top_k: raw.positive("eval.top_k")?,
            gradcheck_records: raw.positive("gradcheck.records")?,
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = RawConfig::load(path)?;
        raw.apply_env()?;
        Self::from_raw(&raw)
    }

    pub fn domains(&self) -> Vec<String> {
        self.corpora.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn fixture(extra: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("lex.tsv"), "cake\tsyn:pie\thyp:dessert\n").unwrap();
        fs::write(dir.path().join("k.txt"), "I baked a cake.\n").unwrap();
        let conf = dir.path().join("run.conf");
        fs::write(
            &conf,
            format!("paths.lexicon = lex.tsv\ncorpus.kitchen = k.txt\n# comment\n[train]\nepochs = 3\n{extra}"),
        )
        .unwrap();
        (dir, conf)
    }

    #[test]
    fn parses_sections_defaults_and_relative_paths() {
        let (dir, conf) = fixture("");
        let cfg = RunConfig::from_raw(&RawConfig::load(&conf).unwrap()).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.domains(), ["kitchen"]);
        assert_eq!(cfg.lexicon, dir.path().join("lex.tsv"));
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
        assert!(cfg.prefixes.is_empty());
    }

    #[test]
    fn overrides_win() {
        let (_dir, conf) = fixture("");
        let mut raw = RawConfig::load(&conf).unwrap();
        raw.set("train.epochs", "7").unwrap();
        raw.set("eval.prefixes", "my mom baked a | the old").unwrap();
        let cfg = RunConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.prefixes, ["my mom baked a", "the old"]);
        assert!(matches!(raw.set("train.nope", "1"), Err(Error::Config(_))));
    }

    #[test]
    fn errors_are_config_class() {
        let (_dir, conf) = fixture("bogus = 1\n");
        let err = RawConfig::load(&conf).unwrap_err();
        assert!(err.to_string().contains("train.bogus"), "{err}");

        let (_dir, conf) = fixture("");
        let mut raw = RawConfig::load(&conf).unwrap();
        raw.set("model.n_heads", "3").unwrap();
        let err = RunConfig::from_raw(&raw).unwrap_err();
        assert_eq!(err.class().exit_code(), 2);

        let mut raw = RawConfig::load(&conf).unwrap();
        raw.set("corpus.street", "/definitely/not/here.txt").unwrap();
        assert!(matches!(RunConfig::from_raw(&raw), Err(Error::Config(_))));

        let mut raw = RawConfig::load(&conf).unwrap();
        raw.set("concept_service.url", "ftp://x").unwrap();
        assert!(matches!(RunConfig::from_raw(&raw), Err(Error::Config(_))));
    }
}
