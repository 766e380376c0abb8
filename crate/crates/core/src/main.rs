use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ncp::config::{RawConfig, RunConfig};
use ncp::error::{Error, Result};
use ncp::pipeline::{self, GRADCHECK_LIMIT};

/// Concept-level post-training pipeline for tiny language models.
///
/// Besides the flags below, any configuration key can be overridden as
/// `--section.key value` (for example `--train.epochs 3`).
#[derive(Parser)]
#[command(name = "ncp", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// A single variant id, e.g. ncp-loss/synonym/context-free/demo or base.
    #[arg(long)]
    variant: Option<String>,
    /// Restrict to one configured domain.
    #[arg(long)]
    domain: Option<String>,
    /// Overrides paths.out.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Detect target nouns, resolve concept sets, write split record files.
    Extract(Common),
    /// Write augmented and inflated datasets; build the tokenizer.
    Augment(Common),
    /// Train one variant (--variant) or every variant in run.variants.
    Train(Common),
    /// Perplexities, transfer matrices and top-k reports.
    Eval(Common),
    /// Print top-k next tokens for prefixes.
    Inspect {
        #[command(flatten)]
        common: Common,
        /// Prefix to complete; repeatable. Defaults to eval.prefixes.
        #[arg(long)]
        prefix: Vec<String>,
    },
    /// Finite-difference check of both objectives on a toy model.
    Gradcheck(Common),
}

/// Splits `--a.b value` / `--a.b=value` pairs off the argument list.
fn take_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--").filter(|k| k.split('=').next().is_some_and(|k| k.contains('.'))) {
            Some(kv) => match kv.split_once('=') {
                Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
                None => overrides.push((kv.to_string(), it.next().unwrap_or_default())),
            },
            None => rest.push(a),
        }
    }
    (rest, overrides)
}

fn load(common: &Common, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut raw = RawConfig::load(&common.config)?;
    raw.apply_env()?;
    for (k, v) in overrides {
        raw.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        raw.set("run.seed", &seed.to_string())?;
    }
    if let Some(out) = &common.out {
        raw.set("paths.out", &out.to_string_lossy())?;
    }
    RunConfig::from_raw(&raw)
}

fn run(cmd: Cmd, overrides: &[(String, String)]) -> Result<()> {
    match cmd {
        Cmd::Extract(c) | Cmd::Augment(c) if c.variant.is_some() => {
            Err(Error::Config("--variant does not apply to this command".into()))
        }
        Cmd::Extract(c) => {
            let cfg = load(&c, overrides)?;
            let domains = pipeline::select_domains(&cfg, c.domain.as_deref())?;
            for s in pipeline::cmd_extract(&cfg, &domains)? {
                println!("{}: {} sentences", s.domain, s.sentences);
                for (k, tr, va, te) in s.datasets {
                    println!("  {k:<28} train {tr:>5}  val {va:>5}  test {te:>5}");
                }
            }
            Ok(())
        }
        Cmd::Augment(c) => {
            let cfg = load(&c, overrides)?;
            let domains = pipeline::select_domains(&cfg, c.domain.as_deref())?;
            for s in pipeline::cmd_augment(&cfg, &domains)? {
                println!("{}:", s.domain);
                for (k, tr, va, te) in s.datasets {
                    println!("  {k:<28} train {tr:>5}  val {va:>5}  test {te:>5}");
                }
            }
            Ok(())
        }
        Cmd::Train(c) => {
            let cfg = load(&c, overrides)?;
            let variants = pipeline::select_variants(&cfg, c.variant.as_deref())?;
            for s in pipeline::cmd_train(&cfg, &variants)? {
                let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{:<48} train {:>8}  val {:>8}  {}",
                    s.variant,
                    fmt(s.final_train_loss),
                    fmt(s.final_val_loss),
                    s.checkpoint.display()
                );
            }
            Ok(())
        }
        Cmd::Eval(c) => {
            let cfg = load(&c, overrides)?;
            let variants = pipeline::select_variants(&cfg, c.variant.as_deref())?;
            let domains = pipeline::select_domains(&cfg, c.domain.as_deref())?;
            let out = pipeline::cmd_eval(&cfg, &variants, &domains)?;
            for r in &out.results {
                println!("{:<48} {:<8} {} {:>12.4}", r.model_id, r.domain, r.metric, r.value);
            }
            for p in &out.reports {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Cmd::Inspect { common, prefix } => {
            let cfg = load(&common, overrides)?;
            let variants = pipeline::select_variants(&cfg, common.variant.as_deref())?;
            let prefixes = if prefix.is_empty() { cfg.prefixes.clone() } else { prefix };
            print!("{}", pipeline::cmd_inspect(&cfg, &variants, &prefixes)?);
            Ok(())
        }
        Cmd::Gradcheck(c) => {
            let cfg = load(&c, overrides)?;
            let domain = match c.domain {
                Some(d) => pipeline::select_domains(&cfg, Some(&d))?.remove(0),
                None => cfg.domains().remove(0),
            };
            let reports = pipeline::cmd_gradcheck(&cfg, &domain)?;
            for (kind, r) in &reports {
                println!(
                    "{kind}: max relative error {:.3e} at {}[{}] over {} parameters",
                    r.max_rel_error, r.worst.0, r.worst.1, r.checked
                );
            }
            match reports.iter().find(|(_, r)| r.max_rel_error.is_nan() || r.max_rel_error >= GRADCHECK_LIMIT) {
                Some((kind, r)) => Err(Error::GradientCheck {
                    objective: kind.to_string(),
                    max_rel_error: r.max_rel_error,
                    limit: GRADCHECK_LIMIT,
                }),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = take_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(cli.cmd, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
