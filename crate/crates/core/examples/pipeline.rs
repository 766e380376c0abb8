//! Runs the whole experiment through the library pipeline on the bundled
//! demo configuration: extraction, derived datasets, training of a few
//! variants, evaluation and inspection. Outputs land in a directory given
//! on the command line, or a fresh temporary one.
//!
//! ```text
//! cargo run --release --example pipeline -- /tmp/ncp-demo
//! ```

use std::path::Path;

use ncp::config::RawConfig;
use ncp::config::RunConfig;
use ncp::pipeline::{cmd_augment, cmd_eval, cmd_extract, cmd_gradcheck, cmd_inspect, cmd_train, select_domains, select_variants};

const VARIANTS: &str = "base,\
ncp-loss/synonym/context-aware/kitchen,ncp-loss/synonym/context-aware/street,\
ncp-augmentation/synonym/context-aware/kitchen,ncp-augmentation/synonym/context-aware/street,\
ntp-baseline/synonym/kitchen,ntp-baseline/synonym/street";

fn main() -> anyhow::Result<()> {
    let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo/demo.conf");
    let out = match std::env::args().nth(1) {
        Some(p) => p,
        None => std::env::temp_dir().join(format!("ncp-pipeline-{}", std::process::id())).display().to_string(),
    };

    let mut raw = RawConfig::load(&conf)?;
    raw.apply_env()?;
    raw.set("paths.out", &out)?;
    raw.set("run.variants", VARIANTS)?;
    let cfg = RunConfig::from_raw(&raw)?;
    let domains = select_domains(&cfg, None)?;
    let variants = select_variants(&cfg, None)?;

    for s in cmd_extract(&cfg, &domains)?.into_iter().chain(cmd_augment(&cfg, &domains)?) {
        println!("{}: {} sentences, {} datasets", s.domain, s.sentences, s.datasets.len());
    }
    for (kind, rep) in cmd_gradcheck(&cfg, &domains[0])? {
        println!("gradcheck {kind}: {:.2e}", rep.max_rel_error);
    }
    for s in cmd_train(&cfg, &variants)? {
        println!("trained {:<48} train {:?} val {:?}", s.variant, s.final_train_loss, s.final_val_loss);
    }
    let eval = cmd_eval(&cfg, &variants, &domains)?;
    for r in &eval.results {
        println!("{:<48} {:<8} {} {:.2}", r.model_id, r.domain, r.metric, r.value);
    }
    for p in &eval.reports {
        println!("wrote {}", p.display());
    }
    let ncp_loss: Vec<_> = variants.iter().filter(|v| v.family().starts_with("ncp-loss")).cloned().collect();
    print!("{}", cmd_inspect(&cfg, &ncp_loss, &cfg.prefixes)?);
    Ok(())
}
