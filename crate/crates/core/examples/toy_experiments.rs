//! Runs the two synthetic probes over five seeds. The flattening probe
//! checks that augmented training spreads probability over a concept's
//! members more evenly than a volume-matched baseline on skewed data. The
//! held-out probe scores members never seen as surface words in training.
//!
//! ```text
//! cargo run --release --example toy_experiments
//! ```

use ncp::experiments::{ExperimentConfig, flattening, held_out};

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::default();
    for seed in 0..5 {
        let t = std::time::Instant::now();
        let f = flattening(&cfg, seed)?;
        let h = held_out(&cfg, seed)?;
        println!("{f:?}\n{h:?}\n  {:.1}s", t.elapsed().as_secs_f64());
    }
    Ok(())
}
