//! Regenerates the bundled demo corpus, lexicon, cassette and config.
//!
//! ```text
//! cargo run --example demo_data -- crates/core/data/demo
//! ```

use std::path::PathBuf;

use ncp::grammar::{DemoSpec, write_demo};

fn main() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/demo"));
    write_demo(&dir, &DemoSpec::default())?;
    for entry in std::fs::read_dir(&dir)? {
        let entry = entry?;
        println!("{:>8} bytes  {}", entry.metadata()?.len(), entry.path().display());
    }
    Ok(())
}
