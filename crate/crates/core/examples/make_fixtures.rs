//! Regenerates the synthetic data directory under `fixtures/data`.
//!
//! cargo run --example make_fixtures

use std::path::Path;

use hofmtl_core::corpus::{synth_fixture, write_jsonl, SynthSpec, TEST_FILE};

fn main() -> hofmtl_core::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/data");
    std::fs::create_dir_all(&dir).expect("create fixtures/data");
    let spec = SynthSpec::new(&[("hof", 120), ("sentiment", 80), ("emotion", 80), ("target", 80)], 0.9);
    for (task, ds) in synth_fixture(&spec, 2024)? {
        write_jsonl(&ds, &dir.join(format!("{task}.jsonl")))?;
    }
    let held = SynthSpec::new(&[("hof", 60)], 0.9);
    let test = &synth_fixture(&held, 2025)?["hof"];
    write_jsonl(test, &dir.join(TEST_FILE))?;
    println!("wrote {}", dir.display());
    Ok(())
}
