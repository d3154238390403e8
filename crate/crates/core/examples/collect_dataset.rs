//! Simulate plate-feedback training trials and write them to disk the same
//! way `pourbench collect` does.
//!
//! ```text
//! cargo run --release --example collect_dataset -- /tmp/pour_ds 24
//! ```

use std::path::PathBuf;

use pourbench::config::ExperimentConfig;
use pourbench::dataset::{SplitCounts, TRIAL_CSV_HEADER};
use pourbench::pipeline::{self, RunOptions};

fn main() -> pourbench::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or("pour_dataset".into()));
    let n: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(24);
    let mut config = ExperimentConfig::default();
    // the default 210/20/20 split needs 250 trials
    let held = (n / 6).max(1);
    config.trial.split = SplitCounts { train: n - 2 * held, val: held, test: held };
    let opts = RunOptions { config_path: None, seed: config.seed, jobs: None };

    let summary = pipeline::collect(&config, n, &opts, &out)?;
    let m = &summary.manifest;
    println!("wrote {} trials to {} (manifest sha256 {})", m.trials.len(), out.display(), summary.manifest_hash);
    println!("columns: {}", TRIAL_CSV_HEADER.split(',').count());
    for e in m.trials.iter().take(5) {
        let log = pourbench::dataset::read_trial(&out, e)?;
        println!(
            "{}  {:<5}  {:5} frames  target {:.3} N  poured {:.1} ml  ({})",
            e.csv,
            format!("{:?}", e.split),
            log.frames.len(),
            log.config.target_weight,
            log.final_poured,
            log.outcome.as_str()
        );
    }
    Ok(())
}
