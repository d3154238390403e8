//! Train one weight estimator on freshly simulated trials and compare its
//! test MSE with the analytical Fz baseline.
//!
//! ```text
//! cargo run --release --example train_estimator -- proprioceptive 40 200
//! ```
//! Arguments: estimator kind, number of trials, epochs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use pourbench::dataset::{run_and_log, sample_config, split_trials, FeedbackSource, SplitCounts, TrialSetup};
use pourbench::estimator::{evaluate_mse, train, AnalyticalFz, EstimatorKind, Scored, TrainConfig};

fn main() -> pourbench::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let kind = EstimatorKind::parse(args.get(1).map_or("proprioceptive", |s| s.as_str()))?;
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(40);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(200);

    let setup = TrialSetup::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let configs: Vec<_> = (0..n).map(|_| sample_config(&mut rng)).collect();
    let logs = configs
        .par_iter()
        .map(|c| run_and_log(&setup, c, FeedbackSource::Plate))
        .collect::<pourbench::Result<Vec<_>>>()?;
    let held = (n / 8).max(1);
    let (tr, va, te) = split_trials(&logs, SplitCounts { train: n - 2 * held, val: held, test: held }, 3)?;
    println!("{} train frames", tr.iter().map(|t| t.frames.len()).sum::<usize>());

    // same schedule shape as the full run, compressed to `epochs`
    let config = TrainConfig {
        epochs,
        lr_decay_every: (epochs / 16).max(1),
        ..TrainConfig::default()
    };
    let out = train(kind, &tr, &va, &config, 1)?;
    let c = &out.curves;
    for e in (0..epochs).step_by((epochs / 10).max(1)) {
        println!("epoch {e:5}  train {:.3e}  val {:.3e}", c.train[e], c.val[e]);
    }
    println!("best epoch {}, train mse {:.3e} -> {:.3e}", c.best_epoch, c.initial_train, c.final_train);
    let model = evaluate_mse(Scored::Estimator(&out.best), &te)?;
    let fz = evaluate_mse(Scored::Estimator(&AnalyticalFz), &te)?;
    println!("test mse: {kind} {model:.3e} N², analytical_fz {fz:.3e} N²");
    Ok(())
}
