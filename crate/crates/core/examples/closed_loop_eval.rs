//! Deploy an estimator in the loop: the 12-row accuracy grid, then the
//! novel-location and novel-grasp runs.
//!
//! ```text
//! cargo run --release --example closed_loop_eval                 # analytical Fz
//! cargo run --release --example closed_loop_eval -- model.json   # a trained model
//! cargo run --release --example closed_loop_eval -- oracle       # exact feedback
//! ```

use std::path::Path;

use pourbench::config::EvalBlock;
use pourbench::dataset::{FeedbackSource, TrialSetup};
use pourbench::estimator::{Estimator, TrainedModel};
use pourbench::evalkit::{eval_grid, generalization_sweep, Report};

fn main() -> pourbench::Result<()> {
    let arg = std::env::args().nth(1);
    let est = match arg.as_deref() {
        None | Some("oracle") => Estimator::AnalyticalFz,
        Some(p) => Estimator::Trained(TrainedModel::load(Path::new(p))?),
    };
    let (feedback, label) = match arg.as_deref() {
        Some("oracle") => (FeedbackSource::GroundTruth, "oracle".to_string()),
        _ => (FeedbackSource::Estimator(&est), est.kind().to_string()),
    };
    let setup = TrialSetup::default();
    let eval = EvalBlock::default();

    let grid = eval_grid(&setup, feedback, &label, eval.pour_location, 9)?;
    let sweep = generalization_sweep(&setup, feedback, &label, &eval, 9)?;
    print!("{}", Report::new(&label, &grid, Some(&sweep)).tables());
    Ok(())
}
