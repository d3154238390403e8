//! The three-state pouring controller closing the loop on a bare pour
//! simulator, with the exact poured weight as feedback.
//!
//! ```text
//! cargo run --release --example controller -- 45 150
//! ```
//! Arguments: pour speed [ml/s] and target [ml].

use pourbench::controller::{ControllerConfig, Feedback, PourController, CONTROL_PERIOD};
use pourbench::pour_sim::{ContainerSpec, PourSim, SpoutModel, SIM_DT};
use pourbench::units::{ml_to_newtons, newtons_to_ml};

fn main() -> pourbench::Result<()> {
    let arg = |i: usize, d: f64| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (speed, target) = (arg(1, 45.0), arg(2, 150.0));
    let mut ctl = PourController::new(ControllerConfig {
        pour_rate: ml_to_newtons(speed),
        target_weight: ml_to_newtons(target),
        ..ControllerConfig::default()
    })?;
    let sim = PourSim::new(&ContainerSpec::default(), SpoutModel::Fixed(0.2));
    let mut w = sim.initial_world(320.0);
    let ticks = (CONTROL_PERIOD / SIM_DT).round() as usize;
    let mut u = 0.0;
    let mut state = "";
    for k in 0.. {
        if k % ticks == 0 {
            u = ctl.tick(&Feedback {
                t: w.t,
                weight: ml_to_newtons(w.source_loss()),
                tilt: w.tilt_angle,
            });
            let now = ctl.state().name();
            if now != state {
                println!("t {:6.2}  {:>8}  poured {:6.1} ml  tilt {:.3}", w.t, now, w.source_loss(), w.tilt_angle);
                state = now;
            }
            if ctl.outcome().is_some() {
                break;
            }
        }
        w = sim.step(w, u, SIM_DT);
    }
    for c in ctl.log().iter().filter(|c| c.state == "regulate").step_by(50) {
        println!(
            "  t {:6.2}  ref {:6.1} ml  measured {:6.1} ml  u {:+.3} rad/s",
            c.t,
            newtons_to_ml(c.reference),
            newtons_to_ml(c.measured),
            c.command
        );
    }
    println!(
        "{:?}: poured {:.2} ml for a {target} ml target, {} reference built",
        ctl.outcome().unwrap(),
        w.source_loss(),
        ctl.trapezoids_built()
    );
    Ok(())
}
