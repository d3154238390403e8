//! Tilt a full container over the receiver and watch water leave the
//! source, fall and register on the filtered plate.
//!
//! ```text
//! cargo run --release --example pour_sim
//! ```

use std::sync::Arc;

use pourbench::pour_sim::{free_fall_delay, plate_read, ContainerSpec, PourSim, SpoutModel, SIM_DT};
use pourbench::scene::{Scene, DEFAULT_POUR_LOCATION};
use pourbench::units::ml_to_newtons;

fn main() -> pourbench::Result<()> {
    let scene = Arc::new(Scene::reference(DEFAULT_POUR_LOCATION, 0.0)?);
    let sim = PourSim::new(&ContainerSpec::default(), SpoutModel::Arm(scene));
    let mut w = sim.initial_world(300.0);
    println!("spout {:.3} m above the rim, free fall {:.3} s", w.spout_height, free_fall_delay(w.spout_height)?);
    println!("    t   tilt  source  flight  recv   plate[N]  source loss[N]");
    for k in 0..12_000 {
        let vel = match k {
            0..=2999 => 0.4,
            3000..=6999 => 0.0,
            7000..=7999 => -1.2,
            _ => 0.0,
        };
        w = sim.step(w, vel, SIM_DT);
        if (k + 1) % 500 == 0 {
            println!(
                "{:5.1} {:6.3} {:7.1} {:6.2} {:6.1} {:9.4} {:9.4}",
                w.t,
                w.tilt_angle,
                w.source_volume,
                w.in_flight_volume(),
                w.received_volume,
                plate_read(&w).force,
                ml_to_newtons(w.source_loss())
            );
        }
    }
    println!("mass residual {:.1e} ml", w.mass_residual());
    Ok(())
}
