//! Raw torque and tactile feeds for a held container, the conditioned
//! 100 Hz frames they turn into, and how an off-centre grasp moves the
//! tactile electrodes.
//!
//! ```text
//! cargo run --release --example sensor_feeds
//! ```

use pourbench::arm_model::WrenchMap;
use pourbench::scene::{Scene, DEFAULT_POUR_LOCATION};
use pourbench::sensor_sim::{Conditioner, SensorConfig, TactileFeed, TorqueFeed};
use pourbench::units::{kg_to_newtons, ml_to_newtons};

fn main() -> pourbench::Result<()> {
    let scene = Scene::reference(DEFAULT_POUR_LOCATION, 0.0)?;
    let cfg = SensorConfig::default();
    let q = scene.joint_positions(0.0);
    let pose = scene.tool_pose(0.0);
    let jac = scene.chain().geometric_jacobian(&q)?;
    let map = WrenchMap::from_jacobian(&jac)?;
    let mut torque = TorqueFeed::new(&cfg, q.len(), 1);
    let mut tactile = TactileFeed::new(&cfg, 2);
    let mut cond = Conditioner::default();

    // 2 s holding 250 ml, then 50 ml vanish from the hand for 1 s
    let empty = kg_to_newtons(scene.container().empty_mass_kg);
    for k in 0..3000 {
        let held = if k < 2000 { 250.0 } else { 200.0 };
        cond.push_wrench(&map.apply(&torque.sample(&jac, &q, &scene.held_load(&pose, held)))?);
        if k % 10 == 9 {
            let t = (k + 1) as f64 * 1e-3;
            cond.push_tactile(&tactile.sample(empty + ml_to_newtons(held), 0.0, 0.0, t));
            if let Some(f) = cond.frame(t) {
                if (k + 1) % 250 == 0 {
                    let a = &f.tactile[0];
                    println!("t {:.2}  Fz {:+.4} N  tactile a[0..3] {:+.2?}", t, f.ee_wrench.force[2], &a[..3]);
                }
            }
        }
    }
    println!("expected Fz after the drop: {:+.4} N", ml_to_newtons(50.0));

    let w = empty + ml_to_newtons(250.0);
    let (centred, _) = tactile.expected(w, 0.0, 0.0);
    let (shifted, _) = tactile.expected(w, 0.0, 1.5);
    println!("\nelectrode  centred  1.5 mm off  change");
    for (i, (c, s)) in centred.iter().zip(&shifted).enumerate() {
        println!("{i:>9} {c:8.2} {s:11.2} {:+6.0}%", (s / c - 1.0) * 100.0);
    }
    Ok(())
}
