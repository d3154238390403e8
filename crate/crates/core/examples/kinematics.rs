//! Forward kinematics, the geometric Jacobian and wrench recovery for the
//! reference 7-DOF arm at its pour pose.
//!
//! ```text
//! cargo run --release --example kinematics
//! ```

use pourbench::arm_model::{joint_torques_for, WrenchMap};
use pourbench::scene::{Scene, DEFAULT_POUR_LOCATION};

fn main() -> pourbench::Result<()> {
    let scene = Scene::reference(DEFAULT_POUR_LOCATION, 0.0)?;
    let q = scene.joint_positions(0.0);
    let pose = scene.tool_pose(0.0);
    println!("pour pose q = {:.3?}", q);
    println!("tool at {:.4?}", pose.translation.as_slice());

    let jac = scene.chain().geometric_jacobian(&q)?;
    let map = WrenchMap::from_jacobian(&jac)?;
    println!("jacobian singular values {:.3?}", map.singular_values().as_slice());

    // 250 ml held, then 100 ml of it poured
    for held in [250.0, 150.0] {
        let load = scene.held_load(&pose, held);
        let lambda = joint_torques_for(&jac, &load);
        let back = map.apply(&lambda)?;
        println!(
            "held {held:>5.1} ml: joint torques {:.3?}  ->  wrench {:.4?}",
            lambda,
            back.to_array()
        );
    }
    println!("Fz difference is the poured weight: 100 ml = 0.98 N");
    Ok(())
}
