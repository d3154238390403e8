//! The arm holding the source container at its pour pose.
//!
//! Only the last joint (the wrist) moves during a pour. The pour pose puts
//! the tool origin at the pour location with the tool `z` axis horizontal
//! (base `+x`) and the tool `x` axis pointing down, so that the container,
//! whose axis is tool `-x`, is upright and a positive wrist rotation tips the
//! spout downward.

use nalgebra::{Matrix3, Vector3, Vector6};

use crate::arm_model::{KinematicChain, Pose, Wrench};
use crate::pour_sim::ContainerSpec;
use crate::units::kg_to_newtons;
use crate::{Error, Result};

pub const DEFAULT_POUR_LOCATION: [f64; 3] = [0.8, 0.0, 0.35];
pub const DEFAULT_RECEIVER_HEIGHT: f64 = 0.15;

/// Seed for the pose solver: elbow bent, wrist pitched forward.
const POSE_SEED: [f64; 7] = [0.0, 0.6, 0.0, 1.9, 0.0, 0.65, 0.0];
const POSE_ITERATIONS: usize = 400;
const POSE_DAMPING: f64 = 1e-3;
const POSE_TOLERANCE: f64 = 1e-12;

fn pour_orientation() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0)
}

/// Axis-angle vector of `r`, accurate away from a half-turn.
fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    if angle < 1e-9 {
        skew * 0.5
    } else {
        skew * (angle / (2.0 * angle.sin()))
    }
}

/// Joint configuration placing the tool at `position` with the pour
/// orientation, by damped least squares from a fixed seed. Not a general IK:
/// it only has to reach the handful of workspace points used by the scene.
pub fn solve_pour_pose(chain: &KinematicChain, position: [f64; 3]) -> Result<Vec<f64>> {
    let n = chain.n_joints();
    let mut q: Vec<f64> = (0..n).map(|i| POSE_SEED.get(i).copied().unwrap_or(0.0)).collect();
    let target_p = Vector3::from(position);
    let target_r = pour_orientation();
    for _ in 0..POSE_ITERATIONS {
        let (jac, pose) = chain.jacobian_and_pose(&q);
        let dp = target_p - pose.translation;
        let dr = rotation_log(&(target_r * pose.rotation.transpose()));
        let err = Vector6::new(dp[0], dp[1], dp[2], dr[0], dr[1], dr[2]);
        if err.norm() < POSE_TOLERANCE {
            return Ok(q);
        }
        let jjt = &jac * jac.transpose() + nalgebra::DMatrix::identity(6, 6) * POSE_DAMPING;
        let Some(chol) = jjt.cholesky() else { break };
        let y = chol.solve(&nalgebra::DVector::from_column_slice(err.as_slice()));
        let dq = jac.transpose() * y;
        for (qi, d) in q.iter_mut().zip(dq.iter()) {
            *qi += d;
        }
    }
    let pose = chain.forward_kinematics(&q)?;
    let residual = (target_p - pose.translation).norm()
        + rotation_log(&(target_r * pose.rotation.transpose())).norm();
    if residual < 1e-9 {
        Ok(q)
    } else {
        Err(Error::Argument(format!(
            "pour location {position:?} is out of reach (residual {residual:.2e})"
        )))
    }
}

/// Arm, container and receiver for one trial.
#[derive(Debug, Clone)]
pub struct Scene {
    chain: KinematicChain,
    pour_pose: Vec<f64>,
    container: ContainerSpec,
    /// Container origin in the tool frame; non-zero for an off-centre grasp.
    grasp_shift: Vector3<f64>,
    receiver_height: f64,
}

impl Scene {
    /// `grasp_offset_mm` slides the container along its own axis inside the
    /// fingers.
    pub fn new(
        chain: KinematicChain,
        container: ContainerSpec,
        pour_location: [f64; 3],
        grasp_offset_mm: f64,
        receiver_height: f64,
    ) -> Result<Self> {
        if chain.n_joints() < 6 {
            return Err(Error::Argument("scene needs an arm with at least 6 joints".into()));
        }
        container.validate()?;
        let pour_pose = solve_pour_pose(&chain, pour_location)?;
        let up = Vector3::new(-1.0, 0.0, 0.0);
        let scene = Scene {
            chain,
            pour_pose,
            container,
            grasp_shift: up * (grasp_offset_mm * 1e-3),
            receiver_height,
        };
        if scene.spout_height(0.0) <= 0.0 {
            return Err(Error::Argument(format!(
                "spout sits below the receiver at pour location {pour_location:?}"
            )));
        }
        Ok(scene)
    }

    pub fn reference(pour_location: [f64; 3], grasp_offset_mm: f64) -> Result<Self> {
        Scene::new(
            KinematicChain::reference_7dof(),
            ContainerSpec::default(),
            pour_location,
            grasp_offset_mm,
            DEFAULT_RECEIVER_HEIGHT,
        )
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn container(&self) -> &ContainerSpec {
        &self.container
    }

    pub fn wrist_joint(&self) -> usize {
        self.chain.n_joints() - 1
    }

    /// Joint positions with the wrist rotated `tilt` from upright.
    pub fn joint_positions(&self, tilt: f64) -> Vec<f64> {
        let mut q = self.pour_pose.clone();
        let w = self.wrist_joint();
        q[w] += tilt;
        q
    }

    pub fn tool_pose(&self, tilt: f64) -> Pose {
        self.chain
            .forward_kinematics(&self.joint_positions(tilt))
            .expect("scene configuration has the chain's length")
    }

    fn tool_point(&self, pose: &Pose, local: [f64; 3]) -> Vector3<f64> {
        pose.transform_point(&(Vector3::from(local) + self.grasp_shift))
    }

    /// Spout lip height above the receiver rim [m].
    pub fn spout_height(&self, tilt: f64) -> f64 {
        let pose = self.tool_pose(tilt);
        self.tool_point(&pose, self.container.spout_offset_m)[2] - self.receiver_height
    }

    /// Gravity wrench of container plus `held_volume_ml` of water at the
    /// end effector, for a tool at `pose`.
    pub fn held_load(&self, pose: &Pose, held_volume_ml: f64) -> Wrench {
        let weight = kg_to_newtons(self.container.empty_mass_kg + held_volume_ml * 1e-3);
        let com = self.tool_point(pose, self.container.com_offset_m);
        Wrench::gravity_load(weight, &(com - pose.translation))
    }
}
