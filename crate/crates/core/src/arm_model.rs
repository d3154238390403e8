//! Serial-arm kinematics and static wrench recovery from joint torques.
//!
//! A chain is a list of revolute joints. Each link carries the joint's
//! rotation axis (expressed in the frame preceding the joint) and a fixed
//! transform applied after the joint rotation:
//!
//! ```text
//! T_ee(q) = Π_i  Rot(axis_i, q_i) · Fixed_i
//! ```
//!
//! so with `q = 0` the end-effector pose is the product of the fixed
//! transforms alone.
//!
//! Symbol convention: throughout this crate `joint_torques` is the measured
//! torque vector and [`Wrench`] is the external force/torque applied at the
//! end effector, related statically by `joint_torques = Jᵀ · wrench`.
//! Recovery uses the transposed Moore-Penrose pseudoinverse of `J`.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const AXIS_NORM_TOLERANCE: f64 = 1e-12;
const ROTATION_TOLERANCE: f64 = 1e-9;
/// Relative singular-value cutoff for the pseudoinverse.
pub const SINGULAR_THRESHOLD: f64 = 1e-9;

/// One revolute joint followed by its rigid link.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub axis: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    links: Vec<Link>,
}

/// End-effector (or any frame) pose in the base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// `self · (rotation, translation)`.
    fn then(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Pose {
        Pose {
            rotation: self.rotation * rotation,
            translation: self.translation + self.rotation * translation,
        }
    }

    /// Maps a point given in this frame into the base frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.translation + self.rotation * p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub torques: Vec<f64>,
}

impl JointState {
    pub fn new(positions: Vec<f64>, velocities: Vec<f64>, torques: Vec<f64>) -> Result<Self> {
        let n = positions.len();
        for (name, v) in [("velocities", &velocities), ("torques", &torques)] {
            if v.len() != n {
                return Err(Error::Argument(format!(
                    "joint {name} has length {}, positions has {n}",
                    v.len()
                )));
            }
        }
        if positions
            .iter()
            .chain(&velocities)
            .chain(&torques)
            .any(|x| !x.is_finite())
        {
            return Err(Error::Argument("joint state contains non-finite values".into()));
        }
        Ok(JointState {
            positions,
            velocities,
            torques,
        })
    }
}

/// Force [N] and torque [N·m] at the end effector, base frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

impl Wrench {
    pub const ZERO: Wrench = Wrench {
        force: [0.0; 3],
        torque: [0.0; 3],
    };

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Wrench {
            force: [v[0], v[1], v[2]],
            torque: [v[3], v[4], v[5]],
        }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Wrench {
            force: [a[0], a[1], a[2]],
            torque: [a[3], a[4], a[5]],
        }
    }

    /// `(Fx, Fy, Fz, Tx, Ty, Tz)`.
    pub fn to_array(&self) -> [f64; 6] {
        let [fx, fy, fz] = self.force;
        let [tx, ty, tz] = self.torque;
        [fx, fy, fz, tx, ty, tz]
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.to_array())
    }

    /// Gravity acting on a point load of `weight` newtons whose centre of
    /// mass sits `lever` metres from the end effector (base frame).
    pub fn gravity_load(weight: f64, lever: &Vector3<f64>) -> Self {
        let force = Vector3::new(0.0, 0.0, -weight);
        let torque = lever.cross(&force);
        Wrench {
            force: force.into(),
            torque: torque.into(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkSpec {
    axis: [f64; 3],
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainSpec {
    links: Vec<LinkSpec>,
}

const REFERENCE_CHAIN_JSON: &str = include_str!("../config/gen3_like_chain.json");

impl KinematicChain {
    pub fn new(links: Vec<Link>) -> Result<Self> {
        if links.len() < 2 {
            return Err(Error::Argument(format!(
                "a chain needs at least 2 joints, got {}",
                links.len()
            )));
        }
        for (i, link) in links.iter().enumerate() {
            if (link.axis.norm() - 1.0).abs() > AXIS_NORM_TOLERANCE {
                return Err(Error::Argument(format!(
                    "link {i}: axis norm is {}, expected 1",
                    link.axis.norm()
                )));
            }
            let r = &link.rotation;
            let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
            if orth > ROTATION_TOLERANCE || (r.determinant() - 1.0).abs() > ROTATION_TOLERANCE {
                return Err(Error::Argument(format!(
                    "link {i}: fixed rotation is not a proper rotation"
                )));
            }
            if !link.translation.iter().all(|x| x.is_finite()) {
                return Err(Error::Argument(format!("link {i}: non-finite translation")));
            }
        }
        Ok(KinematicChain { links })
    }

    /// The shipped 7-DOF chain with Gen3-like link lengths.
    pub fn reference_7dof() -> Self {
        Self::from_json_str(REFERENCE_CHAIN_JSON).expect("bundled chain file is valid")
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(json);
        let spec: ChainSpec = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let links = spec
            .links
            .into_iter()
            .map(|l| Link {
                axis: Vector3::from(l.axis),
                rotation: Matrix3::from_row_slice(&l.rotation),
                translation: Vector3::from(l.translation),
            })
            .collect();
        Self::new(links)
    }

    pub fn to_json_string(&self) -> String {
        let spec = ChainSpec {
            links: self
                .links
                .iter()
                .map(|l| {
                    let mut rotation = [0.0; 9];
                    for r in 0..3 {
                        for c in 0..3 {
                            rotation[r * 3 + c] = l.rotation[(r, c)];
                        }
                    }
                    LinkSpec {
                        axis: l.axis.into(),
                        rotation,
                        translation: l.translation.into(),
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&spec).expect("chain serializes")
    }

    pub fn n_joints(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    fn check_len(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.links.len() {
            return Err(Error::Argument(format!(
                "expected {} joint positions, got {}",
                self.links.len(),
                q.len()
            )));
        }
        Ok(())
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Pose> {
        self.check_len(q)?;
        Ok(self.walk(q, |_, _, _| {}))
    }

    /// Composes the chain, reporting each joint's world axis and origin.
    fn walk(&self, q: &[f64], mut visit: impl FnMut(usize, Vector3<f64>, Vector3<f64>)) -> Pose {
        let mut pose = Pose::identity();
        for (i, (link, &qi)) in self.links.iter().zip(q).enumerate() {
            visit(i, pose.rotation * link.axis, pose.translation);
            let joint = Rotation3::from_axis_angle(&Unit::new_unchecked(link.axis), qi);
            pose = pose.then(joint.matrix(), &Vector3::zeros());
            pose = pose.then(&link.rotation, &link.translation);
        }
        pose
    }

    /// 6×n geometric Jacobian: rows 0..3 linear velocity, rows 3..6 angular
    /// velocity of the end effector per unit joint rate, base frame.
    pub fn geometric_jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(q)?;
        Ok(self.jacobian_and_pose(q).0)
    }

    pub(crate) fn jacobian_and_pose(&self, q: &[f64]) -> (DMatrix<f64>, Pose) {
        let n = self.links.len();
        let mut axes = Vec::with_capacity(n);
        let ee = self.walk(q, |_, z, p| axes.push((z, p)));
        let mut jac = DMatrix::zeros(6, n);
        for (i, (z, p)) in axes.into_iter().enumerate() {
            let lin = z.cross(&(ee.translation - p));
            for r in 0..3 {
                jac[(r, i)] = lin[r];
                jac[(r + 3, i)] = z[r];
            }
        }
        (jac, ee)
    }
}

/// The map `joint_torques -> wrench` at one configuration, i.e. `J⁺ᵀ`.
#[derive(Debug, Clone)]
pub struct WrenchMap {
    pinv_t: DMatrix<f64>,
    singular_values: DVector<f64>,
}

impl WrenchMap {
    pub fn from_jacobian(jac: &DMatrix<f64>) -> Result<Self> {
        if jac.nrows() != 6 || jac.ncols() < 6 {
            return Err(Error::Argument(format!(
                "wrench recovery needs a 6×n Jacobian with n ≥ 6, got {}×{}",
                jac.nrows(),
                jac.ncols()
            )));
        }
        let svd = jac.clone().svd(true, true);
        let sv = &svd.singular_values;
        let max = sv.max();
        let min = sv.min();
        if !(max > 0.0) || min < SINGULAR_THRESHOLD * max {
            return Err(Error::Singular {
                ratio: if max > 0.0 { min / max } else { 0.0 },
            });
        }
        let u = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        // J = U Σ Vᵀ  =>  J⁺ᵀ = U Σ⁻¹ Vᵀ
        let mut scaled = v_t.clone();
        for (mut row, s) in scaled.row_iter_mut().zip(sv.iter()) {
            row /= *s;
        }
        Ok(WrenchMap {
            pinv_t: u * scaled,
            singular_values: sv.clone(),
        })
    }

    pub fn at(chain: &KinematicChain, q: &[f64]) -> Result<Self> {
        Self::from_jacobian(&chain.geometric_jacobian(q)?)
    }

    pub fn apply(&self, joint_torques: &[f64]) -> Result<Wrench> {
        if joint_torques.len() != self.pinv_t.ncols() {
            return Err(Error::Shape {
                expected: self.pinv_t.ncols(),
                actual: joint_torques.len(),
            });
        }
        let mut out = [0.0; 6];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self
                .pinv_t
                .row(r)
                .iter()
                .zip(joint_torques)
                .map(|(a, b)| a * b)
                .sum();
        }
        Ok(Wrench::from_array(out))
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }
}

/// Minimum-norm least-squares solution of `Jᵀ · wrench = joint_torques`.
pub fn estimate_ee_wrench(
    chain: &KinematicChain,
    q: &[f64],
    joint_torques: &[f64],
) -> Result<Wrench> {
    if chain.n_joints() < 6 {
        return Err(Error::Argument(format!(
            "wrench recovery needs at least 6 joints, chain has {}",
            chain.n_joints()
        )));
    }
    WrenchMap::at(chain, q)?.apply(joint_torques)
}

/// `Jᵀ · wrench`: the joint torques that statically balance `wrench`.
pub fn joint_torques_for(jac: &DMatrix<f64>, wrench: &Wrench) -> Vec<f64> {
    (jac.transpose() * wrench.to_vector()).iter().copied().collect()
}
