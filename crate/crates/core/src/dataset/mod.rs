//! Trial sampling, closed-loop rollouts logged at 100 Hz, the ground-truth
//! time shift, splits and on-disk persistence.

mod io;
mod shift;
mod split;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use io::{
    read_commands_csv, read_manifest, read_trial, read_trial_csv, write_manifest, write_trial, DatasetManifest,
    ManifestEntry, TrialSidecar, MANIFEST_FILE, TRIAL_CSV_HEADER,
};
pub use shift::{shift_ground_truth, ShiftMode};
pub use split::{split_trials, Split, SplitCounts};

use crate::arm_model::{KinematicChain, Wrench, WrenchMap};
use crate::controller::{CommandRecord, ControllerConfig, Feedback, FsmState, Outcome, PourController};
use crate::estimator::WeightEstimator;
use crate::pour_sim::{plate_read, ContainerSpec, PourSim, SpoutModel, SIM_DT};
use crate::scene::{Scene, DEFAULT_POUR_LOCATION, DEFAULT_RECEIVER_HEIGHT};
use crate::sensor_sim::{ConditionedFrame, Conditioner, SensorConfig, TactileFeed, TorqueFeed, TACTILE_CHANNELS};
use crate::units::{kg_to_newtons, ml_to_newtons, newtons_to_ml};
use crate::{Error, Result};

/// Logging before the controller starts tilting [s].
pub const PRE_ROLL: f64 = 2.0;
/// Logging after the controller reports the target reached [s].
pub const POST_ROLL: f64 = 4.0;
const TICKS_PER_FRAME: usize = 10;

fn default_receiver_height() -> f64 {
    DEFAULT_RECEIVER_HEIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub kp: f64,
    pub kd: f64,
    /// [N/s]
    pub pour_rate: f64,
    /// [ml]
    pub source_volume: f64,
    /// [N]
    pub target_weight: f64,
    /// [mm]
    pub grasp_offset: f64,
    /// Tool position at the pour pose, base frame [m].
    pub pour_location: [f64; 3],
    pub seed: u64,
    /// Receiver rim height above the base [m].
    #[serde(default = "default_receiver_height")]
    pub receiver_height: f64,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pour_rate", self.pour_rate),
            ("source_volume", self.source_volume),
            ("target_weight", self.target_weight),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    path: format!("trial.{name}"),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        if !(self.kp >= 0.0 && self.kd >= 0.0) {
            return Err(Error::Config {
                path: "trial.kp".into(),
                message: "gains must be non-negative".into(),
            });
        }
        if self.grasp_offset.abs() > 5.0 {
            return Err(Error::Config {
                path: "trial.grasp_offset".into(),
                message: "must lie within ±5 mm".into(),
            });
        }
        Ok(())
    }

    /// `base` with this trial's gains, rate and target.
    pub fn controller_config(&self, base: &ControllerConfig) -> ControllerConfig {
        ControllerConfig {
            kp: self.kp,
            kd: self.kd,
            pour_rate: self.pour_rate,
            target_weight: self.target_weight,
            ..base.clone()
        }
    }
}

/// Sampling interval for each randomized trial parameter.
pub const KP_RANGE: (f64, f64) = (0.15, 0.8);
pub const KD_RANGE: (f64, f64) = (0.0, 0.04);
pub const POUR_RATE_RANGE: (f64, f64) = (0.1, 0.8);
pub const SOURCE_RANGE_ML: (f64, f64) = (200.0, 350.0);
pub const TARGET_RANGE: (f64, f64) = (1.0, 3.0);
/// Targets are capped to this fraction of the source weight.
pub const TARGET_CAP: f64 = 0.75;

/// Uniform draw of one training trial at the reference grasp and location.
pub fn sample_config(rng: &mut impl Rng) -> TrialConfig {
    let mut uniform = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
    let kp = uniform(KP_RANGE);
    let kd = uniform(KD_RANGE);
    let pour_rate = uniform(POUR_RATE_RANGE);
    let source_volume = uniform(SOURCE_RANGE_ML);
    let target = uniform(TARGET_RANGE);
    let cap = TARGET_CAP * ml_to_newtons(source_volume);
    TrialConfig {
        kp,
        kd,
        pour_rate,
        source_volume,
        target_weight: target.min(cap),
        grasp_offset: 0.0,
        pour_location: DEFAULT_POUR_LOCATION,
        seed: rng.random(),
        receiver_height: DEFAULT_RECEIVER_HEIGHT,
    }
}

/// One logged 100 Hz record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    pub t: f64,
    pub wrist_pos: f64,
    pub wrist_vel: f64,
    pub ee_wrench: [f64; 6],
    pub tactile_a: [f64; TACTILE_CHANNELS],
    pub tactile_b: [f64; TACTILE_CHANNELS],
    pub plate_force_raw: f64,
    pub gt_poured: f64,
}

impl SensorFrame {
    pub const N_COLUMNS: usize = 5 + 6 + 2 * TACTILE_CHANNELS;

    pub fn conditioned(&self) -> ConditionedFrame {
        ConditionedFrame {
            wrist_pos: self.wrist_pos,
            wrist_vel: self.wrist_vel,
            ee_wrench: Wrench::from_array(self.ee_wrench),
            tactile: [self.tactile_a, self.tactile_b],
            t: self.t,
        }
    }

    /// Values in CSV column order.
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(Self::N_COLUMNS);
        row.extend([self.t, self.wrist_pos, self.wrist_vel]);
        row.extend(self.ee_wrench);
        row.extend(self.tactile_a);
        row.extend(self.tactile_b);
        row.extend([self.plate_force_raw, self.gt_poured]);
        row
    }

    pub fn from_row(row: &[f64]) -> Option<Self> {
        if row.len() != Self::N_COLUMNS {
            return None;
        }
        let c = TACTILE_CHANNELS;
        Some(SensorFrame {
            t: row[0],
            wrist_pos: row[1],
            wrist_vel: row[2],
            ee_wrench: row[3..9].try_into().ok()?,
            tactile_a: row[9..9 + c].try_into().ok()?,
            tactile_b: row[9 + c..9 + 2 * c].try_into().ok()?,
            plate_force_raw: row[9 + 2 * c],
            gt_poured: row[10 + 2 * c],
        })
    }

    /// Rounds every field to the 6 decimals the CSV keeps, so that a
    /// written log reads back bit-identical.
    pub fn quantized(&self) -> Self {
        let row: Vec<f64> = self.to_row().into_iter().map(quantize).collect();
        SensorFrame::from_row(&row).expect("row has the frame's length")
    }
}

pub(crate) fn quantize(v: f64) -> f64 {
    let q = (v * 1e6).round() / 1e6;
    // Avoid writing "-0.000000".
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub config: TrialConfig,
    pub frames: Vec<SensorFrame>,
    pub outcome: Outcome,
    /// Volume that left the source, all of which ends up in the receiver [ml].
    pub final_poured: f64,
    pub commands: Vec<CommandRecord>,
}

impl TrialLog {
    /// Signed error against the target; positive means over-poured [ml].
    pub fn error_ml(&self) -> f64 {
        self.final_poured - newtons_to_ml(self.config.target_weight)
    }
}

/// Where the controller's weight signal comes from.
#[derive(Clone, Copy)]
pub enum FeedbackSource<'a> {
    /// Filtered receiving-plate force (training mode).
    Plate,
    /// The exact weight that has left the source; a perfect estimator.
    GroundTruth,
    /// Estimator output on the conditioned frame (deployment mode).
    Estimator(&'a dyn WeightEstimator),
}

impl std::fmt::Debug for FeedbackSource<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeedbackSource::Plate => "Plate",
            FeedbackSource::GroundTruth => "GroundTruth",
            FeedbackSource::Estimator(_) => "Estimator",
        })
    }
}

/// Everything about a rollout that is shared across trials.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub chain: KinematicChain,
    pub container: ContainerSpec,
    pub sensors: SensorConfig,
    pub controller: ControllerConfig,
    pub shift: ShiftMode,
}

impl Default for TrialSetup {
    fn default() -> Self {
        TrialSetup {
            chain: KinematicChain::reference_7dof(),
            container: ContainerSpec::default(),
            sensors: SensorConfig::default(),
            controller: ControllerConfig::default(),
            shift: ShiftMode::default(),
        }
    }
}

/// Independent sub-seed `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Baseline,
    PreRoll,
    Control,
    PostRoll,
}

/// Per-frame quantities needed after the rollout but not logged.
struct Trace {
    plate: Vec<f64>,
    spout_height: Vec<f64>,
}

/// Arm quantities at one wrist angle; only recomputed when the wrist moves.
struct Kinematics {
    tilt: f64,
    q: Vec<f64>,
    jac: nalgebra::DMatrix<f64>,
    pose: crate::arm_model::Pose,
    map: WrenchMap,
}

/// Runs one trial: baseline, 2 s of still logging, the controller, then 4 s
/// after the target is reached.
pub fn run_and_log(setup: &TrialSetup, config: &TrialConfig, feedback: FeedbackSource<'_>) -> Result<TrialLog> {
    config.validate()?;
    setup.sensors.validate()?;
    let scene = Arc::new(Scene::new(
        setup.chain.clone(),
        setup.container.clone(),
        config.pour_location,
        config.grasp_offset,
        config.receiver_height,
    )?);
    let sim = PourSim::new(&setup.container, SpoutModel::Arm(scene.clone()));
    let mut controller = PourController::new(config.controller_config(&setup.controller))?;
    let n = scene.chain().n_joints();
    let mut torque = TorqueFeed::new(&setup.sensors, n, derive_seed(config.seed, 1));
    let mut tactile = TactileFeed::new(&setup.sensors, derive_seed(config.seed, 2));
    let mut conditioner = Conditioner::default();
    let empty_weight = kg_to_newtons(setup.container.empty_mass_kg);

    let mut world = sim.initial_world(config.source_volume);
    let mut wrist_cmd = 0.0;
    let mut phase = Phase::Baseline;
    let mut phase_start = 0.0;
    let mut frames = Vec::new();
    let mut trace = Trace {
        plate: Vec::new(),
        spout_height: Vec::new(),
    };
    let mut cached: Option<Kinematics> = None;
    let mut post_roll_end = f64::INFINITY;
    let mut k: usize = 0;

    loop {
        let tilt = world.tilt_angle;
        if cached.as_ref().is_none_or(|c| c.tilt != tilt) {
            let q = scene.joint_positions(tilt);
            let (jac, pose) = scene.chain().jacobian_and_pose(&q);
            let map = WrenchMap::from_jacobian(&jac)?;
            cached = Some(Kinematics { tilt, q, jac, pose, map });
        }
        let kin = cached.as_ref().expect("just filled");
        let load = scene.held_load(&kin.pose, world.source_volume);
        let lambda = torque.sample(&kin.jac, &kin.q, &load);
        conditioner.push_wrench(&kin.map.apply(&lambda)?);
        if k % TICKS_PER_FRAME == TICKS_PER_FRAME - 1 {
            let held = empty_weight + ml_to_newtons(world.source_volume);
            conditioner.push_tactile(&tactile.sample(held, tilt, config.grasp_offset, world.t));
        }
        world = sim.step(world, wrist_cmd, SIM_DT);
        k += 1;
        if k % TICKS_PER_FRAME != 0 {
            continue;
        }

        conditioner.set_wrist(world.tilt_angle, wrist_cmd);
        let Some(frame) = conditioner.frame(world.t) else {
            continue;
        };
        let t = world.t;
        match phase {
            Phase::Baseline => {
                phase = Phase::PreRoll;
                phase_start = t;
            }
            Phase::PreRoll if t - phase_start >= PRE_ROLL - 1e-9 => phase = Phase::Control,
            _ => {}
        }
        let plate = plate_read(&world).force;
        let active = matches!(phase, Phase::Control | Phase::PostRoll) && controller.outcome().is_none();
        if active {
            let weight = match feedback {
                FeedbackSource::Plate => plate,
                FeedbackSource::GroundTruth => ml_to_newtons(world.source_loss()),
                FeedbackSource::Estimator(est) => est.predict(&frame),
            };
            wrist_cmd = controller.tick(&Feedback {
                t,
                weight,
                tilt: world.tilt_angle,
            });
        } else {
            wrist_cmd = 0.0;
        }
        if phase == Phase::Control {
            if let Some(t_hit) = controller.target_reached_at() {
                // Keeps ticking through the return to upright.
                phase = Phase::PostRoll;
                post_roll_end = t_hit + POST_ROLL;
            } else if controller.outcome().is_some() {
                post_roll_end = t;
            }
        }
        frames.push(SensorFrame {
            t,
            wrist_pos: frame.wrist_pos,
            wrist_vel: frame.wrist_vel,
            ee_wrench: frame.ee_wrench.to_array(),
            tactile_a: frame.tactile[0],
            tactile_b: frame.tactile[1],
            plate_force_raw: plate,
            gt_poured: 0.0,
        });
        trace.plate.push(plate);
        trace.spout_height.push(world.spout_height);
        if t >= post_roll_end - 1e-9 {
            break;
        }
    }

    let mut outcome = controller.outcome().unwrap_or(match controller.state() {
        FsmState::ReturnUpright { .. } => Outcome::Completed,
        _ => Outcome::Timeout,
    });
    if outcome == Outcome::Completed && world.source_volume <= 1e-9 {
        outcome = Outcome::EmptiedSource;
    }
    let gt = shift_ground_truth(&trace.plate, &trace.spout_height, setup.shift, frames_period());
    for (f, g) in frames.iter_mut().zip(gt) {
        f.gt_poured = g;
        *f = f.quantized();
    }
    Ok(TrialLog {
        config: config.clone(),
        frames,
        outcome,
        final_poured: world.source_loss(),
        commands: controller.log().to_vec(),
    })
}

fn frames_period() -> f64 {
    SIM_DT * TICKS_PER_FRAME as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_respect_ranges_and_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let c = sample_config(&mut rng);
            assert!((KP_RANGE.0..=KP_RANGE.1).contains(&c.kp));
            assert!((KD_RANGE.0..=KD_RANGE.1).contains(&c.kd));
            assert!((POUR_RATE_RANGE.0..=POUR_RATE_RANGE.1).contains(&c.pour_rate));
            assert!((SOURCE_RANGE_ML.0..=SOURCE_RANGE_ML.1).contains(&c.source_volume));
            assert!(c.target_weight <= TARGET_CAP * ml_to_newtons(c.source_volume) + 1e-12);
            assert!(c.target_weight <= TARGET_RANGE.1);
            assert!(c.target_weight >= 1.0 || c.target_weight == TARGET_CAP * ml_to_newtons(c.source_volume));
        }
        let a = sample_config(&mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_config(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn cap_at_the_smallest_source() {
        assert!((TARGET_CAP * ml_to_newtons(200.0) - 1.47).abs() < 1e-12);
    }

    #[test]
    fn quantized_frames_survive_text() {
        let f = SensorFrame {
            t: 1.23,
            wrist_pos: 0.123_456_789,
            wrist_vel: -1e-9,
            ee_wrench: [0.1, -0.2, 3.3, 1e-7, -0.5, 0.0],
            tactile_a: [12.345_678_9; 19],
            tactile_b: [-7.0; 19],
            plate_force_raw: 0.999_999_9,
            gt_poured: 2.5,
        }
        .quantized();
        for v in f.to_row() {
            let s = format!("{v:.6}");
            assert_eq!(s.parse::<f64>().unwrap(), v);
            assert!(!s.starts_with("-0.000000"));
        }
    }
}
