//! Synthetic sensor feeds and the window/baseline conditioning applied before
//! logging or estimation.
//!
//! Clocks are integer multiples of the 1 kHz torque clock: tactile frames
//! every 10 torque samples, conditioned frames on the same 100 Hz grid.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::arm_model::Wrench;

pub const TORQUE_HZ: f64 = 1000.0;
pub const TACTILE_HZ: f64 = 100.0;
pub const CONDITIONED_HZ: f64 = 100.0;
pub const TACTILE_CHANNELS: usize = 19;
/// Torque samples per conditioned window (100 ms).
pub const WRENCH_WINDOW: usize = 100;
/// Tactile frames per conditioned window (100 ms).
pub const TACTILE_WINDOW: usize = 10;
/// Torque samples in the 1 s baseline.
pub const WRENCH_BASELINE: usize = 1000;
/// Tactile frames in the 1 s baseline.
pub const TACTILE_BASELINE: usize = 100;

/// Noise and gain parameters of the synthetic sensors (the `sensors` config
/// block). Per-channel coefficients are drawn once from `coefficient_seed`;
/// they describe the hardware, not a trial, and stay fixed across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    /// White noise per joint [N·m].
    pub torque_noise_std: f64,
    /// Random-walk drift per joint [N·m/√s].
    pub torque_drift_std: f64,
    /// Scale of the configuration-dependent self-weight residual [N·m].
    pub torque_bias_amplitude: f64,
    pub tactile_noise_std: f64,
    /// Mean weight gain per electrode [units/N].
    pub tactile_gain: f64,
    /// Half-width of the uniform spread around `tactile_gain`.
    pub tactile_gain_spread: f64,
    /// Amplitude of the tilt-dependent shear term [units/N].
    pub tactile_tilt_gain: f64,
    /// Largest per-electrode log-gain change per millimetre of grasp offset.
    pub tactile_offset_sensitivity: f64,
    pub coefficient_seed: u64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            torque_noise_std: 0.15,
            torque_drift_std: 0.002,
            torque_bias_amplitude: 0.04,
            tactile_noise_std: 1.0,
            tactile_gain: 30.0,
            tactile_gain_spread: 20.0,
            tactile_tilt_gain: 1.5,
            tactile_offset_sensitivity: 0.45,
            coefficient_seed: 5,
        }
    }
}

impl SensorConfig {
    pub fn noise_free() -> Self {
        SensorConfig {
            torque_noise_std: 0.0,
            torque_drift_std: 0.0,
            tactile_noise_std: 0.0,
            ..SensorConfig::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let fields = [
            ("torque_noise_std", self.torque_noise_std),
            ("torque_drift_std", self.torque_drift_std),
            ("torque_bias_amplitude", self.torque_bias_amplitude),
            ("tactile_noise_std", self.tactile_noise_std),
            ("tactile_gain_spread", self.tactile_gain_spread),
            ("tactile_tilt_gain", self.tactile_tilt_gain),
            ("tactile_offset_sensitivity", self.tactile_offset_sensitivity),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(crate::Error::Config {
                    path: format!("sensors.{name}"),
                    message: format!("must be finite and non-negative, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Smooth residual of the arm's own weight that the torque sensors report on
/// top of the payload: `b_j(q) = Σ_k M_jk sin q_k + N_jk cos q_k`.
#[derive(Debug, Clone)]
pub struct SelfWeightBias {
    sin_coef: DMatrix<f64>,
    cos_coef: DMatrix<f64>,
}

impl SelfWeightBias {
    pub fn new(n_joints: usize, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB1A5);
        let mut draw = || DMatrix::from_fn(n_joints, n_joints, |_, _| amplitude * rng.random_range(-1.0..1.0));
        let sin_coef = draw();
        let cos_coef = draw();
        SelfWeightBias { sin_coef, cos_coef }
    }

    pub fn at(&self, q: &[f64]) -> Vec<f64> {
        let n = self.sin_coef.nrows();
        (0..n)
            .map(|j| {
                q.iter()
                    .enumerate()
                    .map(|(k, qk)| self.sin_coef[(j, k)] * qk.sin() + self.cos_coef[(j, k)] * qk.cos())
                    .sum()
            })
            .collect()
    }
}

/// Joint-torque sensor: `λ = Jᵀ·w + bias(q) + noise + drift`, one sample per
/// call at 1 kHz.
#[derive(Debug, Clone)]
pub struct TorqueFeed {
    bias: SelfWeightBias,
    noise: Normal<f64>,
    drift_step: f64,
    drift: Vec<f64>,
    rng: ChaCha8Rng,
}

impl TorqueFeed {
    pub fn new(config: &SensorConfig, n_joints: usize, noise_seed: u64) -> Self {
        TorqueFeed {
            bias: SelfWeightBias::new(n_joints, config.torque_bias_amplitude, config.coefficient_seed),
            noise: Normal::new(0.0, config.torque_noise_std).expect("validated"),
            drift_step: config.torque_drift_std * (1.0 / TORQUE_HZ).sqrt(),
            drift: vec![0.0; n_joints],
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
        }
    }

    pub fn bias(&self) -> &SelfWeightBias {
        &self.bias
    }

    /// One torque sample for the Jacobian `jac` at `q` carrying `load`.
    pub fn sample(&mut self, jac: &DMatrix<f64>, q: &[f64], load: &Wrench) -> Vec<f64> {
        let w = load.to_array();
        let bias = self.bias.at(q);
        (0..jac.ncols())
            .map(|j| {
                let clean: f64 = (0..6).map(|r| jac[(r, j)] * w[r]).sum();
                let z: f64 = self.rng.sample(StandardNormal);
                self.drift[j] += self.drift_step * z;
                clean + bias[j] + self.noise.sample(&mut self.rng) + self.drift[j]
            })
            .collect()
    }
}

/// Convenience form of [`TorqueFeed`]: `n` consecutive samples at a static
/// configuration holding a point weight at the end effector.
pub fn torque_feed(
    chain: &crate::arm_model::KinematicChain,
    q: &[f64],
    true_held_weight: f64,
    noise_seed: u64,
    config: &SensorConfig,
    n: usize,
) -> crate::Result<Vec<Vec<f64>>> {
    let jac = chain.geometric_jacobian(q)?;
    let load = Wrench::gravity_load(true_held_weight, &nalgebra::Vector3::zeros());
    let mut feed = TorqueFeed::new(config, chain.n_joints(), noise_seed);
    Ok((0..n).map(|_| feed.sample(&jac, q, &load)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TactileFrame {
    pub channels_a: [f64; TACTILE_CHANNELS],
    pub channels_b: [f64; TACTILE_CHANNELS],
    pub t: f64,
}

#[derive(Debug, Clone)]
struct FingerModel {
    weight_gain: [f64; TACTILE_CHANNELS],
    tilt_gain: [f64; TACTILE_CHANNELS],
    offset_sensitivity: [f64; TACTILE_CHANNELS],
}

impl FingerModel {
    fn draw(config: &SensorConfig, rng: &mut ChaCha8Rng, min_sensitivity: f64) -> Self {
        let mut m = FingerModel {
            weight_gain: [0.0; TACTILE_CHANNELS],
            tilt_gain: [0.0; TACTILE_CHANNELS],
            offset_sensitivity: [0.0; TACTILE_CHANNELS],
        };
        for i in 0..TACTILE_CHANNELS {
            m.weight_gain[i] =
                config.tactile_gain + config.tactile_gain_spread * rng.random_range(-1.0..1.0);
            m.tilt_gain[i] = config.tactile_tilt_gain * rng.random_range(-1.0..1.0);
            m.offset_sensitivity[i] =
                config.tactile_offset_sensitivity * rng.random_range(min_sensitivity..1.0);
        }
        m
    }

    fn channels(&self, weight: f64, tilt: f64, offset_mm: f64) -> [f64; TACTILE_CHANNELS] {
        let s = tilt.sin();
        std::array::from_fn(|i| {
            let g = (self.offset_sensitivity[i] * offset_mm).exp();
            g * (self.weight_gain[i] * weight + self.tilt_gain[i] * weight * s)
        })
    }
}

/// Two 19-electrode fingertip arrays. Each electrode responds linearly to
/// the held weight plus a tilt-dependent shear term, scaled by a gain that
/// depends exponentially on how far off-centre the grasp is.
#[derive(Debug, Clone)]
pub struct TactileFeed {
    finger_a: FingerModel,
    finger_b: FingerModel,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
}

impl TactileFeed {
    pub fn new(config: &SensorConfig, noise_seed: u64) -> Self {
        let mut coef = ChaCha8Rng::seed_from_u64(config.coefficient_seed ^ 0x7AC7);
        let finger_a = FingerModel::draw(config, &mut coef, 0.25);
        let finger_b = FingerModel::draw(config, &mut coef, -0.3);
        TactileFeed {
            finger_a,
            finger_b,
            noise: Normal::new(0.0, config.tactile_noise_std).expect("validated"),
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
        }
    }

    /// Noise-free electrode values.
    pub fn expected(&self, weight: f64, tilt: f64, grasp_offset_mm: f64) -> ([f64; 19], [f64; 19]) {
        (
            self.finger_a.channels(weight, tilt, grasp_offset_mm),
            self.finger_b.channels(weight, tilt, grasp_offset_mm),
        )
    }

    pub fn sample(&mut self, true_held_weight: f64, tilt: f64, grasp_offset_mm: f64, t: f64) -> TactileFrame {
        let (mut a, mut b) = self.expected(true_held_weight, tilt, grasp_offset_mm);
        for v in a.iter_mut().chain(b.iter_mut()) {
            *v += self.noise.sample(&mut self.rng);
        }
        TactileFrame {
            channels_a: a,
            channels_b: b,
            t,
        }
    }
}

/// Convenience form of [`TactileFeed::sample`] for a single frame.
pub fn tactile_feed(
    true_held_weight: f64,
    tilt: f64,
    grasp_offset_mm: f64,
    noise_seed: u64,
    config: &SensorConfig,
) -> crate::Result<TactileFrame> {
    if grasp_offset_mm.abs() > 5.0 {
        return Err(crate::Error::Argument(format!(
            "grasp offset {grasp_offset_mm} mm is outside ±5 mm"
        )));
    }
    Ok(TactileFeed::new(config, noise_seed).sample(true_held_weight, tilt, grasp_offset_mm, 0.0))
}

/// One 100 Hz record after window averaging and baseline subtraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionedFrame {
    pub wrist_pos: f64,
    pub wrist_vel: f64,
    pub ee_wrench: Wrench,
    pub tactile: [[f64; TACTILE_CHANNELS]; 2],
    pub t: f64,
}

impl ConditionedFrame {
    pub fn zero(t: f64) -> Self {
        ConditionedFrame {
            wrist_pos: 0.0,
            wrist_vel: 0.0,
            ee_wrench: Wrench::ZERO,
            tactile: [[0.0; TACTILE_CHANNELS]; 2],
            t,
        }
    }
}

type TactileVec = [[f64; TACTILE_CHANNELS]; 2];

fn tactile_vec(f: &TactileFrame) -> TactileVec {
    [f.channels_a, f.channels_b]
}

/// Sliding-window averaging plus a one-off baseline.
///
/// The first `WRENCH_BASELINE` wrenches and `TACTILE_BASELINE` tactile
/// frames are averaged into the baseline. Afterwards [`Conditioner::frame`]
/// yields the mean of the latest windows minus that baseline.
#[derive(Debug, Clone)]
pub struct Conditioner {
    wrench_window: VecDeque<[f64; 6]>,
    tactile_window: VecDeque<TactileVec>,
    wrench_acc: ([f64; 6], usize),
    tactile_acc: (TactileVec, usize),
    baseline: Option<([f64; 6], TactileVec)>,
    wrist: (f64, f64),
    wrench_window_len: usize,
    tactile_window_len: usize,
    wrench_baseline_len: usize,
    tactile_baseline_len: usize,
}

impl Default for Conditioner {
    fn default() -> Self {
        Conditioner::new(WRENCH_WINDOW, TACTILE_WINDOW, WRENCH_BASELINE, TACTILE_BASELINE)
    }
}

impl Conditioner {
    pub fn new(
        wrench_window: usize,
        tactile_window: usize,
        wrench_baseline: usize,
        tactile_baseline: usize,
    ) -> Self {
        assert!(wrench_window > 0 && tactile_window > 0);
        Conditioner {
            wrench_window: VecDeque::with_capacity(wrench_window),
            tactile_window: VecDeque::with_capacity(tactile_window),
            wrench_acc: ([0.0; 6], 0),
            tactile_acc: ([[0.0; TACTILE_CHANNELS]; 2], 0),
            baseline: None,
            wrist: (0.0, 0.0),
            wrench_window_len: wrench_window,
            tactile_window_len: tactile_window,
            wrench_baseline_len: wrench_baseline,
            tactile_baseline_len: tactile_baseline,
        }
    }

    pub fn push_wrench(&mut self, w: &Wrench) {
        let a = w.to_array();
        if self.wrench_window.len() == self.wrench_window_len {
            self.wrench_window.pop_front();
        }
        self.wrench_window.push_back(a);
        if self.wrench_acc.1 < self.wrench_baseline_len {
            for (s, v) in self.wrench_acc.0.iter_mut().zip(a) {
                *s += v;
            }
            self.wrench_acc.1 += 1;
            self.try_close_baseline();
        }
    }

    pub fn push_tactile(&mut self, f: &TactileFrame) {
        let v = tactile_vec(f);
        if self.tactile_window.len() == self.tactile_window_len {
            self.tactile_window.pop_front();
        }
        self.tactile_window.push_back(v);
        if self.tactile_acc.1 < self.tactile_baseline_len {
            for (s, x) in self.tactile_acc.0.iter_mut().flatten().zip(v.iter().flatten()) {
                *s += x;
            }
            self.tactile_acc.1 += 1;
            self.try_close_baseline();
        }
    }

    /// Latest wrist position and velocity; logged as-is.
    pub fn set_wrist(&mut self, pos: f64, vel: f64) {
        self.wrist = (pos, vel);
    }

    fn try_close_baseline(&mut self) {
        if self.baseline.is_some()
            || self.wrench_acc.1 < self.wrench_baseline_len
            || self.tactile_acc.1 < self.tactile_baseline_len
        {
            return;
        }
        let nw = self.wrench_baseline_len.max(1) as f64;
        let nt = self.tactile_baseline_len.max(1) as f64;
        let wrench = self.wrench_acc.0.map(|s| s / nw);
        let tactile = self.tactile_acc.0.map(|row| row.map(|s| s / nt));
        self.baseline = Some((wrench, tactile));
    }

    pub fn baseline_ready(&self) -> bool {
        self.baseline.is_some()
    }

    /// `None` until both windows are full and the baseline is closed.
    pub fn frame(&self, t: f64) -> Option<ConditionedFrame> {
        let (base_w, base_t) = self.baseline.as_ref()?;
        if self.wrench_window.len() < self.wrench_window_len
            || self.tactile_window.len() < self.tactile_window_len
        {
            return None;
        }
        let nw = self.wrench_window.len() as f64;
        let mut w = [0.0; 6];
        for s in &self.wrench_window {
            for (acc, v) in w.iter_mut().zip(s) {
                *acc += v;
            }
        }
        for (acc, b) in w.iter_mut().zip(base_w) {
            *acc = *acc / nw - b;
        }
        let nt = self.tactile_window.len() as f64;
        let mut tac = [[0.0; TACTILE_CHANNELS]; 2];
        for s in &self.tactile_window {
            for (acc, v) in tac.iter_mut().flatten().zip(s.iter().flatten()) {
                *acc += v;
            }
        }
        for (acc, b) in tac.iter_mut().flatten().zip(base_t.iter().flatten()) {
            *acc = *acc / nt - b;
        }
        Some(ConditionedFrame {
            wrist_pos: self.wrist.0,
            wrist_vel: self.wrist.1,
            ee_wrench: Wrench::from_array(w),
            tactile: tac,
            t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm_model::{joint_torques_for, KinematicChain, WrenchMap};

    fn generic_q() -> Vec<f64> {
        vec![0.3, 0.7, -0.4, 1.6, 0.2, 0.9, 0.1]
    }

    fn std(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    }

    #[test]
    fn noise_free_torques_are_jacobian_transpose_of_the_load() {
        let chain = KinematicChain::reference_7dof();
        let q = generic_q();
        let cfg = SensorConfig {
            torque_bias_amplitude: 0.0,
            ..SensorConfig::noise_free()
        };
        let got = torque_feed(&chain, &q, 1.96, 1, &cfg, 3).unwrap();
        let jac = chain.geometric_jacobian(&q).unwrap();
        let want = joint_torques_for(&jac, &Wrench::from_array([0.0, 0.0, -1.96, 0.0, 0.0, 0.0]));
        for sample in got {
            assert_eq!(sample, want);
        }
    }

    #[test]
    fn torque_noise_is_seeded_and_has_the_configured_spread() {
        let chain = KinematicChain::reference_7dof();
        let q = generic_q();
        let cfg = SensorConfig {
            torque_bias_amplitude: 0.0,
            torque_drift_std: 0.0,
            ..SensorConfig::default()
        };
        let a = torque_feed(&chain, &q, 1.0, 42, &cfg, 10_000).unwrap();
        let b = torque_feed(&chain, &q, 1.0, 42, &cfg, 10_000).unwrap();
        assert_eq!(a, b);
        let jac = chain.geometric_jacobian(&q).unwrap();
        let clean = joint_torques_for(&jac, &Wrench::gravity_load(1.0, &nalgebra::Vector3::zeros()));
        for j in 0..7 {
            let resid: Vec<f64> = a.iter().map(|s| s[j] - clean[j]).collect();
            let s = std(&resid);
            assert!((s - 0.15).abs() < 0.05 * 0.15, "joint {j}: {s}");
        }
    }

    #[test]
    fn zero_weight_tactile_is_noise_floor() {
        let cfg = SensorConfig::default();
        let f = tactile_feed(0.0, 0.7, 1.0, 3, &cfg).unwrap();
        for v in f.channels_a.iter().chain(&f.channels_b) {
            assert!(v.abs() < 5.0 * cfg.tactile_noise_std);
        }
        let g = tactile_feed(0.0, 0.7, 1.0, 3, &cfg).unwrap();
        assert_eq!(f, g);
        assert!(tactile_feed(1.0, 0.0, 5.5, 3, &cfg).is_err());
    }

    #[test]
    fn off_centre_grasp_changes_several_electrodes() {
        let feed = TactileFeed::new(&SensorConfig::default(), 0);
        let (a0, b0) = feed.expected(3.0, 0.5, 0.0);
        let (a1, b1) = feed.expected(3.0, 0.5, 1.5);
        let changed = a0
            .iter()
            .chain(&b0)
            .zip(a1.iter().chain(&b1))
            .filter(|(x, y)| ((*y - *x) / *x).abs() > 0.2)
            .count();
        assert!(changed >= 3, "{changed}");
    }

    #[test]
    fn constant_input_conditions_to_zero() {
        let mut c = Conditioner::default();
        let w = Wrench::from_array([0.1, -0.2, -3.0, 0.01, 0.02, 0.03]);
        let tf = TactileFrame {
            channels_a: [5.0; 19],
            channels_b: [-2.0; 19],
            t: 0.0,
        };
        for k in 0..1500 {
            c.push_wrench(&w);
            if k % 10 == 9 {
                c.push_tactile(&tf);
            }
            if k < 999 {
                assert!(c.frame(0.0).is_none());
            }
        }
        let f = c.frame(1.5).unwrap();
        for v in f.ee_wrench.to_array() {
            assert!(v.abs() < 1e-12);
        }
        for v in f.tactile.iter().flatten() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn weight_step_ramps_over_one_window() {
        let mut c = Conditioner::new(WRENCH_WINDOW, TACTILE_WINDOW, 10, 1);
        c.push_tactile(&TactileFrame {
            channels_a: [0.0; 19],
            channels_b: [0.0; 19],
            t: 0.0,
        });
        for _ in 0..TACTILE_WINDOW {
            c.push_tactile(&TactileFrame {
                channels_a: [0.0; 19],
                channels_b: [0.0; 19],
                t: 0.0,
            });
        }
        let base = Wrench::ZERO;
        for _ in 0..WRENCH_WINDOW {
            c.push_wrench(&base);
        }
        let stepped = Wrench::from_array([0.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        let mut fz = Vec::new();
        for _ in 0..WRENCH_WINDOW + 5 {
            c.push_wrench(&stepped);
            fz.push(c.frame(0.0).unwrap().ee_wrench.force[2]);
        }
        for (k, v) in fz.iter().enumerate().take(WRENCH_WINDOW) {
            assert!((v + (k + 1) as f64 / WRENCH_WINDOW as f64).abs() < 1e-12);
        }
        assert!((fz[WRENCH_WINDOW - 1] + 1.0).abs() < 1e-12);
        assert!(fz[WRENCH_WINDOW..].iter().all(|v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn window_average_divides_torque_noise() {
        let chain = KinematicChain::reference_7dof();
        let q = generic_q();
        let cfg = SensorConfig {
            torque_bias_amplitude: 0.0,
            torque_drift_std: 0.0,
            ..SensorConfig::default()
        };
        let map = WrenchMap::at(&chain, &q).unwrap();
        let jac = chain.geometric_jacobian(&q).unwrap();
        let mut feed = TorqueFeed::new(&cfg, 7, 9);
        let load = Wrench::ZERO;
        let mut raw = Vec::new();
        let mut cond = Vec::new();
        let mut c = Conditioner::new(WRENCH_WINDOW, 1, 1, 0);
        c.push_tactile(&TactileFrame {
            channels_a: [0.0; 19],
            channels_b: [0.0; 19],
            t: 0.0,
        });
        for k in 0..200_000 {
            let w = map.apply(&feed.sample(&jac, &q, &load)).unwrap();
            raw.push(w.force[2]);
            c.push_wrench(&w);
            if k % WRENCH_WINDOW == WRENCH_WINDOW - 1 && k > WRENCH_WINDOW {
                cond.push(c.frame(0.0).unwrap().ee_wrench.force[2]);
            }
        }
        let ratio = std(&raw) / std(&cond);
        assert!((ratio - 10.0).abs() < 1.0, "{ratio}");
    }
}
