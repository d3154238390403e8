//! Three-state pouring controller.
//!
//! ```text
//! TiltUntilFlow --(pour detected)--> RegulatePour --(target reached)--> ReturnUpright --> done
//! ```
//!
//! The controller runs at 100 Hz on a scalar weight signal (plate, ground
//! truth or estimator output) plus the measured wrist tilt and returns a
//! wrist velocity command.

mod pid;
mod trapezoid;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use pid::{pid_step, PidGains, PidState};
pub use trapezoid::{build_trapezoid, Trapezoid};

use crate::{Error, Result};

pub const CONTROL_PERIOD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Reference slope [N/s].
    pub pour_rate: f64,
    pub target_weight: f64,
    pub target_tolerance: f64,
    /// Detection window [samples].
    pub start_window: usize,
    /// Mean first derivative that declares the pour started [N/s].
    pub start_threshold: f64,
    pub tilt_search_velocity: f64,
    pub max_wrist_velocity: f64,
    pub max_ref_accel: f64,
    pub control_period: f64,
    /// Return-to-upright profile.
    pub return_velocity: f64,
    pub return_accel: f64,
    /// Wrist travel limit from upright [rad].
    pub max_tilt: f64,
    /// Time at the tilt limit without flow before giving up [s].
    pub stall_time: f64,
    /// Weight gain over `stall_time` below which flow counts as stopped [N].
    pub stall_weight: f64,
    /// Give up and report a timeout after this long [s].
    pub max_duration: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            kp: 0.3,
            ki: 0.0,
            kd: 0.2,
            pour_rate: 0.441,
            target_weight: 1.176,
            target_tolerance: 0.015,
            start_window: 50,
            start_threshold: 0.05,
            tilt_search_velocity: 0.1,
            max_wrist_velocity: 2.5,
            max_ref_accel: 2.0,
            control_period: CONTROL_PERIOD,
            return_velocity: 2.5,
            return_accel: 200.0,
            max_tilt: std::f64::consts::FRAC_PI_2,
            stall_time: 2.0,
            stall_weight: 0.01,
            max_duration: 120.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::Config {
                path: format!("controller.{field}"),
                message: message.to_string(),
            })
        };
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !(v >= 0.0) {
                return bad(name, "gains must be non-negative");
            }
        }
        let positive = [
            ("pour_rate", self.pour_rate),
            ("target_tolerance", self.target_tolerance),
            ("tilt_search_velocity", self.tilt_search_velocity),
            ("max_wrist_velocity", self.max_wrist_velocity),
            ("max_ref_accel", self.max_ref_accel),
            ("return_velocity", self.return_velocity),
            ("return_accel", self.return_accel),
            ("max_tilt", self.max_tilt),
            ("stall_time", self.stall_time),
            ("max_duration", self.max_duration),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, "must be positive");
            }
        }
        if self.start_window < 2 {
            return bad("start_window", "needs at least 2 samples");
        }
        if (self.control_period - CONTROL_PERIOD).abs() > 1e-12 {
            return bad("control_period", "must match the 100 Hz conditioned feed (0.01 s)");
        }
        if self.return_velocity > self.max_wrist_velocity || self.tilt_search_velocity > self.max_wrist_velocity {
            return bad("return_velocity", "wrist speeds must not exceed max_wrist_velocity");
        }
        Ok(())
    }

    fn gains(&self) -> PidGains {
        PidGains {
            kp: self.kp,
            ki: self.ki,
            kd: self.kd,
            limit: self.max_wrist_velocity,
            period: self.control_period,
        }
    }
}

/// True when the mean first difference over the last `window` readings,
/// divided by the sample period, exceeds `threshold`.
pub fn detect_pour_start(history: &[f64], window: usize, threshold: f64, period: f64) -> bool {
    if window < 2 || history.len() < window {
        return false;
    }
    let recent = &history[history.len() - window..];
    let mean_diff = recent.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / (window - 1) as f64;
    mean_diff / period > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Completed,
    EmptiedSource,
    Timeout,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::EmptiedSource => "emptied-source",
            Outcome::Timeout => "timeout",
        }
    }
}

/// What the controller sees each tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub t: f64,
    /// Weight poured so far, as reported by the feedback source [N].
    pub weight: f64,
    /// Wrist rotation from upright [rad].
    pub tilt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FsmState {
    TiltUntilFlow {
        history: VecDeque<f64>,
        at_limit_since: Option<f64>,
    },
    RegulatePour {
        reference: Trapezoid,
        t0: f64,
        pid: PidState,
        /// `(t, weight)` over the last `stall_time`, for stall detection.
        recent: VecDeque<(f64, f64)>,
    },
    ReturnUpright {
        profile: Trapezoid,
        t0: f64,
    },
    Finished(Outcome),
}

impl FsmState {
    pub fn initial() -> Self {
        FsmState::TiltUntilFlow {
            history: VecDeque::new(),
            at_limit_since: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FsmState::TiltUntilFlow { .. } => "tilt",
            FsmState::RegulatePour { .. } => "regulate",
            FsmState::ReturnUpright { .. } => "return",
            FsmState::Finished(_) => "finished",
        }
    }

    /// Position in the forward order; never decreases over a trial.
    pub fn ordinal(&self) -> u8 {
        match self {
            FsmState::TiltUntilFlow { .. } => 0,
            FsmState::RegulatePour { .. } => 1,
            FsmState::ReturnUpright { .. } => 2,
            FsmState::Finished(_) => 3,
        }
    }

    /// Current weight reference, while regulating.
    pub fn reference_at(&self, t: f64) -> Option<f64> {
        match self {
            FsmState::RegulatePour { reference, t0, .. } => Some(reference.value(t - t0)),
            _ => None,
        }
    }
}

fn limit_tilt(u: f64, tilt: f64, cfg: &ControllerConfig) -> f64 {
    if (tilt >= cfg.max_tilt && u > 0.0) || (tilt <= 0.0 && u < 0.0) {
        0.0
    } else {
        u
    }
}

fn start_return(fb: &Feedback, cfg: &ControllerConfig) -> FsmState {
    FsmState::ReturnUpright {
        profile: Trapezoid::between(fb.tilt, 0.0, cfg.return_velocity, cfg.return_accel),
        t0: fb.t,
    }
}

/// Velocity that moves along `profile` over the next period, so the wrist
/// lands on the profile exactly at each tick.
fn follow(profile: &Trapezoid, tau: f64, period: f64) -> f64 {
    (profile.value(tau + period) - profile.value(tau)) / period
}

/// One 100 Hz controller update.
pub fn fsm_tick(state: FsmState, fb: &Feedback, cfg: &ControllerConfig) -> (f64, FsmState) {
    match state {
        FsmState::TiltUntilFlow {
            mut history,
            mut at_limit_since,
        } => {
            history.push_back(fb.weight);
            if history.len() > cfg.start_window {
                history.pop_front();
            }
            let samples = history.make_contiguous();
            if detect_pour_start(samples, cfg.start_window, cfg.start_threshold, cfg.control_period) {
                // Anchored at the latest measurement.
                let reference = build_trapezoid(fb.weight, cfg.pour_rate, cfg.max_ref_accel, cfg.target_weight);
                let next = FsmState::RegulatePour {
                    reference,
                    t0: fb.t,
                    pid: PidState::default(),
                    recent: VecDeque::new(),
                };
                return fsm_tick(next, fb, cfg);
            }
            if fb.tilt >= cfg.max_tilt {
                let since = *at_limit_since.get_or_insert(fb.t);
                if fb.t - since >= cfg.stall_time {
                    return (0.0, FsmState::Finished(Outcome::EmptiedSource));
                }
            }
            let u = limit_tilt(cfg.tilt_search_velocity, fb.tilt, cfg);
            (
                u,
                FsmState::TiltUntilFlow {
                    history,
                    at_limit_since,
                },
            )
        }
        FsmState::RegulatePour {
            reference,
            t0,
            mut pid,
            mut recent,
        } => {
            if cfg.target_weight - fb.weight <= cfg.target_tolerance {
                let next = start_return(fb, cfg);
                return fsm_tick(next, fb, cfg);
            }
            recent.push_back((fb.t, fb.weight));
            while recent.front().is_some_and(|(t, _)| fb.t - t > cfg.stall_time + 1e-9) {
                recent.pop_front();
            }
            if fb.tilt >= cfg.max_tilt {
                if let Some(&(t_old, w_old)) = recent.front() {
                    if fb.t - t_old >= cfg.stall_time - 1e-9 && fb.weight - w_old < cfg.stall_weight {
                        return (0.0, FsmState::Finished(Outcome::EmptiedSource));
                    }
                }
            }
            let r = reference.value(fb.t - t0);
            let u = pid_step(&cfg.gains(), r, fb.weight, &mut pid);
            let limited = limit_tilt(u, fb.tilt, cfg);
            if limited != u && pid.prev_error.is_some_and(|e| e * u > 0.0) {
                // Hitting the travel limit also counts as saturation.
                pid.integral -= pid.prev_error.unwrap_or(0.0) * cfg.control_period;
            }
            (
                limited,
                FsmState::RegulatePour {
                    reference,
                    t0,
                    pid,
                    recent,
                },
            )
        }
        FsmState::ReturnUpright { profile, t0 } => {
            let tau = fb.t - t0;
            if tau >= profile.duration() - 1e-9 {
                return (0.0, FsmState::Finished(Outcome::Completed));
            }
            let u = follow(&profile, tau, cfg.control_period).clamp(-cfg.max_wrist_velocity, cfg.max_wrist_velocity);
            (u, FsmState::ReturnUpright { profile, t0 })
        }
        done @ FsmState::Finished(_) => (0.0, done),
    }
}

/// One logged controller tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandRecord {
    pub t: f64,
    pub state: &'static str,
    pub reference: f64,
    pub measured: f64,
    pub command: f64,
}

/// [`fsm_tick`] plus the bookkeeping a trial needs: timeout, the moment the
/// target was reached and a command log.
#[derive(Debug, Clone)]
pub struct PourController {
    config: ControllerConfig,
    state: FsmState,
    started: Option<f64>,
    target_reached_at: Option<f64>,
    trapezoids_built: usize,
    log: Vec<CommandRecord>,
}

impl PourController {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        Ok(PourController {
            config,
            state: FsmState::initial(),
            started: None,
            target_reached_at: None,
            trapezoids_built: 0,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self) -> &FsmState {
        &self.state
    }

    pub fn outcome(&self) -> Option<Outcome> {
        match self.state {
            FsmState::Finished(o) => Some(o),
            _ => None,
        }
    }

    pub fn target_reached_at(&self) -> Option<f64> {
        self.target_reached_at
    }

    pub fn trapezoids_built(&self) -> usize {
        self.trapezoids_built
    }

    pub fn log(&self) -> &[CommandRecord] {
        &self.log
    }

    pub fn tick(&mut self, fb: &Feedback) -> f64 {
        let started = *self.started.get_or_insert(fb.t);
        if self.outcome().is_none() && fb.t - started >= self.config.max_duration {
            self.state = FsmState::Finished(Outcome::Timeout);
        }
        let before = self.state.ordinal();
        let state = std::mem::replace(&mut self.state, FsmState::initial());
        let (u, next) = fsm_tick(state, fb, &self.config);
        debug_assert!(next.ordinal() >= before);
        if before == 0 && next.ordinal() >= 1 && !matches!(next, FsmState::Finished(_)) {
            self.trapezoids_built += 1;
        }
        if before <= 1 && matches!(next, FsmState::ReturnUpright { .. } | FsmState::Finished(Outcome::Completed)) {
            self.target_reached_at.get_or_insert(fb.t);
        }
        self.log.push(CommandRecord {
            t: fb.t,
            state: next.name(),
            reference: next.reference_at(fb.t).unwrap_or(f64::NAN),
            measured: fb.weight,
            command: u,
        });
        self.state = next;
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn detection_on_constants_and_ramps() {
        let flat = vec![0.37; 60];
        assert!(!detect_pour_start(&flat, 50, 0.1, 0.01));
        let ramp: Vec<f64> = (0..60).map(|k| 0.3 * 0.01 * k as f64).collect();
        assert!(detect_pour_start(&ramp, 50, 0.1, 0.01));
        assert!(!detect_pour_start(&ramp[..10], 50, 0.1, 0.01));
    }

    #[test]
    fn slow_drift_with_noise_is_rejected() {
        let cfg = ControllerConfig::default();
        let noise = Normal::new(0.0, 0.005).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut fired = 0;
        for _ in 0..10_000 {
            let h: Vec<f64> = (0..cfg.start_window)
                .map(|k| 0.01 * 0.01 * k as f64 + noise.sample(&mut rng))
                .collect();
            if detect_pour_start(&h, cfg.start_window, 0.1, 0.01) {
                fired += 1;
            }
        }
        assert_eq!(fired, 0);
    }

    #[test]
    fn never_detecting_at_the_limit_aborts() {
        let cfg = ControllerConfig::default();
        let mut c = PourController::new(cfg.clone()).unwrap();
        let mut tilt = 0.0;
        let mut t = 0.0;
        while c.outcome().is_none() && t < 60.0 {
            let u = c.tick(&Feedback { t, weight: 0.0, tilt });
            assert!(u.abs() <= cfg.max_wrist_velocity);
            tilt += u * cfg.control_period;
            t += cfg.control_period;
        }
        assert_eq!(c.outcome(), Some(Outcome::EmptiedSource));
        assert!(tilt <= cfg.max_tilt + cfg.tilt_search_velocity * cfg.control_period);
        assert_eq!(c.trapezoids_built(), 0);
    }

    #[test]
    fn zero_gains_hold_the_wrist_and_time_out() {
        let cfg = ControllerConfig {
            kp: 0.0,
            kd: 0.0,
            max_duration: 30.0,
            ..ControllerConfig::default()
        };
        let mut c = PourController::new(cfg.clone()).unwrap();
        let mut t = 0.0;
        let mut w: f64 = 0.0;
        let mut regulating = Vec::new();
        while c.outcome().is_none() {
            // Flow appears after 3 s and is too slow to ever reach the target.
            if t > 3.0 {
                w += 0.001;
            }
            let u = c.tick(&Feedback { t, weight: w.min(0.5), tilt: 0.5 });
            if c.state().name() == "regulate" {
                regulating.push(u);
            }
            t += cfg.control_period;
        }
        assert_eq!(c.outcome(), Some(Outcome::Timeout));
        assert!(!regulating.is_empty());
        assert!(regulating.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn reaching_target_returns_upright_exactly() {
        let cfg = ControllerConfig {
            target_weight: 1.0,
            ..ControllerConfig::default()
        };
        let mut c = PourController::new(cfg.clone()).unwrap();
        let mut t = 0.0;
        let mut tilt: f64 = 0.0;
        let mut w: f64 = 0.0;
        let mut order = vec![c.state().ordinal()];
        while c.outcome().is_none() && t < 60.0 {
            let u = c.tick(&Feedback { t, weight: w, tilt });
            order.push(c.state().ordinal());
            // Toy plant: flow proportional to tilt beyond 0.6 rad.
            w += 2.0 * (tilt - 0.6).max(0.0) * cfg.control_period;
            tilt += u * cfg.control_period;
            t += cfg.control_period;
        }
        assert_eq!(c.outcome(), Some(Outcome::Completed));
        assert!(order.windows(2).all(|p| p[1] >= p[0]));
        assert_eq!(c.trapezoids_built(), 1);
        assert!(tilt.abs() < 1e-9, "{tilt}");
        assert!(c.target_reached_at().is_some());
        assert!(w >= 1.0 - cfg.target_tolerance);
    }

    #[test]
    fn config_rejects_nonsense() {
        let cfg = ControllerConfig {
            pour_rate: 0.0,
            ..ControllerConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { path, .. }) if path == "controller.pour_rate"));
        let cfg = ControllerConfig {
            control_period: 0.02,
            ..ControllerConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
