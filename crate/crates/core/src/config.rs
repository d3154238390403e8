//! Experiment configuration file: one JSON document with `controller`,
//! `sensors`, `container`, `trial`, `train` and `eval` blocks. Every block and
//! every field is optional; missing values take the defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arm_model::KinematicChain;
use crate::controller::ControllerConfig;
use crate::dataset::{ShiftMode, SplitCounts, TrialSetup};
use crate::estimator::TrainConfig;
use crate::pour_sim::ContainerSpec;
use crate::scene::{DEFAULT_POUR_LOCATION, DEFAULT_RECEIVER_HEIGHT};
use crate::sensor_sim::SensorConfig;
use crate::{Error, Result};

/// Dataset collection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialBlock {
    pub n_trials: usize,
    pub split: SplitCounts,
    pub shift: ShiftMode,
    pub receiver_height: f64,
    /// Chain file; the bundled 7-DOF chain when absent.
    pub chain: Option<PathBuf>,
}

impl Default for TrialBlock {
    fn default() -> Self {
        TrialBlock {
            n_trials: SplitCounts::default().total(),
            split: SplitCounts::default(),
            shift: ShiftMode::default(),
            receiver_height: DEFAULT_RECEIVER_HEIGHT,
            chain: None,
        }
    }
}

/// Closed-loop evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    pub pour_location: [f64; 3],
    /// Lateral shifts for the novel-location sweep [m].
    pub novel_location_shifts: Vec<f64>,
    /// Grasp offsets for the novel-grasp sweep [mm].
    pub novel_grasp_offsets: Vec<f64>,
    /// 1-based grid rows used by the sweeps.
    pub sweep_trials: Vec<usize>,
    /// Deploy the final weights instead of the best-validation ones.
    pub use_final_weights: bool,
}

impl Default for EvalBlock {
    fn default() -> Self {
        EvalBlock {
            pour_location: DEFAULT_POUR_LOCATION,
            novel_location_shifts: vec![0.15, -0.15],
            novel_grasp_offsets: vec![1.5, 3.0],
            sweep_trials: vec![1, 6, 8, 12],
            use_final_weights: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub controller: ControllerConfig,
    pub sensors: SensorConfig,
    pub container: ContainerSpec,
    pub trial: TrialBlock,
    pub train: TrainConfig,
    pub eval: EvalBlock,
}

impl ExperimentConfig {
    /// Parses and validates. Errors carry the dotted path of the offending key.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        self.sensors.validate()?;
        self.container.validate()?;
        self.train.validate()?;
        if self.trial.n_trials == 0 {
            return Err(Error::Config {
                path: "trial.n_trials".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(self.trial.receiver_height >= 0.0) {
            return Err(Error::Config {
                path: "trial.receiver_height".into(),
                message: "must be non-negative".into(),
            });
        }
        if let Some(bad) = self.eval.sweep_trials.iter().find(|&&i| !(1..=12).contains(&i)) {
            return Err(Error::Config {
                path: "eval.sweep_trials".into(),
                message: format!("grid row {bad} outside 1..=12"),
            });
        }
        Ok(())
    }

    pub fn chain(&self) -> Result<KinematicChain> {
        match &self.trial.chain {
            None => Ok(KinematicChain::reference_7dof()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                KinematicChain::from_json_str(&text).map_err(|e| match e {
                    Error::Config { path: key, message } => Error::Config {
                        path: format!("trial.chain:{key}"),
                        message,
                    },
                    other => other,
                })
            }
        }
    }

    pub fn setup(&self) -> Result<TrialSetup> {
        Ok(TrialSetup {
            chain: self.chain()?,
            container: self.container.clone(),
            sensors: self.sensors.clone(),
            controller: self.controller.clone(),
            shift: self.trial.shift,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_json_str("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.seed = 42;
        c.controller.kp = 0.7;
        c.trial.shift = ShiftMode::Constant(0.3);
        let back = ExperimentConfig::from_json_str(&c.to_json_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = ExperimentConfig::from_json_str(r#"{"sensors": {"torque_noise": 0.1}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "sensors.torque_noise"),
            e => panic!("{e}"),
        }
        let err = ExperimentConfig::from_json_str(r#"{"controller": {"kp": "high"}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "controller.kp"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn validation_runs() {
        let err = ExperimentConfig::from_json_str(r#"{"trial": {"n_trials": 0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "trial.n_trials"));
    }
}
