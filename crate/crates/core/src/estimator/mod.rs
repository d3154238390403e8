//! Poured-weight regressors on conditioned frames: three small MLPs, the
//! analytical Fz baseline, and the training loop that fits the MLPs.

mod network;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use network::{DenseLayer, Network, Scratch, ENCODER_DIM};
pub use train::{batch_gradient, lr_at, train, Adam, LossCurves, TrainConfig, TrainOutcome};

use crate::dataset::TrialLog;
use crate::sensor_sim::{ConditionedFrame, TACTILE_CHANNELS};
use crate::{Error, Result};

/// Anything that maps a conditioned frame to poured weight [N].
pub trait WeightEstimator: Sync {
    fn predict(&self, frame: &ConditionedFrame) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Tactile,
    Proprioceptive,
    Multimodal,
    AnalyticalFz,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Tactile,
        EstimatorKind::Proprioceptive,
        EstimatorKind::Multimodal,
        EstimatorKind::AnalyticalFz,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Tactile => "tactile",
            EstimatorKind::Proprioceptive => "proprioceptive",
            EstimatorKind::Multimodal => "multimodal",
            EstimatorKind::AnalyticalFz => "analytical_fz",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown estimator kind `{s}`")))
    }

    /// Width of the vector entering the hidden layer.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            EstimatorKind::Tactile => Some(10),
            EstimatorKind::Proprioceptive => Some(8),
            EstimatorKind::Multimodal => Some(16),
            EstimatorKind::AnalyticalFz => None,
        }
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        match self {
            EstimatorKind::Tactile | EstimatorKind::Proprioceptive => Some(4),
            EstimatorKind::Multimodal => Some(8),
            EstimatorKind::AnalyticalFz => None,
        }
    }

    pub fn uses_tactile(&self) -> bool {
        matches!(self, EstimatorKind::Tactile | EstimatorKind::Multimodal)
    }

    pub fn is_trainable(&self) -> bool {
        self.input_dim().is_some()
    }

    /// Length of [`raw_inputs`] for this kind.
    pub fn raw_dim(&self) -> usize {
        match self {
            EstimatorKind::Tactile => 2 * TACTILE_CHANNELS + 2,
            EstimatorKind::Proprioceptive => 8,
            EstimatorKind::Multimodal => 2 * TACTILE_CHANNELS + 8,
            EstimatorKind::AnalyticalFz => 1,
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Network input before encoding, in feature order:
/// tactile `[a(19), b(19), pos, vel]`, proprioceptive `[wrench(6), pos, vel]`,
/// multimodal `[a(19), b(19), pos, vel, wrench(6)]`.
pub fn raw_inputs(frame: &ConditionedFrame, kind: EstimatorKind, out: &mut Vec<f64>) {
    out.clear();
    let wrench = frame.ee_wrench.to_array();
    if kind.uses_tactile() {
        out.extend_from_slice(&frame.tactile[0]);
        out.extend_from_slice(&frame.tactile[1]);
    }
    match kind {
        EstimatorKind::Proprioceptive => {
            out.extend(wrench);
            out.extend([frame.wrist_pos, frame.wrist_vel]);
        }
        EstimatorKind::Tactile => out.extend([frame.wrist_pos, frame.wrist_vel]),
        EstimatorKind::Multimodal => {
            out.extend([frame.wrist_pos, frame.wrist_vel]);
            out.extend(wrench);
        }
        EstimatorKind::AnalyticalFz => out.push(frame.ee_wrench.force[2]),
    }
}

/// Per-column standardization of raw inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Column statistics of row-major `rows` of width `dim`. Constant
    /// columns keep unit scale.
    pub fn fit(rows: &[f64], dim: usize) -> Self {
        let n = (rows.len() / dim).max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-9 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Normalization { mean, std }
    }

    pub fn apply(&self, raw: &mut [f64]) {
        for ((v, m), s) in raw.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// A trained network together with its input scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub normalization: Normalization,
    pub seed: u64,
    pub train_config: TrainConfig,
}

impl TrainedModel {
    pub fn kind(&self) -> EstimatorKind {
        self.network.kind()
    }

    pub fn to_file(&self) -> ModelFile {
        let (layers, encoders) = self.network.to_layers();
        let kind = self.kind();
        ModelFile {
            kind,
            dims: ModelDims {
                raw_input: kind.raw_dim(),
                input: kind.input_dim().unwrap_or(0),
                hidden: kind.hidden_dim().unwrap_or(0),
                encoder: if kind.uses_tactile() { ENCODER_DIM } else { 0 },
            },
            layers,
            encoders: encoders.map(|[a, b]| Encoders { a, b }),
            normalization: self.normalization.clone(),
            seed: self.seed,
            train_config: self.train_config.clone(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        let kind = file.kind;
        if !kind.is_trainable() {
            return Err(Error::Argument(format!("{kind} has no model file")));
        }
        let want = kind.input_dim().unwrap_or(0);
        if file.dims.input != want {
            return Err(Error::Shape {
                expected: want,
                actual: file.dims.input,
            });
        }
        if file.normalization.mean.len() != kind.raw_dim() || file.normalization.std.len() != kind.raw_dim() {
            return Err(Error::Shape {
                expected: kind.raw_dim(),
                actual: file.normalization.mean.len(),
            });
        }
        let enc = file.encoders.map(|e| [e.a, e.b]);
        Ok(TrainedModel {
            network: Network::from_layers(kind, &file.layers, enc.as_ref())?,
            normalization: file.normalization,
            seed: file.seed,
            train_config: file.train_config,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ModelFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Format {
            path: "<model>".into(),
            message: format!("{} at `{}`", e.inner(), e.path()),
        })?;
        TrainedModel::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainedModel::from_json(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path, message),
            other => other,
        })
    }

    /// Prediction on an already-built raw input vector (normalized in place).
    pub fn predict_raw(&self, raw: &mut [f64], scratch: &mut Scratch) -> f64 {
        self.normalization.apply(raw);
        self.network.forward_with(raw, scratch)
    }
}

impl WeightEstimator for TrainedModel {
    fn predict(&self, frame: &ConditionedFrame) -> f64 {
        let mut raw = Vec::with_capacity(self.kind().raw_dim());
        raw_inputs(frame, self.kind(), &mut raw);
        self.predict_raw(&mut raw, &mut Scratch::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub raw_input: usize,
    pub input: usize,
    pub hidden: usize,
    pub encoder: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Encoders {
    pub a: DenseLayer,
    pub b: DenseLayer,
}

/// On-disk model. `layers` is `[hidden, output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub kind: EstimatorKind,
    pub dims: ModelDims,
    pub layers: Vec<DenseLayer>,
    pub encoders: Option<Encoders>,
    pub normalization: Normalization,
    pub seed: u64,
    pub train_config: TrainConfig,
}

/// Change in the vertical force component since baselining. The conditioned
/// wrench is the load the held container exerts, so it points down and
/// rises toward zero as liquid leaves.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnalyticalFz;

pub fn analytical_fz(frame: &ConditionedFrame) -> f64 {
    frame.ee_wrench.force[2]
}

impl WeightEstimator for AnalyticalFz {
    fn predict(&self, frame: &ConditionedFrame) -> f64 {
        analytical_fz(frame)
    }
}

/// Either a trained network or the analytical baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Trained(TrainedModel),
    AnalyticalFz,
}

impl Estimator {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            Estimator::Trained(m) => m.kind(),
            Estimator::AnalyticalFz => EstimatorKind::AnalyticalFz,
        }
    }
}

impl WeightEstimator for Estimator {
    fn predict(&self, frame: &ConditionedFrame) -> f64 {
        match self {
            Estimator::Trained(m) => m.predict(frame),
            Estimator::AnalyticalFz => analytical_fz(frame),
        }
    }
}

/// What [`evaluate_mse`] scores. `Oracle` predicts each frame's own label.
#[derive(Clone, Copy)]
pub enum Scored<'a> {
    Estimator(&'a dyn WeightEstimator),
    Oracle,
}

/// Mean of `(pred − gt)²` over every frame of every trial [N²].
pub fn evaluate_mse(scored: Scored<'_>, trials: &[TrialLog]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for trial in trials {
        for frame in &trial.frames {
            let pred = match scored {
                Scored::Estimator(e) => e.predict(&frame.conditioned()),
                Scored::Oracle => frame.gt_poured,
            };
            sum += (pred - frame.gt_poured).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptySplit("test"));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm_model::Wrench;
    use crate::dataset::{sample_config, SensorFrame};
    use crate::controller::Outcome;
    use rand::SeedableRng;

    fn frame(fz: f64) -> ConditionedFrame {
        ConditionedFrame {
            ee_wrench: Wrench {
                force: [0.1, -0.2, fz],
                torque: [0.0; 3],
            },
            ..ConditionedFrame::zero(1.0)
        }
    }

    #[test]
    fn raw_layouts() {
        let mut f = frame(0.7);
        f.wrist_pos = 0.3;
        f.wrist_vel = -0.1;
        f.tactile[0][0] = 5.0;
        f.tactile[1][18] = 6.0;
        let mut v = Vec::new();
        raw_inputs(&f, EstimatorKind::Proprioceptive, &mut v);
        assert_eq!(v, vec![0.1, -0.2, 0.7, 0.0, 0.0, 0.0, 0.3, -0.1]);
        raw_inputs(&f, EstimatorKind::Tactile, &mut v);
        assert_eq!((v.len(), v[0], v[37], v[38], v[39]), (40, 5.0, 6.0, 0.3, -0.1));
        raw_inputs(&f, EstimatorKind::Multimodal, &mut v);
        assert_eq!((v.len(), v[40], v[42]), (46, 0.1, 0.7));
        for k in EstimatorKind::ALL {
            raw_inputs(&f, k, &mut v);
            assert_eq!(v.len(), k.raw_dim());
        }
    }

    #[test]
    fn analytical_baseline_frame_is_zero() {
        assert_eq!(AnalyticalFz.predict(&ConditionedFrame::zero(0.0)), 0.0);
        assert_eq!(AnalyticalFz.predict(&frame(0.49)), 0.49);
    }

    #[test]
    fn normalization_fit() {
        let rows = [1.0, 5.0, 3.0, 5.0];
        let n = Normalization::fit(&rows, 2);
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, 1.0]);
        let mut r = [3.0, 6.0];
        n.apply(&mut r);
        assert_eq!(r, [1.0, 1.0]);
    }

    fn log_with_gt(gt: &[f64]) -> TrialLog {
        let frames = gt
            .iter()
            .enumerate()
            .map(|(i, &g)| SensorFrame {
                gt_poured: g,
                ..SensorFrame::from_row(&vec![i as f64 * 0.01; SensorFrame::N_COLUMNS]).unwrap()
            })
            .collect();
        TrialLog {
            config: sample_config(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0)),
            frames,
            outcome: Outcome::Completed,
            final_poured: 0.0,
            commands: Vec::new(),
        }
    }

    struct Zero;
    impl WeightEstimator for Zero {
        fn predict(&self, _: &ConditionedFrame) -> f64 {
            0.0
        }
    }

    #[test]
    fn mse_oracles() {
        // gt ramps 0 -> 2 N over 201 frames: mean of (2k/200)^2 for k = 0..=200
        // is 4 * (200 * 201 * 401 / 6) / 200^2 / 201 = 401 / 300.
        let gt: Vec<f64> = (0..=200).map(|k| 2.0 * k as f64 / 200.0).collect();
        let logs = [log_with_gt(&gt)];
        assert_eq!(evaluate_mse(Scored::Oracle, &logs).unwrap(), 0.0);
        let mse = evaluate_mse(Scored::Estimator(&Zero), &logs).unwrap();
        assert!((mse - 401.0 / 300.0).abs() < 1e-12, "{mse}");
        assert!(matches!(evaluate_mse(Scored::Oracle, &[]), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn kind_strings() {
        for k in EstimatorKind::ALL {
            assert_eq!(EstimatorKind::parse(k.as_str()).unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
        assert!(EstimatorKind::parse("sonar").is_err());
    }
}
