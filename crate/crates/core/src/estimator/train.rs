use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{raw_inputs, EstimatorKind, Network, Normalization, Scratch, TrainedModel};
use crate::dataset::TrialLog;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            batch_size: 5000,
            lr: 0.005,
            lr_decay: 0.7,
            lr_decay_every: 125,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| {
            Err(Error::Config {
                path: format!("train.{path}"),
                message: message.into(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every", "must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr_decay > 0.0) {
            return bad("lr", "rate and decay must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("beta1", "Adam moments need 0 <= beta < 1 and eps > 0");
        }
        Ok(())
    }
}

/// Step decay: `lr · decay^⌊epoch / every⌋`, epochs counted from 0.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr * config.lr_decay.powi((epoch / config.lr_decay_every) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, config: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    /// Full-pass train MSE before the first update.
    pub initial_train: f64,
    /// Mean minibatch loss over each epoch.
    pub train: Vec<f64>,
    pub val: Vec<f64>,
    /// Full-pass train MSE of the final weights.
    pub final_train: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Weights with the lowest validation MSE.
    pub best: TrainedModel,
    pub last: TrainedModel,
    pub curves: LossCurves,
}

/// Row-major normalized inputs and labels.
struct Table {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Table {
    fn from_trials(trials: &[TrialLog], kind: EstimatorKind) -> Self {
        let dim = kind.raw_dim();
        let n: usize = trials.iter().map(|t| t.frames.len()).sum();
        let mut x = Vec::with_capacity(n * dim);
        let mut y = Vec::with_capacity(n);
        let mut raw = Vec::with_capacity(dim);
        for f in trials.iter().flat_map(|t| &t.frames) {
            raw_inputs(&f.conditioned(), kind, &mut raw);
            x.extend_from_slice(&raw);
            y.push(f.gt_poured);
        }
        Table { dim, x, y }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    fn normalize(&mut self, norm: &Normalization) {
        for row in self.x.chunks_exact_mut(self.dim) {
            norm.apply(row);
        }
    }

    fn mse(&self, net: &Network, scratch: &mut Scratch) -> f64 {
        let sum: f64 = (0..self.y.len())
            .map(|i| (net.forward_with(self.row(i), scratch) - self.y[i]).powi(2))
            .sum();
        sum / self.y.len() as f64
    }
}

/// Minibatch Adam on frame-level MSE. Frames are reshuffled every epoch;
/// the whole run is a pure function of the data, `config` and `seed`.
pub fn train(
    kind: EstimatorKind,
    train_trials: &[TrialLog],
    val_trials: &[TrialLog],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if !kind.is_trainable() {
        return Err(Error::Argument(format!("{kind} is not trainable")));
    }
    let mut tr = Table::from_trials(train_trials, kind);
    let mut va = Table::from_trials(val_trials, kind);
    if tr.y.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if va.y.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    let norm = Normalization::fit(&tr.x, tr.dim);
    tr.normalize(&norm);
    va.normalize(&norm);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(kind, &mut rng)?;
    let (last, best, curves) = fit(&mut net, &tr, &va, config, &mut rng);
    let wrap = |network: Network| TrainedModel {
        network,
        normalization: norm.clone(),
        seed,
        train_config: config.clone(),
    };
    Ok(TrainOutcome {
        best: wrap(best),
        last: wrap(last),
        curves,
    })
}

fn fit(
    net: &mut Network,
    tr: &Table,
    va: &Table,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (Network, Network, LossCurves) {
    let mut scratch = Scratch::default();
    let n_params = net.params().len();
    let mut adam = Adam::new(n_params, config);
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..tr.y.len()).collect();
    let mut curves = LossCurves {
        initial_train: tr.mse(net, &mut scratch),
        train: Vec::with_capacity(config.epochs),
        val: Vec::with_capacity(config.epochs),
        final_train: f64::NAN,
        best_epoch: 0,
    };
    let mut best = (f64::INFINITY, net.clone());

    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let row = tr.row(i);
                let err = net.forward_with(row, &mut scratch) - tr.y[i];
                epoch_loss += err * err;
                net.backward(row, &mut scratch, scale * err, &mut grad);
            }
            adam.step(net.params_mut(), &grad, lr);
        }
        curves.train.push(epoch_loss / tr.y.len() as f64);
        let val = va.mse(net, &mut scratch);
        curves.val.push(val);
        if val < best.0 {
            best = (val, net.clone());
            curves.best_epoch = epoch;
        }
    }
    curves.final_train = tr.mse(net, &mut scratch);
    (net.clone(), best.1, curves)
}

/// Mean-squared-error gradient of `net` on a batch of normalized rows.
pub fn batch_gradient(net: &Network, rows: &[Vec<f64>], labels: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; net.params().len()];
    let mut scratch = Scratch::default();
    let scale = 2.0 / rows.len() as f64;
    let mut loss = 0.0;
    for (row, y) in rows.iter().zip(labels) {
        let err = net.forward_with(row, &mut scratch) - y;
        loss += err * err;
        net.backward(row, &mut scratch, scale * err, &mut grad);
    }
    (loss / rows.len() as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn schedule_values() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(&c, 0), 0.005);
        assert_eq!(lr_at(&c, 124), 0.005);
        assert!((lr_at(&c, 125) - 0.0035).abs() < 1e-15);
        assert!((lr_at(&c, 1999) - 0.005 * 0.7f64.powi(15)).abs() < 1e-18);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // Bias correction makes the first step exactly lr·sign(g) up to eps.
        let mut p = vec![1.0, -2.0];
        let mut a = Adam::new(2, &TrainConfig::default());
        a.step(&mut p, &[0.3, -7.0], 0.01);
        assert!((p[0] - 0.99).abs() < 1e-9 && (p[1] + 1.99).abs() < 1e-9);
    }

    fn fd_check(kind: EstimatorKind, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::init(kind, &mut rng).unwrap();
        for p in net.params_mut() {
            *p += rng.random_range(-0.05..0.05);
        }
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..kind.raw_dim()).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let labels: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..2.0)).collect();
        let (_, grad) = batch_gradient(&net, &rows, &labels);
        let h = 1e-5;
        for i in 0..grad.len() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (batch_gradient(&plus, &rows, &labels).0 - batch_gradient(&minus, &rows, &labels).0) / (2.0 * h);
            let scale = grad[i].abs().max(fd.abs());
            assert!(
                (grad[i] - fd).abs() <= 1e-4 * scale || scale < 1e-9,
                "{kind} param {i}: {} vs {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [EstimatorKind::Tactile, EstimatorKind::Proprioceptive, EstimatorKind::Multimodal] {
            fd_check(kind, 11);
        }
    }

    #[test]
    fn learns_linear_toy_problem() {
        // y uniform, x = y·d + noise: compare with ordinary least squares.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = [0.8, -0.4, 0.2, 0.1, 0.0, 0.3, -0.6, 0.5];
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut make = |n: usize| {
            let mut x = Vec::with_capacity(n * 8);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let label: f64 = rng.random_range(0.0..2.0);
                x.extend(d.iter().map(|di| label * di + noise.sample(&mut rng)));
                y.push(label);
            }
            Table { dim: 8, x, y }
        };
        let tr = make(4000);
        let va = make(500);

        let design = DMatrix::from_fn(4000, 9, |r, c| if c == 8 { 1.0 } else { tr.x[r * 8 + c] });
        let target = DVector::from_column_slice(&tr.y);
        let beta = (design.transpose() * &design)
            .cholesky()
            .unwrap()
            .solve(&(design.transpose() * &target));
        let ls = (&design * beta - target).norm_squared() / 4000.0;

        let config = TrainConfig {
            epochs: 400,
            batch_size: 200,
            lr: 0.01,
            lr_decay: 0.7,
            lr_decay_every: 50,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Network::init(EstimatorKind::Proprioceptive, &mut rng).unwrap();
        let (last, _, curves) = fit(&mut net, &tr, &va, &config, &mut rng);
        assert!(curves.train[config.epochs - 1] < curves.train[0]);
        let learned = tr.mse(&last, &mut Scratch::default());
        assert!((learned - ls).abs() <= 0.1 * ls, "mlp {learned} vs least squares {ls}");
    }

    #[test]
    fn empty_splits() {
        let c = TrainConfig::default();
        assert!(matches!(
            train(EstimatorKind::Proprioceptive, &[], &[], &c, 0),
            Err(Error::EmptySplit("train"))
        ));
        assert!(train(EstimatorKind::AnalyticalFz, &[], &[], &c, 0).is_err());
    }
}
