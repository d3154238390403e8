use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EstimatorKind;
use crate::sensor_sim::TACTILE_CHANNELS;
use crate::{Error, Result};

/// Width of each tactile encoder output.
pub const ENCODER_DIM: usize = 4;

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DenseSlot {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
}

impl DenseSlot {
    fn len(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }
}

/// Row-major dense layer as stored in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    enc: Option<[DenseSlot; 2]>,
    hidden: DenseSlot,
    out: DenseSlot,
    n_params: usize,
}

impl Layout {
    fn new(kind: EstimatorKind) -> Result<Self> {
        let (input, hidden) = match (kind.input_dim(), kind.hidden_dim()) {
            (Some(i), Some(h)) => (i, h),
            _ => return Err(Error::Argument(format!("{} has no trainable network", kind.as_str()))),
        };
        let mut cursor = 0;
        let mut slot = |n_in: usize, n_out: usize| {
            let s = DenseSlot {
                n_in,
                n_out,
                w: cursor,
                b: cursor + n_in * n_out,
            };
            cursor += s.len();
            s
        };
        let enc = kind
            .uses_tactile()
            .then(|| [slot(TACTILE_CHANNELS, ENCODER_DIM), slot(TACTILE_CHANNELS, ENCODER_DIM)]);
        let hidden = slot(input, hidden);
        let out = slot(hidden.n_out, 1);
        Ok(Layout {
            enc,
            hidden,
            out,
            n_params: cursor,
        })
    }

    fn slots(&self) -> Vec<DenseSlot> {
        let mut v: Vec<DenseSlot> = self.enc.map(|e| e.to_vec()).unwrap_or_default();
        v.extend([self.hidden, self.out]);
        v
    }
}

/// Frame-wise MLP with optional tactile encoders. All parameters live in one
/// flat vector so the optimizer and gradient checks can treat them uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    kind: EstimatorKind,
    layout: Layout,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backprop.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    enc: [[f64; ENCODER_DIM]; 2],
    features: Vec<f64>,
    hidden: Vec<f64>,
    d_hidden: Vec<f64>,
    d_feat: Vec<f64>,
}

fn affine(params: &[f64], s: DenseSlot, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &params[s.w + r * s.n_in..s.w + (r + 1) * s.n_in];
        *o = params[s.b + r] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
    }
}

impl Network {
    /// All-zero parameters.
    pub fn zeros(kind: EstimatorKind) -> Result<Self> {
        let layout = Layout::new(kind)?;
        Ok(Network {
            kind,
            layout,
            params: vec![0.0; layout.n_params],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(kind: EstimatorKind, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Network::zeros(kind)?;
        for s in net.layout.slots() {
            let a = (6.0 / (s.n_in + s.n_out) as f64).sqrt();
            for w in &mut net.params[s.w..s.b] {
                *w = rng.random_range(-a..a);
            }
        }
        Ok(net)
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Length of the raw input vector (before encoding).
    pub fn raw_dim(&self) -> usize {
        self.kind.raw_dim()
    }

    /// Encoded feature vector fed to the hidden layer.
    pub fn features(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check(raw)?;
        let mut s = Scratch::default();
        self.encode(raw, &mut s);
        Ok(s.features)
    }

    fn check(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.raw_dim() {
            return Err(Error::Shape {
                expected: self.raw_dim(),
                actual: raw.len(),
            });
        }
        Ok(())
    }

    fn encode(&self, raw: &[f64], s: &mut Scratch) {
        s.features.clear();
        match self.layout.enc {
            Some(enc) => {
                for (f, slot) in enc.iter().enumerate() {
                    let x = &raw[f * TACTILE_CHANNELS..(f + 1) * TACTILE_CHANNELS];
                    affine(&self.params, *slot, x, &mut s.enc[f]);
                    for v in &mut s.enc[f] {
                        *v = v.max(0.0);
                    }
                    s.features.extend_from_slice(&s.enc[f]);
                }
                s.features.extend_from_slice(&raw[2 * TACTILE_CHANNELS..]);
            }
            None => s.features.extend_from_slice(raw),
        }
    }

    fn run(&self, raw: &[f64], s: &mut Scratch) -> f64 {
        self.encode(raw, s);
        let h = self.layout.hidden;
        s.hidden.resize(h.n_out, 0.0);
        affine(&self.params, h, &s.features, &mut s.hidden);
        for v in &mut s.hidden {
            *v = v.max(0.0);
        }
        let mut out = [0.0];
        affine(&self.params, self.layout.out, &s.hidden, &mut out);
        out[0]
    }

    pub fn forward(&self, raw: &[f64]) -> Result<f64> {
        self.check(raw)?;
        Ok(self.run(raw, &mut Scratch::default()))
    }

    /// Forward pass that reuses `scratch`; `raw` must have [`Self::raw_dim`] entries.
    pub fn forward_with(&self, raw: &[f64], scratch: &mut Scratch) -> f64 {
        debug_assert_eq!(raw.len(), self.raw_dim());
        self.run(raw, scratch)
    }

    /// Adds `dloss/dparams` for one sample with `dloss/dout = upstream` into
    /// `grad`. `scratch` must hold the forward pass of the same `raw`.
    pub fn backward(&self, raw: &[f64], scratch: &mut Scratch, upstream: f64, grad: &mut [f64]) {
        let p = &self.params;
        let (h, o) = (self.layout.hidden, self.layout.out);
        let Scratch {
            enc: enc_act,
            features,
            hidden,
            d_hidden,
            d_feat,
        } = scratch;
        d_hidden.clear();
        d_hidden.resize(h.n_out, 0.0);
        for (j, &a) in hidden.iter().enumerate() {
            grad[o.w + j] += upstream * a;
            if a > 0.0 {
                d_hidden[j] = upstream * p[o.w + j];
            }
        }
        grad[o.b] += upstream;

        d_feat.clear();
        d_feat.resize(h.n_in, 0.0);
        for (r, &dh) in d_hidden.iter().enumerate() {
            if dh == 0.0 {
                continue;
            }
            let base = h.w + r * h.n_in;
            for (c, &x) in features.iter().enumerate() {
                grad[base + c] += dh * x;
                d_feat[c] += dh * p[base + c];
            }
            grad[h.b + r] += dh;
        }

        if let Some(enc) = self.layout.enc {
            for (f, slot) in enc.iter().enumerate() {
                let x = &raw[f * TACTILE_CHANNELS..(f + 1) * TACTILE_CHANNELS];
                for k in 0..ENCODER_DIM {
                    let d = d_feat[f * ENCODER_DIM + k];
                    if enc_act[f][k] <= 0.0 || d == 0.0 {
                        continue;
                    }
                    let base = slot.w + k * slot.n_in;
                    for (c, &xc) in x.iter().enumerate() {
                        grad[base + c] += d * xc;
                    }
                    grad[slot.b + k] += d;
                }
            }
        }
    }

    fn export(&self, s: DenseSlot) -> DenseLayer {
        DenseLayer {
            rows: s.n_out,
            cols: s.n_in,
            w: self.params[s.w..s.b].to_vec(),
            b: self.params[s.b..s.b + s.n_out].to_vec(),
        }
    }

    /// `[hidden, output]` followed by the two encoders, if any.
    pub fn to_layers(&self) -> (Vec<DenseLayer>, Option<[DenseLayer; 2]>) {
        let layers = vec![self.export(self.layout.hidden), self.export(self.layout.out)];
        let enc = self.layout.enc.map(|[a, b]| [self.export(a), self.export(b)]);
        (layers, enc)
    }

    pub fn from_layers(kind: EstimatorKind, layers: &[DenseLayer], encoders: Option<&[DenseLayer; 2]>) -> Result<Self> {
        let mut net = Network::zeros(kind)?;
        let mut pairs: Vec<(DenseSlot, &DenseLayer)> = Vec::new();
        if layers.len() != 2 {
            return Err(Error::Shape {
                expected: 2,
                actual: layers.len(),
            });
        }
        pairs.push((net.layout.hidden, &layers[0]));
        pairs.push((net.layout.out, &layers[1]));
        match (net.layout.enc, encoders) {
            (Some([sa, sb]), Some([la, lb])) => {
                pairs.push((sa, la));
                pairs.push((sb, lb));
            }
            (None, None) => {}
            (Some(_), None) => return Err(Error::Argument(format!("{} model needs encoders", kind.as_str()))),
            (None, Some(_)) => return Err(Error::Argument(format!("{} model has no encoders", kind.as_str()))),
        }
        for (slot, layer) in pairs {
            if layer.rows != slot.n_out || layer.cols != slot.n_in {
                return Err(Error::Shape {
                    expected: slot.n_out * slot.n_in,
                    actual: layer.rows * layer.cols,
                });
            }
            if layer.w.len() != slot.n_in * slot.n_out || layer.b.len() != slot.n_out {
                return Err(Error::Shape {
                    expected: slot.len(),
                    actual: layer.w.len() + layer.b.len(),
                });
            }
            if !layer.w.iter().chain(&layer.b).all(|v| v.is_finite()) {
                return Err(Error::Argument("non-finite weight".into()));
            }
            net.params[slot.w..slot.b].copy_from_slice(&layer.w);
            net.params[slot.b..slot.b + slot.n_out].copy_from_slice(&layer.b);
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const KINDS: [EstimatorKind; 3] = [
        EstimatorKind::Tactile,
        EstimatorKind::Proprioceptive,
        EstimatorKind::Multimodal,
    ];

    #[test]
    fn parameter_counts() {
        // encoders 2 * (19*4 + 4) = 160
        let n = |k| Network::zeros(k).unwrap().params().len();
        assert_eq!(n(EstimatorKind::Proprioceptive), 8 * 4 + 4 + 4 + 1);
        assert_eq!(n(EstimatorKind::Tactile), 160 + 10 * 4 + 4 + 4 + 1);
        assert_eq!(n(EstimatorKind::Multimodal), 160 + 16 * 8 + 8 + 8 + 1);
    }

    #[test]
    fn feature_dims() {
        for (k, d) in KINDS.iter().zip([10, 8, 16]) {
            let net = Network::init(*k, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(net.features(&vec![0.3; net.raw_dim()]).unwrap().len(), d);
            assert!(matches!(net.features(&[0.0; 3]), Err(Error::Shape { .. })));
        }
    }

    #[test]
    fn zero_input_zero_features_and_nonnegative_encoders() {
        let net = Network::init(EstimatorKind::Multimodal, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(net.features(&[0.0; 46]).unwrap().iter().all(|&v| v == 0.0));
        let raw: Vec<f64> = (0..46).map(|i| (i as f64 * 0.7).sin()).collect();
        assert!(net.features(&raw).unwrap()[..8].iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_weights_predict_zero() {
        let net = Network::zeros(EstimatorKind::Proprioceptive).unwrap();
        assert_eq!(net.forward(&[1.0; 8]).unwrap(), 0.0);
    }

    #[test]
    fn hand_set_forward() {
        // Only inputs 0, 1 and hidden units 0, 1 are wired:
        // h0 = relu(x0 + 2 x1 + 0.5), h1 = relu(-x0 + x1 - 1),
        // out = 3 h0 - h1 + 0.25
        let mut net = Network::zeros(EstimatorKind::Proprioceptive).unwrap();
        let p = net.params_mut();
        p[0] = 1.0;
        p[1] = 2.0;
        p[8] = -1.0;
        p[9] = 1.0;
        p[32] = 0.5;
        p[33] = -1.0;
        p[36] = 3.0;
        p[37] = -1.0;
        p[40] = 0.25;
        let mut x = [0.0; 8];
        x[0] = 2.0;
        x[1] = -0.5;
        // h0 = 1.5, h1 = 0
        assert_eq!(net.forward(&x).unwrap(), 3.0 * 1.5 + 0.25);
        x[1] = 0.0;
        assert_eq!(net.forward(&x).unwrap(), 3.0 * 2.5 + 0.25);
    }

    #[test]
    fn linear_head_is_unbounded() {
        let mut net = Network::zeros(EstimatorKind::Proprioceptive).unwrap();
        net.params_mut()[40] = -5.0;
        assert_eq!(net.forward(&[0.0; 8]).unwrap(), -5.0);
    }

    #[test]
    fn layers_round_trip() {
        for k in KINDS {
            let net = Network::init(k, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let (layers, enc) = net.to_layers();
            assert_eq!(Network::from_layers(k, &layers, enc.as_ref()).unwrap(), net);
        }
        let (layers, _) = Network::zeros(EstimatorKind::Proprioceptive).unwrap().to_layers();
        assert!(Network::from_layers(EstimatorKind::Multimodal, &layers, None).is_err());
    }
}
