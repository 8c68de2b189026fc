use rand::Rng;

use super::config::TrackerConfig;
use super::dataset::TrackingSample;
use crate::encoders::EncodedScene;
use crate::error::{dims, Result};
use crate::neural::{
    softmax_cross_entropy, zeros_like, Conv2d, Dense, Layer, Lstm, Parameterized, ResidualBlock, Sequential, Tensor,
};

/// Stem convolution, residual blocks (each followed by a ReLU), global
/// average pooling and a dense layer with ReLU producing the feature vector.
pub fn build_cnn(cfg: &TrackerConfig, input_shape: [usize; 3], rng: &mut impl Rng) -> Result<Sequential> {
    let mut layers = vec![
        Layer::Conv(Conv2d::new(input_shape[0], cfg.stem_channels, 3, cfg.stem_stride, 1, rng)),
        Layer::Relu,
    ];
    let mut channels = cfg.stem_channels;
    for (i, &c) in cfg.block_channels.iter().enumerate() {
        let stride = if i == 0 { 1 } else { 2 };
        layers.push(Layer::Residual(ResidualBlock::new(channels, c, stride, rng)));
        layers.push(Layer::Relu);
        channels = c;
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Dense(Dense::new(channels, cfg.feature_dim, rng)));
    layers.push(Layer::Relu);
    Sequential::new(input_shape.to_vec(), layers)
}

/// Network input for an encoded scene.
pub fn scene_tensor(scene: &EncodedScene) -> Result<Tensor> {
    Tensor::new(scene.input_shape().to_vec(), scene.normalized())
}

/// A beam classifier that may look at the previous beams.
pub trait BeamModel: Parameterized + Sync {
    fn n_beams(&self) -> usize;

    fn input_shape(&self) -> &[usize];

    /// Logits for a scene tensor and a beam history.
    fn forward(&self, input: &Tensor, prev_beams: &[usize]) -> Result<Vec<f64>>;

    /// Cross-entropy loss of one example; gradients are added to `grads`
    /// in [`Parameterized::params`] order.
    fn accumulate(&self, input: &Tensor, prev_beams: &[usize], label: usize, grads: &mut [Tensor]) -> Result<f64>;

    fn logits(&self, sample: &TrackingSample) -> Result<Vec<f64>> {
        self.forward(&scene_tensor(&sample.scene)?, &sample.prev_beams)
    }
}

/// CNN features and one-hot beam history fed step by step to an LSTM whose
/// last hidden state is mapped to beam logits.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub cnn: Sequential,
    pub lstm: Lstm,
    pub head: Dense,
    pub n_beams: usize,
    pub window: usize,
    /// Feed all-zero one-hots instead of the beam history.
    pub zero_history: bool,
}

impl HybridModel {
    pub fn new(cfg: &TrackerConfig, input_shape: [usize; 3], rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let cnn = build_cnn(cfg, input_shape, rng)?;
        let lstm = Lstm::new(cfg.feature_dim + cfg.n_beams, cfg.lstm_hidden, rng);
        let head = Dense::new(cfg.lstm_hidden, cfg.n_beams, rng);
        Ok(Self {
            cnn,
            lstm,
            head,
            n_beams: cfg.n_beams,
            window: cfg.window,
            zero_history: false,
        })
    }

    fn sequence(&self, feature: &[f64], prev_beams: &[usize]) -> Result<Vec<Vec<f64>>> {
        if prev_beams.len() != self.window {
            return Err(dims(format!("expected {} previous beams, got {}", self.window, prev_beams.len())));
        }
        prev_beams
            .iter()
            .map(|&b| {
                if b >= self.n_beams {
                    return Err(dims(format!("beam {b} out of range for {} beams", self.n_beams)));
                }
                let mut x = Vec::with_capacity(feature.len() + self.n_beams);
                x.extend_from_slice(feature);
                x.resize(feature.len() + self.n_beams, 0.0);
                if !self.zero_history {
                    x[feature.len() + b] = 1.0;
                }
                Ok(x)
            })
            .collect()
    }
}

impl Parameterized for HybridModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.cnn.params();
        p.extend(self.lstm.params());
        p.extend([&self.head.weight, &self.head.bias]);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.cnn.params_mut();
        p.extend(self.lstm.params_mut());
        p.extend([&mut self.head.weight, &mut self.head.bias]);
        p
    }
}

impl BeamModel for HybridModel {
    fn n_beams(&self) -> usize {
        self.n_beams
    }

    fn input_shape(&self) -> &[usize] {
        self.cnn.input_shape()
    }

    fn forward(&self, input: &Tensor, prev_beams: &[usize]) -> Result<Vec<f64>> {
        let feature = self.cnn.forward(input)?;
        let (hs, _) = self.lstm.forward_sequence(&self.sequence(feature.data(), prev_beams)?)?;
        self.head.forward(hs.last().expect("window is at least 1"))
    }

    fn accumulate(&self, input: &Tensor, prev_beams: &[usize], label: usize, grads: &mut [Tensor]) -> Result<f64> {
        let (feature, trace) = self.cnn.forward_trace(input)?;
        let (hs, caches) = self.lstm.forward_sequence(&self.sequence(feature.data(), prev_beams)?)?;
        let last = hs.last().expect("window is at least 1");
        let logits = self.head.forward(last)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, label)?;

        let n_cnn = self.cnn.params().len();
        let (g_cnn, rest) = grads.split_at_mut(n_cnn);
        let (g_lstm, g_head) = rest.split_at_mut(3);
        let (gw, gb) = g_head.split_at_mut(1);
        let dh_last = self.head.backward(last, &dlogits, &mut gw[0], &mut gb[0]);
        let mut dh = vec![vec![0.0; self.lstm.hidden_size()]; hs.len()];
        *dh.last_mut().expect("window is at least 1") = dh_last;
        let dxs = self.lstm.backward_sequence(&caches, &dh, g_lstm);
        let f = feature.len();
        let mut dfeature = vec![0.0; f];
        for dx in &dxs {
            dfeature.iter_mut().zip(&dx[..f]).for_each(|(a, b)| *a += b);
        }
        self.cnn.backward(&trace, &Tensor::from_vec(dfeature), g_cnn);
        Ok(loss)
    }
}

/// Beam selection from the scene alone: CNN features and a dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionModel {
    pub cnn: Sequential,
    pub head: Dense,
}

impl SelectionModel {
    pub fn new(cfg: &TrackerConfig, input_shape: [usize; 3], rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let cnn = build_cnn(cfg, input_shape, rng)?;
        let head = Dense::new(cfg.feature_dim, cfg.n_beams, rng);
        Ok(Self { cnn, head })
    }
}

impl Parameterized for SelectionModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.cnn.params();
        p.extend([&self.head.weight, &self.head.bias]);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.cnn.params_mut();
        p.extend([&mut self.head.weight, &mut self.head.bias]);
        p
    }
}

impl BeamModel for SelectionModel {
    fn n_beams(&self) -> usize {
        self.head.output()
    }

    fn input_shape(&self) -> &[usize] {
        self.cnn.input_shape()
    }

    fn forward(&self, input: &Tensor, _prev_beams: &[usize]) -> Result<Vec<f64>> {
        self.head.forward(self.cnn.forward(input)?.data())
    }

    fn accumulate(&self, input: &Tensor, _prev_beams: &[usize], label: usize, grads: &mut [Tensor]) -> Result<f64> {
        let (feature, trace) = self.cnn.forward_trace(input)?;
        let logits = self.head.forward(feature.data())?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, label)?;
        let n_cnn = self.cnn.params().len();
        let (g_cnn, g_head) = grads.split_at_mut(n_cnn);
        let (gw, gb) = g_head.split_at_mut(1);
        let dfeature = self.head.backward(feature.data(), &dlogits, &mut gw[0], &mut gb[0]);
        self.cnn.backward(&trace, &Tensor::from_vec(dfeature), g_cnn);
        Ok(loss)
    }
}

/// Zero gradient buffers for a model.
pub fn gradient_buffers<M: Parameterized>(model: &M) -> Vec<Tensor> {
    zeros_like(&model.params())
}
