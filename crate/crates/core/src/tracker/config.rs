use serde::{Deserialize, Serialize};

use crate::encoders::InputMode;
use crate::error::{domain, Result};
use crate::neural::AdamConfig;

/// What a beam index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Base-station codeword only; the receiver has a single antenna.
    BsOnly,
    /// Flat index `p * rx_beams + q` over a transmit/receive codeword pair.
    Pair { rx_beams: usize },
}

/// Hyperparameters of the tracker and of its training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Number of beam classes `M`.
    pub n_beams: usize,
    /// Previous beams fed to the tracker, `W_b`.
    pub window: usize,
    pub input_mode: InputMode,
    pub label_mode: LabelMode,
    pub stem_channels: usize,
    pub stem_stride: usize,
    /// Output channels of each residual block. Every block after the first
    /// downsamples by two.
    pub block_channels: Vec<usize>,
    pub feature_dim: usize,
    pub lstm_hidden: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Train/validation/test fractions of the episodes.
    pub split: [f64; 3],
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            n_beams: 64,
            window: 3,
            input_mode: InputMode::Lidar,
            label_mode: LabelMode::BsOnly,
            stem_channels: 8,
            stem_stride: 2,
            block_channels: vec![8, 16],
            feature_dim: 32,
            lstm_hidden: 64,
            adam: AdamConfig::default(),
            epochs: 30,
            batch_size: 32,
            seed: 0,
            split: [0.70, 0.15, 0.15],
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_beams < 2 {
            return Err(domain("at least two beams are needed"));
        }
        if self.window == 0 {
            return Err(domain("the beam window must be at least 1"));
        }
        if let LabelMode::Pair { rx_beams } = self.label_mode {
            if rx_beams == 0 || self.n_beams % rx_beams != 0 {
                return Err(domain(format!("{rx_beams} receive beams do not divide {} beams", self.n_beams)));
            }
        }
        if self.stem_channels == 0 || self.stem_stride == 0 || self.feature_dim == 0 || self.lstm_hidden == 0 {
            return Err(domain("layer sizes and strides must be positive"));
        }
        if self.block_channels.iter().any(|&c| c == 0) {
            return Err(domain("residual blocks need at least one channel"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(domain("epochs and batch size must be positive"));
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(domain(format!("split fractions {:?} must be in [0, 1] and sum to 1", self.split)));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(domain(format!("invalid optimizer settings {a:?}")));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| domain(format!("tracker config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
