use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrackerConfig;
use super::dataset::{split_episodes, Dataset, Split, TrackingSample};
use super::eval::label_positions;
use super::model::{gradient_buffers, scene_tensor, BeamModel, HybridModel, SelectionModel};
use crate::error::{Error, Result};
use crate::neural::{Adam, Tensor};
use crate::scene::episode_seed;

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub model: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: f64,
}

/// Fraction of samples whose label is the model's top-ranked beam.
pub fn top1<M: BeamModel>(model: &M, samples: &[TrackingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples to score".into()));
    }
    let pos = label_positions(model, samples)?;
    Ok(pos.iter().filter(|&&p| p == 0).count() as f64 / samples.len() as f64)
}

/// Mean cross-entropy over `samples` without touching the parameters.
pub fn mean_loss<M: BeamModel>(model: &M, samples: &[TrackingSample]) -> Result<f64> {
    let mut scratch = gradient_buffers(model);
    let mut total = 0.0;
    for s in samples {
        total += model.accumulate(&scene_tensor(&s.scene)?, &s.prev_beams, s.label, &mut scratch)?;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Minibatch Adam on softmax cross-entropy. Samples are visited in a seeded
/// order, one at a time, so the run is reproducible bit for bit. The model
/// is left at the epoch with the best validation top-1 (earliest on ties).
pub fn train_model<M: BeamModel>(
    model: &mut M,
    name: &str,
    train: &[TrackingSample],
    validation: &[TrackingSample],
    cfg: &TrackerConfig,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::EmptyDataset("validation split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(cfg.adam, &model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = gradient_buffers(model);
            for &i in batch {
                let s = &train[i];
                epoch_loss += model.accumulate(&scene_tensor(&s.scene)?, &s.prev_beams, s.label, &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(scale));
            adam.update(model.params_mut(), &grads)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_top1 = top1(model, validation)?;
        log::info!("{name} epoch {epoch}: train loss {train_loss:.4}, validation top-1 {val_top1:.4}");
        if best.as_ref().is_none_or(|(b, _)| val_top1 > *b) {
            best = Some((val_top1, model.params().into_iter().cloned().collect()));
        }
        log.push(EpochLog {
            model: name.to_string(),
            epoch,
            train_loss,
            val_top1,
        });
    }
    if let Some((_, params)) = best {
        for (p, b) in model.params_mut().into_iter().zip(params) {
            *p = b;
        }
    }
    Ok(log)
}

/// Both trained models with their log and the episode split they used.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub tracker: HybridModel,
    pub selection: SelectionModel,
    pub log: Vec<EpochLog>,
    pub input_shape: [usize; 3],
    pub split: Split,
}

/// Splits `data` by episode and trains the tracker and the selection-only
/// ablation under the same configuration.
pub fn train_all(data: &Dataset, cfg: &TrackerConfig) -> Result<TrainedModels> {
    cfg.validate()?;
    let input_shape = data.input_shape()?;
    let split = split_episodes(&data.episode_ids(), cfg.split, cfg.seed)?;
    let train = data.subset(&split.train);
    let validation = data.subset(&split.validation);
    log::info!(
        "training on {} samples, validating on {} ({} / {} episodes)",
        train.len(),
        validation.len(),
        split.train.len(),
        split.validation.len()
    );

    let mut tracker = HybridModel::new(cfg, input_shape, &mut ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, 1)))?;
    let mut log = train_model(&mut tracker, "tracker", &train.samples, &validation.samples, cfg, episode_seed(cfg.seed, 2))?;
    let mut selection = SelectionModel::new(cfg, input_shape, &mut ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, 3)))?;
    log.extend(train_model(
        &mut selection,
        "selection",
        &train.samples,
        &validation.samples,
        cfg,
        episode_seed(cfg.seed, 4),
    )?);
    Ok(TrainedModels {
        tracker,
        selection,
        log,
        input_shape,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncodedScene;
    use std::sync::Arc;

    fn tiny_cfg() -> TrackerConfig {
        TrackerConfig {
            n_beams: 64,
            stem_channels: 4,
            stem_stride: 1,
            block_channels: vec![4],
            feature_dim: 8,
            lstm_hidden: 16,
            epochs: 1,
            batch_size: 5,
            ..Default::default()
        }
    }

    fn samples(n: usize) -> Vec<TrackingSample> {
        (0..n)
            .map(|i| {
                let b = (i * 7) % 64;
                TrackingSample {
                    episode_id: i as u64,
                    scene_id: 3,
                    receiver: 0,
                    scene: Arc::new(EncodedScene {
                        dims: vec![6, 6],
                        values: (0..36).map(|j| if j == i % 36 { -3 } else { -((j % 2) as i8) }).collect(),
                    }),
                    prev_beams: vec![b, b, b],
                    label: b,
                }
            })
            .collect()
    }

    #[test]
    fn one_epoch_reduces_loss() {
        let cfg = tiny_cfg();
        let data = samples(10);
        let mut m = HybridModel::new(&cfg, [1, 6, 6], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = mean_loss(&m, &data).unwrap();
        assert!((before - 64f64.ln()).abs() < 1.0, "{before}");
        let cfg = TrackerConfig {
            adam: crate::neural::AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..cfg
        };
        train_model(&mut m, "tracker", &data, &data, &cfg, 1).unwrap();
        let after = mean_loss(&m, &data).unwrap();
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn same_seed_same_log_and_params() {
        let cfg = TrackerConfig { epochs: 2, ..tiny_cfg() };
        let data = samples(12);
        let run = || {
            let mut m = HybridModel::new(&cfg, [1, 6, 6], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let log = train_model(&mut m, "tracker", &data[..8], &data[8..], &cfg, 9).unwrap();
            (m, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_split_is_an_error() {
        let cfg = tiny_cfg();
        let data = samples(3);
        let mut m = SelectionModel::new(&cfg, [1, 6, 6], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(train_model(&mut m, "selection", &[], &data, &cfg, 0).is_err());
        assert!(train_model(&mut m, "selection", &data, &[], &cfg, 0).is_err());
    }
}
