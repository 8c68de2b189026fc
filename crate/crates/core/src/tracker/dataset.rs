use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{LabelMode, TrackerConfig};
use crate::codebook::{dft_codebook, sweep, Codebook, Side};
use crate::encoders::{encode_scene, EncodedScene, EncoderConfig, InputMode};
use crate::error::{domain, Error, Result};
use crate::mimo::{build_channel, ArrayConfig, RayPath};
use crate::scene::{Episode, Scenario};

/// Ground-truth beam of one receiver in one scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamLabel {
    pub beam: usize,
    pub best_gain: f64,
}

/// Exhaustive-sweep labeler with half-wavelength ULAs and square DFT
/// codebooks on both ends.
#[derive(Debug, Clone)]
pub struct BeamLabeler {
    tx_array: ArrayConfig,
    rx_array: ArrayConfig,
    tx_book: Codebook,
    rx_book: Codebook,
    mode: LabelMode,
}

impl BeamLabeler {
    pub fn new(n_beams: usize, mode: LabelMode) -> Result<Self> {
        let (n_tx, n_rx) = match mode {
            LabelMode::BsOnly => (n_beams, 1),
            LabelMode::Pair { rx_beams } => {
                if rx_beams == 0 || n_beams % rx_beams != 0 {
                    return Err(domain(format!("{rx_beams} receive beams do not divide {n_beams} beams")));
                }
                (n_beams / rx_beams, rx_beams)
            }
        };
        let rx_book = if n_rx == 1 {
            Codebook::trivial(Side::Receiver)
        } else {
            dft_codebook(n_rx, n_rx)?.with_side(Side::Receiver)
        };
        Ok(Self {
            tx_array: ArrayConfig::half_wavelength(n_tx),
            rx_array: ArrayConfig::half_wavelength(n_rx),
            tx_book: dft_codebook(n_tx, n_tx)?,
            rx_book,
            mode,
        })
    }

    pub fn n_beams(&self) -> usize {
        self.tx_book.len() * self.rx_book.len()
    }

    /// Best beam for a ray set; `None` when there are no rays (outage).
    pub fn label(&self, rays: &[RayPath]) -> Result<Option<BeamLabel>> {
        if rays.is_empty() {
            return Ok(None);
        }
        let h = build_channel(rays, &self.tx_array, &self.rx_array)?;
        let s = sweep(&h, &self.tx_book, &self.rx_book)?;
        let beam = match self.mode {
            LabelMode::BsOnly => s.best_pair.0,
            LabelMode::Pair { .. } => s.best_flat,
        };
        Ok(Some(BeamLabel {
            beam,
            best_gain: s.best_gain(),
        }))
    }
}

/// Identifies one receiver in one scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SceneKey {
    pub episode_id: u64,
    pub scene_id: u32,
    pub receiver: usize,
}

pub type LabelTable = BTreeMap<SceneKey, BeamLabel>;

/// Labels every receiver of every scene. Outages are left out of the table
/// and counted.
pub fn label_episodes(episodes: &[Episode], labeler: &BeamLabeler) -> Result<(LabelTable, usize)> {
    let per_episode: Vec<Vec<(SceneKey, Option<BeamLabel>)>> = episodes
        .par_iter()
        .map(|ep| {
            let mut out = Vec::new();
            for scene in &ep.scenes {
                for (receiver, rays) in scene.per_receiver_rays.iter().enumerate() {
                    let key = SceneKey {
                        episode_id: ep.episode_id,
                        scene_id: scene.scene_id,
                        receiver,
                    };
                    out.push((key, labeler.label(rays)?));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut table = LabelTable::new();
    let mut outages = 0;
    for (key, label) in per_episode.into_iter().flatten() {
        match label {
            Some(l) => {
                table.insert(key, l);
            }
            None => {
                log::debug!("outage: episode {} scene {} receiver {}", key.episode_id, key.scene_id, key.receiver);
                outages += 1;
            }
        }
    }
    Ok((table, outages))
}

/// One supervised example: the scene at `scene_id`, the `W_b` beams before
/// it and the beam to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSample {
    pub episode_id: u64,
    pub scene_id: u32,
    pub receiver: usize,
    pub scene: Arc<EncodedScene>,
    pub prev_beams: Vec<usize>,
    pub label: usize,
}

/// Sliding windows over one receiver's track. `labels[t]` is `None` for an
/// outage; a sample at `t` needs labels at `t - window ..= t`.
pub fn build_samples(
    episode_id: u64,
    receiver: usize,
    labels: &[Option<usize>],
    scenes: &[Arc<EncodedScene>],
    window: usize,
) -> Result<Vec<TrackingSample>> {
    if window == 0 {
        return Err(domain("the beam window must be at least 1"));
    }
    if scenes.len() != labels.len() {
        return Err(Error::Dimension(format!("{} labels for {} encoded scenes", labels.len(), scenes.len())));
    }
    let mut out = Vec::new();
    for t in window..labels.len() {
        let span = &labels[t - window..=t];
        if span.iter().all(Option::is_some) {
            out.push(TrackingSample {
                episode_id,
                scene_id: t as u32,
                receiver,
                scene: Arc::clone(&scenes[t]),
                prev_beams: span[..window].iter().map(|b| b.expect("checked")).collect(),
                label: span[window].expect("checked"),
            });
        }
    }
    Ok(out)
}

/// Fraction of consecutive labelled scene pairs whose beams differ by at
/// most `max_step` (circular distance), over all receivers.
pub fn label_continuity(table: &LabelTable, n_beams: usize, max_step: usize) -> f64 {
    let mut total = 0usize;
    let mut close = 0usize;
    for (key, label) in table {
        let next = SceneKey {
            scene_id: key.scene_id + 1,
            ..*key
        };
        if let Some(n) = table.get(&next) {
            total += 1;
            let d = label.beam.abs_diff(n.beam);
            if d.min(n_beams - d) <= max_step {
                close += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        close as f64 / total as f64
    }
}

/// Samples of a whole dataset, in episode, receiver, scene order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<TrackingSample>,
}

impl Dataset {
    /// Encodes every labelled receiver scene and assembles the windows.
    pub fn from_episodes(
        scenario: &Scenario,
        episodes: &[Episode],
        labels: &LabelTable,
        mode: InputMode,
        encoder: &EncoderConfig,
        window: usize,
    ) -> Result<Self> {
        let parts: Vec<Vec<TrackingSample>> = episodes
            .par_iter()
            .map(|ep| {
                let n_rx = ep.scenes.first().map_or(0, |s| s.n_receivers());
                let mut samples = Vec::new();
                for rx in 0..n_rx {
                    let track: Vec<Option<usize>> = ep
                        .scenes
                        .iter()
                        .map(|s| {
                            labels
                                .get(&SceneKey {
                                    episode_id: ep.episode_id,
                                    scene_id: s.scene_id,
                                    receiver: rx,
                                })
                                .map(|l| l.beam)
                        })
                        .collect();
                    // Scenes that can only serve as history are never encoded.
                    let needed: Vec<bool> = (0..track.len())
                        .map(|t| t >= window && track[t - window..=t].iter().all(Option::is_some))
                        .collect();
                    let scenes = ep
                        .scenes
                        .iter()
                        .zip(&needed)
                        .map(|(s, &need)| {
                            Ok(Arc::new(if need {
                                encode_scene(scenario, s, rx, mode, encoder)?
                            } else {
                                EncodedScene {
                                    dims: vec![0, 0],
                                    values: Vec::new(),
                                }
                            }))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    samples.extend(build_samples(ep.episode_id, rx, &track, &scenes, window)?);
                }
                Ok(samples)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            samples: parts.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn episode_ids(&self) -> BTreeSet<u64> {
        self.samples.iter().map(|s| s.episode_id).collect()
    }

    /// Network input shape shared by all samples.
    pub fn input_shape(&self) -> Result<[usize; 3]> {
        let first = self.samples.first().ok_or_else(|| Error::EmptyDataset("no samples".into()))?.scene.input_shape();
        if let Some(s) = self.samples.iter().find(|s| s.scene.input_shape() != first) {
            return Err(Error::Dimension(format!(
                "mixed input shapes {first:?} and {:?}",
                s.scene.input_shape()
            )));
        }
        Ok(first)
    }

    pub fn subset(&self, episodes: &BTreeSet<u64>) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| episodes.contains(&s.episode_id)).cloned().collect(),
        }
    }
}

/// Episode ids assigned to training, validation and test.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: BTreeSet<u64>,
    pub validation: BTreeSet<u64>,
    pub test: BTreeSet<u64>,
}

/// Shuffles the episode ids with `seed` and cuts them by `fractions`.
/// Every part must end up non-empty.
pub fn split_episodes(ids: &BTreeSet<u64>, fractions: [f64; 3], seed: u64) -> Result<Split> {
    let mut order: Vec<u64> = ids.iter().copied().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let split = Split {
        train: order[..n_train].iter().copied().collect(),
        validation: order[n_train..n_train + n_val].iter().copied().collect(),
        test: order[n_train + n_val..].iter().copied().collect(),
    };
    if split.train.is_empty() || split.validation.is_empty() || split.test.is_empty() {
        return Err(domain(format!(
            "{n} episodes cannot be split {:?} into three non-empty parts",
            fractions
        )));
    }
    Ok(split)
}

/// Labels, encodes and splits episodes under `cfg`.
pub fn prepare(
    scenario: &Scenario,
    episodes: &[Episode],
    cfg: &TrackerConfig,
    encoder: &EncoderConfig,
) -> Result<(Dataset, LabelTable)> {
    cfg.validate()?;
    let labeler = BeamLabeler::new(cfg.n_beams, cfg.label_mode)?;
    let (labels, outages) = label_episodes(episodes, &labeler)?;
    if outages > 0 {
        log::info!("{outages} receiver scenes in outage were excluded");
    }
    let data = Dataset::from_episodes(scenario, episodes, &labels, cfg.input_mode, encoder, cfg.window)?;
    Ok((data, labels))
}
