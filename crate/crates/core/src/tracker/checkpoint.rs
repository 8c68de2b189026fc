//! Checkpoint directory layout:
//!
//! ```text
//! manifest.toml        config, input shape, episode split, tensor list
//! tracker_NNN.bttn     hybrid model parameters, f64, in params() order
//! selection_NNN.bttn   selection-only model parameters
//! training_log.csv     model, epoch, train_loss, val_top1
//! ```

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrackerConfig;
use super::dataset::Split;
use super::model::{HybridModel, SelectionModel};
use super::train::{EpochLog, TrainedModels};
use crate::blob::{Blob, BlobData};
use crate::error::{Error, Result};
use crate::neural::{Parameterized, Tensor};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const LOG_FILE: &str = "training_log.csv";
const FORMAT: &str = "beamtrack-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    input_shape: [usize; 3],
    train_episodes: Vec<u64>,
    validation_episodes: Vec<u64>,
    test_episodes: Vec<u64>,
    tracker: Vec<TensorEntry>,
    selection: Vec<TensorEntry>,
    config: TrackerConfig,
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn write_params(dir: &Path, prefix: &str, params: &[&Tensor]) -> Result<Vec<TensorEntry>> {
    params
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let file = format!("{prefix}_{i:03}.bttn");
            let blob = Blob::new(
                t.shape().iter().map(|&d| d as u32).collect(),
                BlobData::F64(t.data().to_vec()),
            )?;
            blob.write(&dir.join(&file))?;
            Ok(TensorEntry {
                file,
                shape: t.shape().to_vec(),
            })
        })
        .collect()
}

fn read_params<M: Parameterized>(dir: &Path, model: &mut M, entries: &[TensorEntry]) -> Result<()> {
    let mut params = model.params_mut();
    if params.len() != entries.len() {
        return Err(format_err(
            &dir.join(MANIFEST_FILE),
            format!("{} tensors listed, architecture has {}", entries.len(), params.len()),
        ));
    }
    for (p, e) in params.iter_mut().zip(entries) {
        let path = dir.join(&e.file);
        let blob = Blob::read(&path)?;
        if blob.dims_usize() != p.shape() || e.shape != p.shape() {
            return Err(format_err(&path, format!("shape {:?}, expected {:?}", blob.dims, p.shape())));
        }
        match blob.data {
            BlobData::F64(v) => **p = Tensor::new(e.shape.clone(), v)?,
            _ => return Err(format_err(&path, "parameters must be stored as f64")),
        }
    }
    Ok(())
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "model,epoch,train_loss,val_top1")?;
    for e in log {
        writeln!(w, "{},{},{},{}", e.model, e.epoch, e.train_loss, e.val_top1)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes trained models into `dir`, creating it if needed.
pub fn save(dir: &Path, trained: &TrainedModels, cfg: &TrackerConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format: FORMAT.into(),
        input_shape: trained.input_shape,
        train_episodes: trained.split.train.iter().copied().collect(),
        validation_episodes: trained.split.validation.iter().copied().collect(),
        test_episodes: trained.split.test.iter().copied().collect(),
        tracker: write_params(dir, "tracker", &trained.tracker.params())?,
        selection: write_params(dir, "selection", &trained.selection.params())?,
        config: cfg.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| format_err(&dir.join(MANIFEST_FILE), e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    write_training_log(&dir.join(LOG_FILE), &trained.log)
}

/// A checkpoint read back from disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrackerConfig,
    pub input_shape: [usize; 3],
    pub split: Split,
    pub tracker: HybridModel,
    pub selection: SelectionModel,
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: Manifest =
        toml::from_str(&fs::read_to_string(&path)?).map_err(|e| format_err(&path, e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(format_err(&path, format!("unknown checkpoint format {:?}", manifest.format)));
    }
    manifest.config.validate()?;
    // Initial values are overwritten; the seed only fixes the architecture.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tracker = HybridModel::new(&manifest.config, manifest.input_shape, &mut rng)?;
    let mut selection = SelectionModel::new(&manifest.config, manifest.input_shape, &mut rng)?;
    read_params(dir, &mut tracker, &manifest.tracker)?;
    read_params(dir, &mut selection, &manifest.selection)?;
    let set = |v: &[u64]| v.iter().copied().collect::<BTreeSet<u64>>();
    Ok(Checkpoint {
        split: Split {
            train: set(&manifest.train_episodes),
            validation: set(&manifest.validation_episodes),
            test: set(&manifest.test_episodes),
        },
        config: manifest.config,
        input_shape: manifest.input_shape,
        tracker,
        selection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trained() -> (TrainedModels, TrackerConfig) {
        let cfg = TrackerConfig {
            n_beams: 8,
            stem_channels: 2,
            block_channels: vec![2, 3],
            feature_dim: 4,
            lstm_hidden: 5,
            ..Default::default()
        };
        let shape = [2, 6, 6];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = TrainedModels {
            tracker: HybridModel::new(&cfg, shape, &mut rng).unwrap(),
            selection: SelectionModel::new(&cfg, shape, &mut rng).unwrap(),
            log: vec![EpochLog {
                model: "tracker".into(),
                epoch: 1,
                train_loss: 2.5,
                val_top1: 0.25,
            }],
            input_shape: shape,
            split: Split {
                train: [1, 2, 3].into(),
                validation: [4].into(),
                test: [5, 6].into(),
            },
        };
        (t, cfg)
    }

    #[test]
    fn round_trip_is_exact() {
        let (t, cfg) = trained();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &t, &cfg).unwrap();
        let c = load(dir.path()).unwrap();
        assert_eq!(c.tracker, t.tracker);
        assert_eq!(c.selection, t.selection);
        assert_eq!(c.split, t.split);
        assert_eq!(c.config, cfg);
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log, "model,epoch,train_loss,val_top1\ntracker,1,2.5,0.25\n");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (t, cfg) = trained();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &t, &cfg).unwrap();
        Blob::new(vec![1], BlobData::F64(vec![0.0]))
            .unwrap()
            .write(&dir.path().join("tracker_000.bttn"))
            .unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Format { .. })));
    }
}
