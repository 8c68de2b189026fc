//! File-based stages behind the command-line tool.
//!
//! ```text
//! generate  -> DIR/scenario.toml, DIR/episode_NNNNN.jsonl
//! encode    -> OUT/encoding.toml, OUT/index.csv, OUT/scenes/*.bttn
//! label     -> OUT/labels.toml, OUT/labels.csv
//! train     -> CKPT/ (see tracker::checkpoint)
//! eval      -> report.csv
//! ```
//!
//! `train` and `eval` read a directory holding both the encoder and the
//! labeler output, so `encode` and `label` are usually pointed at the same
//! directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blob::Blob;
use crate::encoders::{encode_scene, EncodedScene, EncoderConfig, InputMode};
use crate::error::{domain, Error, Result};
use crate::records::{episode_files, read_dataset, read_episode, read_scenario, write_episode, write_scenario, SCENARIO_FILE};
use crate::scene::{episode_seed, preset, simulate_episode, DatasetShape, ScenarioKind};
use crate::tracker::checkpoint;
use crate::tracker::eval::{evaluate, EvalOptions, EvalReport};
use crate::tracker::{build_samples, label_continuity, label_episodes, train_all, BeamLabeler, Dataset, LabelMode, LabelTable, SceneKey, TrackerConfig};

pub const INDEX_FILE: &str = "index.csv";
pub const ENCODING_FILE: &str = "encoding.toml";
pub const LABELS_FILE: &str = "labels.csv";
pub const LABEL_META_FILE: &str = "labels.toml";
const SCENE_DIR: &str = "scenes";

fn format_err(path: &Path, msg: impl ToString) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// What `generate` should simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    /// `t001`, `t002` or a path to a scenario file.
    pub scenario: String,
    pub episodes: Option<usize>,
    pub scenes: Option<usize>,
    pub receivers: Option<usize>,
    pub seed: u64,
}

/// Simulates episodes and writes them as JSON lines. Returns the number of
/// episodes written.
pub fn generate(opts: &GenerateOptions, out: &Path) -> Result<usize> {
    let (scenario, default_shape) = match preset(&opts.scenario) {
        Ok(p) => p,
        Err(_) if Path::new(&opts.scenario).is_file() => {
            let s = read_scenario(Path::new(&opts.scenario))?;
            let shape = match s.kind {
                ScenarioKind::UrbanCanyon => DatasetShape::T001,
                ScenarioKind::Roundabout => DatasetShape::T002,
            };
            (s, shape)
        }
        Err(e) => return Err(e),
    };
    let shape = DatasetShape {
        n_episodes: opts.episodes.unwrap_or(default_shape.n_episodes),
        n_scenes: opts.scenes.unwrap_or(default_shape.n_scenes),
        n_receivers: opts.receivers.unwrap_or(default_shape.n_receivers),
    };
    fs::create_dir_all(out)?;
    write_scenario(out, &scenario)?;
    (0..shape.n_episodes as u64).into_par_iter().try_for_each(|id| {
        let ep = simulate_episode(&scenario, id, shape.n_scenes, shape.n_receivers, episode_seed(opts.seed, id))?;
        write_episode(out, &ep).map(|_| ())
    })?;
    log::info!("wrote {} {} episodes to {}", shape.n_episodes, scenario.name, out.display());
    Ok(shape.n_episodes)
}

/// Encoder settings recorded next to the encoded scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingMeta {
    pub mode: InputMode,
    pub encoder: EncoderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexRow {
    episode_id: u64,
    scene_id: u32,
    receiver: usize,
    file: String,
}

/// Encodes every receiver of every scene into `out/scenes` and writes the
/// index. `grid` optionally points at an encoder configuration file.
pub fn encode(input: &Path, mode: InputMode, grid: Option<&Path>, out: &Path) -> Result<usize> {
    let scenario = read_scenario(&input.join(SCENARIO_FILE))?;
    let encoder = match grid {
        Some(p) => toml::from_str(&fs::read_to_string(p)?).map_err(|e| format_err(p, e))?,
        None => EncoderConfig::for_scenario(&scenario),
    };
    fs::create_dir_all(out.join(SCENE_DIR))?;
    let files = episode_files(input)?;
    let rows: Vec<Vec<IndexRow>> = files
        .par_iter()
        .map(|path| {
            let ep = read_episode(path, &scenario)?;
            let mut rows = Vec::new();
            for scene in &ep.scenes {
                for rx in 0..scene.n_receivers() {
                    let enc = encode_scene(&scenario, scene, rx, mode, &encoder)?;
                    let file = format!("{SCENE_DIR}/e{:05}_s{:03}_r{rx}.bttn", ep.episode_id, scene.scene_id);
                    enc.to_blob().write(&out.join(&file))?;
                    rows.push(IndexRow {
                        episode_id: ep.episode_id,
                        scene_id: scene.scene_id,
                        receiver: rx,
                        file,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let text = toml::to_string(&EncodingMeta { mode, encoder }).map_err(|e| format_err(&out.join(ENCODING_FILE), e))?;
    fs::write(out.join(ENCODING_FILE), text)?;
    let mut rows: Vec<IndexRow> = rows.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.episode_id, r.scene_id, r.receiver));
    let index = out.join(INDEX_FILE);
    let mut w = csv::Writer::from_path(&index).map_err(|e| format_err(&index, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| format_err(&index, e))?;
    }
    w.flush()?;
    log::info!("encoded {} receiver scenes into {}", rows.len(), out.display());
    Ok(rows.len())
}

/// Labeler settings recorded next to the labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMeta {
    pub n_beams: usize,
    pub mode: LabelMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelRow {
    episode_id: u64,
    scene_id: u32,
    receiver: usize,
    beam_index: usize,
    best_gain: f64,
}

/// Summary of a labeling run.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSummary {
    pub labelled: usize,
    pub outages: usize,
    /// Fraction of consecutive-scene transitions moving at most one beam.
    pub continuity: f64,
}

/// Sweeps every receiver scene and writes the best beam per row; outages are
/// left out.
pub fn label(input: &Path, meta: LabelMeta, out: &Path) -> Result<LabelSummary> {
    let (_, episodes) = read_dataset(input)?;
    let labeler = BeamLabeler::new(meta.n_beams, meta.mode)?;
    let (table, outages) = label_episodes(&episodes, &labeler)?;
    fs::create_dir_all(out)?;
    fs::write(
        out.join(LABEL_META_FILE),
        toml::to_string(&meta).map_err(|e| format_err(&out.join(LABEL_META_FILE), e))?,
    )?;
    let path = out.join(LABELS_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "episode_id,scene_id,receiver,beam_index,best_gain")?;
    for (k, l) in &table {
        writeln!(w, "{},{},{},{},{}", k.episode_id, k.scene_id, k.receiver, l.beam, l.best_gain)?;
    }
    w.flush()?;
    let continuity = label_continuity(&table, meta.n_beams, 1);
    log::info!(
        "labelled {} receiver scenes, {outages} outages, {:.1}% of transitions within one beam",
        table.len(),
        100.0 * continuity
    );
    Ok(LabelSummary {
        labelled: table.len(),
        outages,
        continuity,
    })
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| format_err(path, e))
}

pub fn read_labels(dir: &Path) -> Result<(LabelMeta, LabelTable)> {
    let meta_path = dir.join(LABEL_META_FILE);
    let meta: LabelMeta =
        toml::from_str(&fs::read_to_string(&meta_path)?).map_err(|e| format_err(&meta_path, e))?;
    let table = read_csv::<LabelRow>(&dir.join(LABELS_FILE))?
        .into_iter()
        .map(|r| {
            (
                SceneKey {
                    episode_id: r.episode_id,
                    scene_id: r.scene_id,
                    receiver: r.receiver,
                },
                crate::tracker::BeamLabel {
                    beam: r.beam_index,
                    best_gain: r.best_gain,
                },
            )
        })
        .collect();
    Ok((meta, table))
}

/// Loads encoded scenes and labels from `dir` and assembles windows.
/// Only scenes that end up in a sample are read from disk; when `episodes`
/// is given, other episodes are skipped entirely.
pub fn load_dataset(dir: &Path, cfg: &TrackerConfig, episodes: Option<&BTreeSet<u64>>) -> Result<Dataset> {
    let meta_path = dir.join(ENCODING_FILE);
    let enc: EncodingMeta = toml::from_str(&fs::read_to_string(&meta_path)?).map_err(|e| format_err(&meta_path, e))?;
    if enc.mode != cfg.input_mode {
        return Err(domain(format!(
            "scenes in {} are encoded as {:?}, the configuration expects {:?}",
            dir.display(),
            enc.mode,
            cfg.input_mode
        )));
    }
    let (label_meta, labels) = read_labels(dir)?;
    if label_meta.n_beams != cfg.n_beams || label_meta.mode != cfg.label_mode {
        return Err(domain(format!(
            "labels use {} beams ({:?}), the configuration expects {} ({:?})",
            label_meta.n_beams, label_meta.mode, cfg.n_beams, cfg.label_mode
        )));
    }
    let mut tracks: BTreeMap<(u64, usize), BTreeMap<u32, PathBuf>> = BTreeMap::new();
    for r in read_csv::<IndexRow>(&dir.join(INDEX_FILE))? {
        if episodes.is_none_or(|e| e.contains(&r.episode_id)) {
            tracks.entry((r.episode_id, r.receiver)).or_default().insert(r.scene_id, dir.join(r.file));
        }
    }
    let w = cfg.window;
    let parts: Vec<Vec<_>> = tracks
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|((episode_id, receiver), files)| {
            let n = files.keys().next_back().map_or(0, |&s| s as usize + 1);
            let track: Vec<Option<usize>> = (0..n as u32)
                .map(|scene_id| {
                    files.contains_key(&scene_id).then_some(()).and_then(|_| {
                        labels
                            .get(&SceneKey {
                                episode_id,
                                scene_id,
                                receiver,
                            })
                            .map(|l| l.beam)
                    })
                })
                .collect();
            let scenes = (0..n)
                .map(|t| {
                    let needed = t >= w && track[t - w..=t].iter().all(Option::is_some);
                    Ok(Arc::new(if needed {
                        EncodedScene::from_blob(&Blob::read(&files[&(t as u32)])?)?
                    } else {
                        EncodedScene {
                            dims: vec![0, 0],
                            values: Vec::new(),
                        }
                    }))
                })
                .collect::<Result<Vec<_>>>()?;
            build_samples(episode_id, receiver, &track, &scenes, w)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        samples: parts.into_iter().flatten().collect(),
    })
}

pub fn read_config(path: Option<&Path>) -> Result<TrackerConfig> {
    match path {
        Some(p) => TrackerConfig::from_toml(&fs::read_to_string(p)?),
        None => Ok(TrackerConfig::default()),
    }
}

/// Trains both models on `data` and writes the checkpoint directory.
pub fn train(data: &Path, cfg: &TrackerConfig, out: &Path) -> Result<()> {
    let dataset = load_dataset(data, cfg, None)?;
    log::info!("{} samples from {}", dataset.len(), data.display());
    let trained = train_all(&dataset, cfg)?;
    checkpoint::save(out, &trained, cfg)
}

/// Evaluates a checkpoint on the test episodes it was trained against.
pub fn eval(data: &Path, ckpt: &Path, opts: &EvalOptions, out: &Path) -> Result<EvalReport> {
    let c = checkpoint::load(ckpt)?;
    let test = load_dataset(data, &c.config, Some(&c.split.test))?;
    let report = evaluate(&c.tracker, &c.selection, &test.samples, opts)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    report.write_csv(out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_encode_label_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        let data = dir.path().join("data");
        let opts = GenerateOptions {
            scenario: "t002".into(),
            episodes: Some(3),
            scenes: Some(6),
            receivers: Some(2),
            seed: 5,
        };
        assert_eq!(generate(&opts, &raw).unwrap(), 3);
        assert_eq!(episode_files(&raw).unwrap().len(), 3);
        assert_eq!(encode(&raw, InputMode::Gnss, None, &data).unwrap(), 36);
        let summary = label(
            &raw,
            LabelMeta {
                n_beams: 64,
                mode: LabelMode::BsOnly,
            },
            &data,
        )
        .unwrap();
        assert_eq!(summary.labelled + summary.outages, 36);
        let header = fs::read_to_string(data.join(LABELS_FILE)).unwrap();
        assert!(header.starts_with("episode_id,scene_id,receiver,beam_index,best_gain\n"));

        let cfg = TrackerConfig {
            input_mode: InputMode::Gnss,
            ..Default::default()
        };
        let ds = load_dataset(&data, &cfg, None).unwrap();
        assert!(ds.len() <= 3 * 2 * 3);
        assert_eq!(ds.input_shape().unwrap(), [1, 64, 64]);
        let only: BTreeSet<u64> = [1].into();
        assert!(load_dataset(&data, &cfg, Some(&only)).unwrap().samples.iter().all(|s| s.episode_id == 1));

        let wrong = TrackerConfig::default();
        assert!(load_dataset(&data, &wrong, None).is_err());
    }

    #[test]
    fn unknown_scenario_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let opts = GenerateOptions {
            scenario: "nowhere".into(),
            episodes: Some(1),
            scenes: None,
            receivers: None,
            seed: 0,
        };
        assert!(generate(&opts, dir.path()).is_err());
    }
}
