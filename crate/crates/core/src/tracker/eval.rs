use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::TrackingSample;
use super::model::{scene_tensor, BeamModel, HybridModel, SelectionModel};
use crate::error::{domain, Error, Result};

/// Beam indices ordered by descending logit; equal logits keep the lower
/// index first.
pub fn rank(logits: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx
}

/// The previous beam first, then its neighbours `-1, +1, -2, +2, ...`
/// modulo `n_beams`, each index once.
pub fn baseline_previous(last: usize, n_beams: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n_beams);
    let mut seen = vec![false; n_beams];
    let mut push = |b: usize, out: &mut Vec<usize>| {
        if !seen[b] {
            seen[b] = true;
            out.push(b);
        }
    };
    push(last % n_beams, &mut out);
    for step in 1..=n_beams / 2 {
        push((last + n_beams - step % n_beams) % n_beams, &mut out);
        push((last + step) % n_beams, &mut out);
    }
    out
}

fn position(ranking: &[usize], label: usize) -> usize {
    ranking.iter().position(|&b| b == label).unwrap_or(ranking.len())
}

/// Rank position (0 = top-1) of each sample's label under `model`.
pub fn label_positions<M: BeamModel>(model: &M, samples: &[TrackingSample]) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| Ok(position(&rank(&model.logits(s)?), s.label)))
        .collect()
}

pub fn baseline_positions(samples: &[TrackingSample], n_beams: usize) -> Vec<usize> {
    samples
        .iter()
        .map(|s| position(&baseline_previous(*s.prev_beams.last().expect("non-empty window"), n_beams), s.label))
        .collect()
}

/// Rank positions when the tracker is fed its own top-1 predictions.
///
/// Samples of one receiver track that follow each other scene by scene form
/// a chain; the first sample of a chain starts from its ground-truth window.
pub fn closed_loop_positions(model: &HybridModel, samples: &[TrackingSample]) -> Result<Vec<usize>> {
    let mut tracks: BTreeMap<(u64, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        tracks.entry((s.episode_id, s.receiver)).or_default().push(i);
    }
    let per_track: Vec<Vec<(usize, usize)>> = tracks
        .into_values()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|mut idx| {
            idx.sort_by_key(|&i| samples[i].scene_id);
            let mut out = Vec::with_capacity(idx.len());
            let mut history: Vec<usize> = Vec::new();
            let mut last_scene: Option<u32> = None;
            for &i in &idx {
                let s = &samples[i];
                if last_scene.is_none_or(|p| p + 1 != s.scene_id) {
                    history = s.prev_beams.clone();
                }
                let ranking = rank(&model.forward(&scene_tensor(&s.scene)?, &history)?);
                out.push((i, position(&ranking, s.label)));
                history.remove(0);
                history.push(ranking[0]);
                last_scene = Some(s.scene_id);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut pos = vec![0; samples.len()];
    for (i, p) in per_track.into_iter().flatten() {
        pos[i] = p;
    }
    Ok(pos)
}

/// Fraction of positions below each `k`.
pub fn topk_accuracy(positions: &[usize], ks: &[usize]) -> Vec<f64> {
    ks.iter()
        .map(|&k| {
            if positions.is_empty() {
                0.0
            } else {
                positions.iter().filter(|&&p| p < k).count() as f64 / positions.len() as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub accuracy: f64,
    pub n: usize,
}

/// Top-K accuracy of several models on one test set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn add(&mut self, model: &str, positions: &[usize], ks: &[usize]) {
        for (&k, acc) in ks.iter().zip(topk_accuracy(positions, ks)) {
            self.rows.push(ReportRow {
                model: model.to_string(),
                k,
                accuracy: acc,
                n: positions.len(),
            });
        }
    }

    pub fn accuracy(&self, model: &str, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.model == model && r.k == k).map(|r| r.accuracy)
    }

    pub fn models(&self) -> Vec<&str> {
        let mut m: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !m.contains(&r.model.as_str()) {
                m.push(&r.model);
            }
        }
        m
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "model,K,accuracy,n")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.model, r.k, r.accuracy, r.n)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ReportRow>, _>>()
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        Ok(Self { rows })
    }
}

/// Options for [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// Also report the tracker fed with its own predictions.
    pub closed_loop: bool,
}

/// Sorted, deduplicated `ks` with the full beam count appended.
pub fn normalize_ks(ks: &[usize], n_beams: usize) -> Result<Vec<usize>> {
    if let Some(bad) = ks.iter().find(|&&k| k == 0 || k > n_beams) {
        return Err(domain(format!("K = {bad} outside 1..={n_beams}")));
    }
    let mut out: Vec<usize> = ks.to_vec();
    out.push(n_beams);
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Scores the tracker, the selection-only ablation and the previous-beam
/// baseline on `samples`.
pub fn evaluate(
    tracker: &HybridModel,
    selection: &SelectionModel,
    samples: &[TrackingSample],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no test samples".into()));
    }
    let m = tracker.n_beams;
    let ks = normalize_ks(&opts.ks, m)?;
    let mut report = EvalReport::default();
    report.add("tracker", &label_positions(tracker, samples)?, &ks);
    report.add("selection", &label_positions(selection, samples)?, &ks);
    report.add("baseline_previous", &baseline_positions(samples, m), &ks);
    if opts.closed_loop {
        report.add("tracker_closed_loop", &closed_loop_positions(tracker, samples)?, &ks);
    }
    Ok(report)
}
