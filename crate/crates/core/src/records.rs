//! On-disk episode records: one JSON-lines file per episode, one scene per
//! line. Floats are written in shortest round-trip form, so reading a file
//! back reproduces every value bit for bit.
//!
//! ```text
//! {"episode_id":0,"scene_id":0,"t_ms":0,"serving_bs":[0,1],
//!  "vehicles":[{"position":[x,y,z],"velocity":[vx,vy,vz],"heading":h,
//!               "bbox":[l,w,h],"is_receiver":true}, ...],
//!  "rays":[[{"gain_re":..,"gain_im":..,"aod_az":..,"aod_el":..,
//!            "aoa_az":..,"aoa_el":..,"delay_s":..}, ...], ...]}
//! ```
//!
//! `rays[k]` belongs to the k-th receiver; an empty list is an outage.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mimo::RayPath;
use crate::scene::{Episode, Scenario, Scene, VehicleState};

pub const SCENARIO_FILE: &str = "scenario.toml";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayRecord {
    pub gain_re: f64,
    pub gain_im: f64,
    pub aod_az: f64,
    pub aod_el: f64,
    pub aoa_az: f64,
    pub aoa_el: f64,
    pub delay_s: f64,
}

impl From<&RayPath> for RayRecord {
    fn from(r: &RayPath) -> Self {
        Self {
            gain_re: r.gain.re,
            gain_im: r.gain.im,
            aod_az: r.aod_az,
            aod_el: r.aod_el,
            aoa_az: r.aoa_az,
            aoa_el: r.aoa_el,
            delay_s: r.delay,
        }
    }
}

impl From<RayRecord> for RayPath {
    fn from(r: RayRecord) -> Self {
        Self {
            gain: Complex64::new(r.gain_re, r.gain_im),
            aod_az: r.aod_az,
            aod_el: r.aod_el,
            aoa_az: r.aoa_az,
            aoa_el: r.aoa_el,
            delay: r.delay_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub episode_id: u64,
    pub scene_id: u32,
    pub t_ms: u64,
    pub serving_bs: Vec<usize>,
    pub vehicles: Vec<VehicleState>,
    pub rays: Vec<Vec<RayRecord>>,
}

impl SceneRecord {
    pub fn from_scene(episode_id: u64, scene: &Scene) -> Self {
        Self {
            episode_id,
            scene_id: scene.scene_id,
            t_ms: scene.t_ms,
            serving_bs: scene.serving_bs.clone(),
            vehicles: scene.vehicles.clone(),
            rays: scene
                .per_receiver_rays
                .iter()
                .map(|rays| rays.iter().map(RayRecord::from).collect())
                .collect(),
        }
    }

    pub fn into_scene(self) -> Scene {
        Scene {
            scene_id: self.scene_id,
            t_ms: self.t_ms,
            vehicles: self.vehicles,
            per_receiver_rays: self
                .rays
                .into_iter()
                .map(|rays| rays.into_iter().map(RayPath::from).collect())
                .collect(),
            serving_bs: self.serving_bs,
        }
    }
}

pub fn episode_file_name(episode_id: u64) -> String {
    format!("episode_{episode_id:05}.jsonl")
}

pub fn write_episode(dir: &Path, episode: &Episode) -> Result<PathBuf> {
    let path = dir.join(episode_file_name(episode.episode_id));
    let mut w = BufWriter::new(File::create(&path)?);
    for scene in &episode.scenes {
        let line = serde_json::to_string(&SceneRecord::from_scene(episode.episode_id, scene)).map_err(|e| Error::Format {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(path)
}

pub fn read_episode(path: &Path, scenario: &Scenario) -> Result<Episode> {
    let reader = BufReader::new(File::open(path)?);
    let mut scenes = Vec::new();
    let mut episode_id = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", lineno + 1),
        })?;
        match episode_id {
            None => episode_id = Some(rec.episode_id),
            Some(id) if id != rec.episode_id => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    msg: format!("mixed episode ids {id} and {}", rec.episode_id),
                })
            }
            _ => {}
        }
        scenes.push(rec.into_scene());
    }
    let episode_id = episode_id.ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        msg: "no scenes".into(),
    })?;
    Ok(Episode {
        episode_id,
        scenario: scenario.name.clone(),
        scene_interval_ms: scenario.scene_interval_ms,
        scenes,
    })
}

pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<()> {
    let text = toml::to_string(scenario).map_err(|e| Error::Format {
        path: dir.join(SCENARIO_FILE),
        msg: e.to_string(),
    })?;
    fs::write(dir.join(SCENARIO_FILE), text)?;
    Ok(())
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)?;
    let scenario: Scenario = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Episode files in `dir`, sorted by name.
pub fn episode_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("episode_") && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads the scenario and every episode of a generated dataset directory.
pub fn read_dataset(dir: &Path) -> Result<(Scenario, Vec<Episode>)> {
    let scenario = read_scenario(&dir.join(SCENARIO_FILE))?;
    let episodes = episode_files(dir)?
        .iter()
        .map(|p| read_episode(p, &scenario))
        .collect::<Result<Vec<_>>>()?;
    Ok((scenario, episodes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{preset, simulate_episode};

    #[test]
    fn episode_round_trip_is_exact() {
        let (s, _) = preset("t002").unwrap();
        let ep = simulate_episode(&s, 7, 4, 3, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_episode(dir.path(), &ep).unwrap();
        assert!(path.ends_with("episode_00007.jsonl"));
        let back = read_episode(&path, &s).unwrap();
        assert_eq!(back, ep);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("\"gain_re\""));
        assert!(text.contains("\"delay_s\""));
    }

    #[test]
    fn scenario_round_trip() {
        for name in ["t001", "t002"] {
            let (s, _) = preset(name).unwrap();
            let dir = tempfile::tempdir().unwrap();
            write_scenario(dir.path(), &s).unwrap();
            assert_eq!(read_scenario(&dir.path().join(SCENARIO_FILE)).unwrap(), s);
        }
    }

    #[test]
    fn malformed_line_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("episode_00000.jsonl");
        fs::write(&p, "{not json}\n").unwrap();
        let (s, _) = preset("t001").unwrap();
        assert!(matches!(read_episode(&p, &s), Err(Error::Format { .. })));
    }
}
