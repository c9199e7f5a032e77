use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{FrameRecord, QaError};
use crate::spatial::CameraCalib;

/// Frames of one recording, ordered by time.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub frames: Vec<FrameRecord>,
}

impl Scene {
    pub fn new(id: impl Into<String>, frames: Vec<FrameRecord>) -> Result<Self, QaError> {
        let id = id.into();
        let bad = |message: String| QaError::Scene {
            scene: id.clone(),
            message,
        };
        for (i, f) in frames.iter().enumerate() {
            if !f.timestamp.is_finite() {
                return Err(bad(format!("frame {i} has a non-finite timestamp")));
            }
            if f.points.iter().any(|p| p.xyz.iter().any(|v| !v.is_finite())) {
                return Err(bad(format!("frame {i} has a non-finite point")));
            }
        }
        if frames.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            return Err(bad("timestamps are not monotone".into()));
        }
        Ok(Self { id, frames })
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> QaError {
    QaError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Parses JSON Lines text into frames; blank lines are skipped.
pub fn parse_scene(id: &str, source_name: &str, text: &str) -> Result<Scene, QaError> {
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let frame: FrameRecord = serde_json::from_str(line).map_err(|e| QaError::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        frames.push(frame);
    }
    Scene::new(id, frames)
}

/// Loads one scene file; the scene id is the file stem.
pub fn load_scene_file(path: &Path) -> Result<Scene, QaError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| io_err(path, "file name is not valid UTF-8"))?;
    parse_scene(id, &path.display().to_string(), &text)
}

/// Loads every `*.json` calibration in `dir`, keyed by camera id.
pub fn load_calibs(dir: &Path) -> Result<BTreeMap<String, CameraCalib>, QaError> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        let calib: CameraCalib = serde_json::from_str(&text).map_err(|e| QaError::Parse {
            source_name: p.display().to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        out.insert(calib.camera_id.clone(), calib);
    }
    Ok(out)
}

/// Loads `dir/*.jsonl` scenes sorted by id, plus calibrations from
/// `dir/calib/`.
pub fn load_scenes_dir(dir: &Path) -> Result<(Vec<Scene>, BTreeMap<String, CameraCalib>), QaError> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let scenes = paths
        .iter()
        .map(|p| load_scene_file(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((scenes, load_calibs(&dir.join("calib"))?))
}
