//! On-disk formats.
//!
//! - Pose: JSON `{"R": [[..3],[..3],[..3]], "T": [tx,ty,tz]}` (meters).
//! - Intrinsics: JSON `{"fx":..,"fy":..,"cx":..,"cy":..}` (pixels).
//! - Vertices: JSON array of `[x,y,z]` triples (meters) or headerless
//!   3-column CSV; picked by file extension.
//! - Landmarks: JSON array of `[x,y]` pairs (pixels) or 2-column CSV.
//!
//! Floats are written with shortest round-trip formatting so write/load
//! cycles are exact and byte-reproducible.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Frame, LandmarkSet2D, Pose6DoF, VertexSet};

#[derive(Serialize, Deserialize)]
struct PoseFile {
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    #[serde(rename = "T")]
    t: [f64; 3],
}

pub fn write_pose(pose: &Pose6DoF, path: impl AsRef<Path>) -> Result<()> {
    let r = pose.rotation();
    let file = PoseFile {
        r: [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        t: [
            pose.translation().x,
            pose.translation().y,
            pose.translation().z,
        ],
    };
    write_json(&file, path)
}

pub fn read_pose(path: impl AsRef<Path>) -> Result<Pose6DoF> {
    let file: PoseFile = read_json(path.as_ref())?;
    let r = Matrix3::from_fn(|i, j| file.r[i][j]);
    Pose6DoF::new(r, Vector3::new(file.t[0], file.t[1], file.t[2]))
}

pub fn write_intrinsics(k: &CameraIntrinsics, path: impl AsRef<Path>) -> Result<()> {
    write_json(k, path)
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics> {
    let raw: CameraIntrinsics = read_json(path.as_ref())?;
    CameraIntrinsics::new(raw.fx, raw.fy, raw.cx, raw.cy)
}

fn has_csv_extension(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("csv")
}

pub fn write_vertices(v: &VertexSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if has_csv_extension(path) {
        let mut out = String::new();
        for p in v.points() {
            out.push_str(&format!("{},{},{}\n", p.x, p.y, p.z));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    } else {
        let rows: Vec<[f64; 3]> = v.points().iter().map(|p| [p.x, p.y, p.z]).collect();
        write_json(&rows, path)
    }
}

pub fn read_vertices(path: impl AsRef<Path>, frame: Frame) -> Result<VertexSet> {
    let path = path.as_ref();
    if has_csv_extension(path) {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("line {}: expected 3 columns, got {}", ln + 1, cols.len()),
                ));
            }
            let mut row = [0.0; 3];
            for (i, c) in cols.iter().enumerate() {
                row[i] = c.trim().parse::<f64>().map_err(|e| {
                    Error::parse(path.display().to_string(), format!("line {}: {e}", ln + 1))
                })?;
            }
            rows.push(row);
        }
        VertexSet::from_rows(&rows, frame)
    } else {
        let rows: Vec<[f64; 3]> = read_json(path)?;
        VertexSet::from_rows(&rows, frame)
    }
}

pub fn write_landmarks(p: &LandmarkSet2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if has_csv_extension(path) {
        let mut out = String::new();
        for q in p.points() {
            out.push_str(&format!("{},{}\n", q.x, q.y));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    } else {
        let rows: Vec<[f64; 2]> = p.points().iter().map(|q| [q.x, q.y]).collect();
        write_json(&rows, path)
    }
}

pub fn read_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSet2D> {
    let path = path.as_ref();
    if has_csv_extension(path) {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 2 {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("line {}: expected 2 columns, got {}", ln + 1, cols.len()),
                ));
            }
            let x = cols[0].trim().parse::<f64>().map_err(|e| {
                Error::parse(path.display().to_string(), format!("line {}: {e}", ln + 1))
            })?;
            let y = cols[1].trim().parse::<f64>().map_err(|e| {
                Error::parse(path.display().to_string(), format!("line {}: {e}", ln + 1))
            })?;
            rows.push([x, y]);
        }
        LandmarkSet2D::from_rows(&rows)
    } else {
        let rows: Vec<[f64; 2]> = read_json(path)?;
        LandmarkSet2D::from_rows(&rows)
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(value)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

/// Reads `<id>.vertices.(json|csv)` + `<id>.pose.json` pairs from a
/// directory into predictions keyed by file stem, sorted by id.
pub fn read_prediction_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, crate::metrics::Prediction)>> {
    let dir = dir.as_ref();
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        for suffix in [".vertices.json", ".vertices.csv"] {
            if let Some(stem) = name.strip_suffix(suffix) {
                ids.push((stem.to_string(), name.clone()));
            }
        }
    }
    ids.sort();
    let mut out = Vec::with_capacity(ids.len());
    for (id, vert_name) in ids {
        let vertices = read_vertices(dir.join(&vert_name), Frame::World)?;
        let pose = read_pose(dir.join(format!("{id}.pose.json")))?;
        out.push((id, crate::metrics::Prediction { vertices, pose }));
    }
    Ok(out)
}
