//! Challenge-style evaluation: four transformed vertex sets per instance
//! and the combined distance error in millimeters.
//!
//! The pairwise distance between two transformed sets is the mean over
//! vertices of the per-vertex Euclidean distance; the combined error is
//! `1000 * (d12 + d13 + 10 * d14)`.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Pose6DoF, VertexSet};

/// Per-instance distances (meters) and the combined error (millimeters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceError {
    pub d12: f64,
    pub d13: f64,
    pub d14: f64,
    pub l_error_mm: f64,
}

/// One prediction: world-space vertices plus a pose.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub vertices: VertexSet,
    pub pose: Pose6DoF,
}

/// Aggregate scoring report over a set of instances, sorted by id.
#[derive(Debug, Clone)]
pub struct ScoreReport {
    pub per_instance: Vec<(String, InstanceError)>,
    pub mean_d12_mm: f64,
    pub mean_d13_mm: f64,
    pub mean_10d14_mm: f64,
    pub mean_l_error_mm: f64,
}

fn transform(v: &VertexSet, pose: &Pose6DoF) -> Vec<Vector3<f64>> {
    v.points().iter().map(|p| pose.apply(p)).collect()
}

/// The four camera-space vertex sets:
/// `V1 = gt*gt`, `V2 = pred*pred`, `V3 = gt*pred`, `V4 = pred*gt`
/// (vertices paired with poses in that order).
pub fn transformed_sets(
    v_gt: &VertexSet,
    v_pred: &VertexSet,
    pose_gt: &Pose6DoF,
    pose_pred: &Pose6DoF,
) -> Result<[Vec<Vector3<f64>>; 4]> {
    if v_gt.len() != v_pred.len() {
        return Err(Error::SizeMismatch {
            context: "transformed_sets".into(),
            expected: v_gt.len(),
            got: v_pred.len(),
        });
    }
    Ok([
        transform(v_gt, pose_gt),
        transform(v_pred, pose_pred),
        transform(v_gt, pose_pred),
        transform(v_pred, pose_gt),
    ])
}

fn mean_vertex_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum();
    sum / a.len().max(1) as f64
}

/// Combined distance error for one instance.
pub fn instance_error(
    v_gt: &VertexSet,
    v_pred: &VertexSet,
    pose_gt: &Pose6DoF,
    pose_pred: &Pose6DoF,
) -> Result<InstanceError> {
    let [v1, v2, v3, v4] = transformed_sets(v_gt, v_pred, pose_gt, pose_pred)?;
    let d12 = mean_vertex_distance(&v1, &v2);
    let d13 = mean_vertex_distance(&v1, &v3);
    let d14 = mean_vertex_distance(&v1, &v4);
    Ok(InstanceError {
        d12,
        d13,
        d14,
        l_error_mm: 1000.0 * (d12 + d13 + 10.0 * d14),
    })
}

/// Scores a submission against ground truth. Every ground-truth id must
/// be present in the prediction map.
pub fn score_submission(
    gt: &[(String, Prediction)],
    pred: &std::collections::BTreeMap<String, Prediction>,
) -> Result<ScoreReport> {
    let mut per_instance = Vec::with_capacity(gt.len());
    for (id, g) in gt {
        let p = pred
            .get(id)
            .ok_or_else(|| Error::MissingInstance { id: id.clone() })?;
        if p.vertices.len() != g.vertices.len() {
            return Err(Error::SizeMismatch {
                context: format!("instance {id}"),
                expected: g.vertices.len(),
                got: p.vertices.len(),
            });
        }
        let err = instance_error(&g.vertices, &p.vertices, &g.pose, &p.pose)?;
        per_instance.push((id.clone(), err));
    }
    per_instance.sort_by(|a, b| a.0.cmp(&b.0));
    let n = per_instance.len().max(1) as f64;
    let mean = |f: fn(&InstanceError) -> f64| -> f64 {
        per_instance.iter().map(|(_, e)| f(e)).sum::<f64>() / n
    };
    Ok(ScoreReport {
        mean_d12_mm: mean(|e| 1000.0 * e.d12),
        mean_d13_mm: mean(|e| 1000.0 * e.d13),
        mean_10d14_mm: mean(|e| 10000.0 * e.d14),
        mean_l_error_mm: mean(|e| e.l_error_mm),
        per_instance,
    })
}

impl ScoreReport {
    /// CSV with one row per instance plus a trailing `mean` aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,d12_mm,d13_mm,10*d14_mm,l_error_mm\n");
        let fmt = |x: f64| format!("{:.9}", x);
        for (id, e) in &self.per_instance {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                id,
                fmt(1000.0 * e.d12),
                fmt(1000.0 * e.d13),
                fmt(10000.0 * e.d14),
                fmt(e.l_error_mm)
            ));
        }
        out.push_str(&format!(
            "mean,{},{},{},{}\n",
            fmt(self.mean_d12_mm),
            fmt(self.mean_d13_mm),
            fmt(self.mean_10d14_mm),
            fmt(self.mean_l_error_mm)
        ));
        out
    }
}
