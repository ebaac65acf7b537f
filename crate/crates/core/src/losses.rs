//! Training losses with analytic gradients.
//!
//! Vertex and landmark losses are mean per-point L1 distances (sum of
//! absolute coordinate differences per point, averaged over points).
//! The edge loss is the mean absolute difference of edge lengths over
//! the 3M canonical edge entries. The total is
//! `l_vert + lambda0 * l_edge + lambda1 * l_land`.
//!
//! Gradients use the subgradient convention sign(0) = 0 and are returned
//! together with the loss value.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet2D, VertexSet};
use crate::topology::EdgeTable;

/// Weights of the edge and landmark terms in the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda0: f64,
    pub lambda1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda0: 0.25,
            lambda1: 2.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda0: f64, lambda1: f64) -> Result<Self> {
        if lambda0 < 0.0 || lambda1 < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be non-negative, got lambda0={lambda0}, lambda1={lambda1}"
            )));
        }
        Ok(Self { lambda0, lambda1 })
    }
}

/// Scalar losses plus gradients with respect to predicted vertices and landmarks.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub l_vert: f64,
    pub l_edge: f64,
    pub l_land: f64,
    pub l_total: f64,
    pub grad_vertices: Vec<Vector3<f64>>,
    pub grad_landmarks: Vec<Vector2<f64>>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_same_len(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::SizeMismatch {
            context: context.into(),
            expected,
            got,
        });
    }
    Ok(())
}

/// Mean per-vertex L1 distance and its subgradient.
pub fn vertex_loss(pred: &VertexSet, gt: &VertexSet) -> Result<(f64, Vec<Vector3<f64>>)> {
    check_same_len("vertex_loss", gt.len(), pred.len())?;
    if pred.frame() != gt.frame() {
        return Err(Error::FrameMismatch {
            expected: gt.frame(),
            got: pred.frame(),
        });
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![Vector3::zeros(); pred.len()];
    for (i, (p, g)) in pred.points().iter().zip(gt.points()).enumerate() {
        let d = p - g;
        loss += d.x.abs() + d.y.abs() + d.z.abs();
        grad[i] = Vector3::new(sign(d.x), sign(d.y), sign(d.z)) / n;
    }
    Ok((loss / n, grad))
}

/// Mean absolute edge-length difference over the 3M edge entries, with
/// the gradient back-propagated through each Euclidean length.
pub fn edge_loss(
    pred: &VertexSet,
    gt: &VertexSet,
    edges: &EdgeTable,
) -> Result<(f64, Vec<Vector3<f64>>)> {
    check_same_len("edge_loss", gt.len(), pred.len())?;
    let m3 = edges.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![Vector3::zeros(); pred.len()];
    let pp = pred.points();
    let gp = gt.points();
    for (k, &(a, b)) in edges.edges().iter().enumerate() {
        let (a, b) = (a as usize, b as usize);
        if a >= pp.len() || b >= pp.len() {
            return Err(Error::SizeMismatch {
                context: "edge table vs vertex set".into(),
                expected: a.max(b) + 1,
                got: pp.len(),
            });
        }
        let d = pp[a] - pp[b];
        let e = d.norm();
        let e_gt = (gp[a] - gp[b]).norm();
        loss += (e - e_gt).abs();
        let s = sign(e - e_gt);
        if s != 0.0 {
            if e < 1e-12 {
                return Err(Error::DegenerateEdge {
                    index: k,
                    length: e,
                });
            }
            let g = d * (s / e / m3);
            grad[a] += g;
            grad[b] -= g;
        }
    }
    Ok((loss / m3, grad))
}

/// Mean per-point L1 pixel distance and its subgradient.
pub fn landmark_loss(
    pred: &LandmarkSet2D,
    gt: &LandmarkSet2D,
) -> Result<(f64, Vec<Vector2<f64>>)> {
    check_same_len("landmark_loss", gt.len(), pred.len())?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![Vector2::zeros(); pred.len()];
    for (i, (p, g)) in pred.points().iter().zip(gt.points()).enumerate() {
        let d = p - g;
        loss += d.x.abs() + d.y.abs();
        grad[i] = Vector2::new(sign(d.x), sign(d.y)) / n;
    }
    Ok((loss / n, grad))
}

/// Weighted combination of the three losses; gradients are the weighted
/// sums of the component gradients.
pub fn total_loss(
    pred_v: &VertexSet,
    gt_v: &VertexSet,
    pred_p: &LandmarkSet2D,
    gt_p: &LandmarkSet2D,
    edges: &EdgeTable,
    w: &LossWeights,
) -> Result<LossReport> {
    let (l_vert, g_vert) = vertex_loss(pred_v, gt_v)?;
    let (l_edge, g_edge) = edge_loss(pred_v, gt_v, edges)?;
    let (l_land, g_land) = landmark_loss(pred_p, gt_p)?;
    let l_total = l_vert + w.lambda0 * l_edge + w.lambda1 * l_land;
    let grad_vertices = g_vert
        .iter()
        .zip(&g_edge)
        .map(|(v, e)| v + e * w.lambda0)
        .collect();
    let grad_landmarks = g_land.iter().map(|g| g * w.lambda1).collect();
    Ok(LossReport {
        l_vert,
        l_edge,
        l_land,
        l_total,
        grad_vertices,
        grad_landmarks,
    })
}
