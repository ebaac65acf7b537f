//! Central finite-difference verification of every analytic gradient in
//! the crate: the three losses, the combined loss, and the regressor's
//! full backprop. Used by the `gradcheck` CLI subcommand and the
//! acceptance suite.

use nalgebra::{Vector2, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::geometry::{Frame, LandmarkSet2D, VertexSet};
use crate::losses::{edge_loss, landmark_loss, total_loss, vertex_loss, LossWeights};
use crate::regressor::{
    batch_loss_and_grads, make_samples, normalization_from_samples, FeatureEncoding,
    RegressorModel,
};
use crate::synth::{generate_dataset, SynthConfig};
use crate::topology::FaceTopology;

const STEP: f64 = 1e-6;
/// Coordinate or edge-length differences closer to zero than this are
/// considered kink-adjacent and re-rolled; L1 subgradients are only
/// checkable at smooth points.
const SMOOTH_MARGIN: f64 = 1e-4;

/// Max relative error per checked gradient.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub vertex: f64,
    pub edge: f64,
    pub landmark: f64,
    pub total: f64,
    pub regressor: f64,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        self.vertex
            .max(self.edge)
            .max(self.landmark)
            .max(self.total)
            .max(self.regressor)
    }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    let denom = analytic.abs().max(fd.abs());
    if denom < 1e-12 {
        0.0
    } else {
        (analytic - fd).abs() / denom
    }
}

/// A random mesh pair whose coordinate and edge-length differences all
/// clear the smoothness margin.
fn smooth_mesh_pair(
    topo: &FaceTopology,
    rng: &mut ChaCha12Rng,
) -> (VertexSet, VertexSet) {
    let n = topo.n_vertices();
    let edges = topo.edge_table();
    loop {
        let gt: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                )
            })
            .collect();
        let pred: Vec<Vector3<f64>> = gt
            .iter()
            .map(|p| {
                p + Vector3::new(
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.02..0.02),
                )
            })
            .collect();
        let coord_ok = gt.iter().zip(&pred).all(|(g, p)| {
            let d = g - p;
            d.x.abs() > SMOOTH_MARGIN && d.y.abs() > SMOOTH_MARGIN && d.z.abs() > SMOOTH_MARGIN
        });
        if !coord_ok {
            continue;
        }
        let gt_set = VertexSet::new(gt, Frame::World).unwrap();
        let pred_set = VertexSet::new(pred, Frame::World).unwrap();
        let le_gt = crate::topology::edge_lengths(&gt_set, &edges).unwrap();
        let le_pred = crate::topology::edge_lengths(&pred_set, &edges).unwrap();
        let edge_ok = le_gt
            .iter()
            .zip(&le_pred)
            .all(|(a, b)| (a - b).abs() > SMOOTH_MARGIN && *b > 1e-3);
        if edge_ok {
            return (pred_set, gt_set);
        }
    }
}

fn smooth_landmark_pair(n: usize, rng: &mut ChaCha12Rng) -> (LandmarkSet2D, LandmarkSet2D) {
    loop {
        let gt: Vec<Vector2<f64>> = (0..n)
            .map(|_| {
                Vector2::new(rng.random_range(0.0..800.0), rng.random_range(0.0..800.0))
            })
            .collect();
        let pred: Vec<Vector2<f64>> = gt
            .iter()
            .map(|p| {
                p + Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))
            })
            .collect();
        let ok = gt.iter().zip(&pred).all(|(g, p)| {
            (g.x - p.x).abs() > SMOOTH_MARGIN && (g.y - p.y).abs() > SMOOTH_MARGIN
        });
        if ok {
            return (
                LandmarkSet2D::new(pred).unwrap(),
                LandmarkSet2D::new(gt).unwrap(),
            );
        }
    }
}

fn perturb(v: &VertexSet, index: usize, axis: usize, delta: f64) -> VertexSet {
    let mut pts = v.points().to_vec();
    pts[index][axis] += delta;
    VertexSet::new(pts, v.frame()).unwrap()
}

fn perturb2(p: &LandmarkSet2D, index: usize, axis: usize, delta: f64) -> LandmarkSet2D {
    let mut pts = p.points().to_vec();
    pts[index][axis] += delta;
    LandmarkSet2D::new(pts).unwrap()
}

/// Runs the loss gradient checks on `trials` seeded random smooth points.
pub fn check_losses(trials: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (_, topo) = crate::synth::make_shape_model(24, 2, seed)?;
    let edges = topo.edge_table();
    let weights = LossWeights::default();
    let mut report = GradCheckReport {
        vertex: 0.0,
        edge: 0.0,
        landmark: 0.0,
        total: 0.0,
        regressor: 0.0,
    };

    for _ in 0..trials {
        let (pred_v, gt_v) = smooth_mesh_pair(&topo, &mut rng);
        let (pred_p, gt_p) = smooth_landmark_pair(topo.n_vertices(), &mut rng);

        let (_, g_vert) = vertex_loss(&pred_v, &gt_v)?;
        let (_, g_edge) = edge_loss(&pred_v, &gt_v, &edges)?;
        let (_, g_land) = landmark_loss(&pred_p, &gt_p)?;
        let full = total_loss(&pred_v, &gt_v, &pred_p, &gt_p, &edges, &weights)?;

        // A handful of coordinates per trial keeps the suite fast.
        for _ in 0..6 {
            let i = rng.random_range(0..topo.n_vertices());
            let a = rng.random_range(0..3usize);
            let lp = vertex_loss(&perturb(&pred_v, i, a, STEP), &gt_v)?.0;
            let lm = vertex_loss(&perturb(&pred_v, i, a, -STEP), &gt_v)?.0;
            report.vertex = report.vertex.max(rel_err(g_vert[i][a], (lp - lm) / (2.0 * STEP)));

            let lp = edge_loss(&perturb(&pred_v, i, a, STEP), &gt_v, &edges)?.0;
            let lm = edge_loss(&perturb(&pred_v, i, a, -STEP), &gt_v, &edges)?.0;
            report.edge = report.edge.max(rel_err(g_edge[i][a], (lp - lm) / (2.0 * STEP)));

            let tp = total_loss(&perturb(&pred_v, i, a, STEP), &gt_v, &pred_p, &gt_p, &edges, &weights)?;
            let tm = total_loss(&perturb(&pred_v, i, a, -STEP), &gt_v, &pred_p, &gt_p, &edges, &weights)?;
            report.total = report.total.max(rel_err(
                full.grad_vertices[i][a],
                (tp.l_total - tm.l_total) / (2.0 * STEP),
            ));

            let c = rng.random_range(0..2usize);
            let lp = landmark_loss(&perturb2(&pred_p, i, c, STEP), &gt_p)?.0;
            let lm = landmark_loss(&perturb2(&pred_p, i, c, -STEP), &gt_p)?.0;
            report.landmark = report
                .landmark
                .max(rel_err(g_land[i][c], (lp - lm) / (2.0 * STEP)));

            let tp = total_loss(&pred_v, &gt_v, &perturb2(&pred_p, i, c, STEP), &gt_p, &edges, &weights)?;
            let tm = total_loss(&pred_v, &gt_v, &perturb2(&pred_p, i, c, -STEP), &gt_p, &edges, &weights)?;
            report.total = report.total.max(rel_err(
                full.grad_landmarks[i][c],
                (tp.l_total - tm.l_total) / (2.0 * STEP),
            ));
        }
    }
    Ok(report)
}

/// Finite-difference check of the full regressor backprop on a small
/// seeded model and a 3-instance batch.
pub fn check_regressor(seed: u64) -> Result<f64> {
    let config = SynthConfig {
        n_instances: 4,
        seed,
        n_vertices: 24,
        n_basis: 2,
        sigma_px: 0.0,
        ..Default::default()
    };
    let (_, topo, instances) = generate_dataset(&config)?;
    let loaded: Vec<crate::synth::LoadedInstance> = instances
        .iter()
        .map(|i| crate::synth::LoadedInstance {
            id: i.id.clone(),
            v_world: i.v_world.clone(),
            pose: i.pose.clone(),
            k: i.k,
            landmarks: i.landmarks.clone(),
        })
        .collect();
    let encoding = FeatureEncoding::even_subset(24, 6, 800.0);
    let samples = make_samples(&loaded, &encoding, 1.0, seed)?;
    let norm = normalization_from_samples(&samples, 800.0)?;
    let mut model = RegressorModel::init(encoding, norm, 24, 8, seed);
    let edges = topo.edge_table();
    let weights = LossWeights::default();
    let batch = [0usize, 1, 2];

    let (_, grads) = batch_loss_and_grads(&model, &samples, &batch, &edges, &weights)?;
    let analytic: Vec<f64> = grads
        .w1
        .iter()
        .chain(grads.b1.iter())
        .chain(grads.w2v.iter())
        .chain(grads.b2v.iter())
        .chain(grads.w2p.iter())
        .chain(grads.b2p.iter())
        .copied()
        .collect();

    let mut max_rel: f64 = 0.0;
    let total = analytic.len();
    // The loss is O(100) in pixel units, so central differences carry an
    // absolute noise floor of ~|L|*eps/STEP; entries far below the dominant
    // gradient scale cannot be resolved relatively and get a floored
    // denominator instead.
    let gmax = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = 1e-3 * gmax;
    for idx in 0..total {
        let orig = {
            let p = param_mut(&mut model, idx);
            let v = *p;
            *p = v + STEP;
            v
        };
        let (lp, _) = batch_loss_and_grads(&model, &samples, &batch, &edges, &weights)?;
        {
            let p = param_mut(&mut model, idx);
            *p = orig - STEP;
        }
        let (lm, _) = batch_loss_and_grads(&model, &samples, &batch, &edges, &weights)?;
        {
            let p = param_mut(&mut model, idx);
            *p = orig;
        }
        let fd = (lp - lm) / (2.0 * STEP);
        let a = analytic[idx];
        let denom = a.abs().max(fd.abs()).max(floor);
        max_rel = max_rel.max((a - fd).abs() / denom);
    }
    Ok(max_rel)
}

fn param_mut(model: &mut RegressorModel, mut idx: usize) -> &mut f64 {
    for slice in model.param_slices_mut() {
        if idx < slice.len() {
            return &mut slice[idx];
        }
        idx -= slice.len();
    }
    panic!("parameter index out of range");
}

/// Full suite: losses on `trials` random smooth points plus the regressor.
pub fn run_all(trials: usize, seed: u64) -> Result<GradCheckReport> {
    let mut report = check_losses(trials, seed)?;
    report.regressor = check_regressor(seed)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn losses_pass_finite_difference_check() {
        let report = check_losses(10, 42).unwrap();
        assert!(report.vertex < 1e-5, "vertex: {}", report.vertex);
        assert!(report.edge < 1e-5, "edge: {}", report.edge);
        assert!(report.landmark < 1e-5, "landmark: {}", report.landmark);
        assert!(report.total < 1e-5, "total: {}", report.total);
    }

    #[test]
    fn regressor_passes_finite_difference_check() {
        let max_rel = check_regressor(42).unwrap();
        assert!(max_rel < 1e-4, "regressor: {max_rel}");
    }
}
