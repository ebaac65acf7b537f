//! A small trainable model that jointly predicts world-space vertices and
//! image-plane landmarks from sparse noisy landmark features, trained with
//! the combined vertex/edge/landmark loss by manual backprop. Pose is
//! recovered afterwards by the PnP solver rather than regressed directly.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Frame, LandmarkSet2D, VertexSet};
use crate::losses::{total_loss, LossWeights};
use crate::pnp::{solve_pnp, PnPConfig, PnPResult};
use crate::topology::EdgeTable;

/// Input features: noisy pixel positions of a fixed vertex subset,
/// normalized to [-1, 1] by the image frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoding {
    pub indices: Vec<usize>,
    pub image_size: f64,
}

impl FeatureEncoding {
    /// Evenly spread subset of `count` vertex indices.
    pub fn even_subset(n_vertices: usize, count: usize, image_size: f64) -> Self {
        let count = count.min(n_vertices);
        Self {
            indices: (0..count).map(|i| i * n_vertices / count).collect(),
            image_size,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.indices.len()
    }

    pub fn encode(&self, landmarks: &LandmarkSet2D) -> Result<DVector<f64>> {
        let half = self.image_size / 2.0;
        let pts = landmarks.points();
        let mut f = DVector::zeros(self.dim());
        for (j, &i) in self.indices.iter().enumerate() {
            if i >= pts.len() {
                return Err(Error::SizeMismatch {
                    context: "feature encoding".into(),
                    expected: i + 1,
                    got: pts.len(),
                });
            }
            f[2 * j] = (pts[i].x - half) / half;
            f[2 * j + 1] = (pts[i].y - half) / half;
        }
        Ok(f)
    }
}

/// Output de-normalization constants, computed from the training set.
/// The vertex offset is per-vertex (the training-set mean position of each
/// vertex, i.e. essentially the template), so the head only has to learn
/// the residual deformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub vert_mean: Vec<[f64; 3]>,
    pub vert_std: [f64; 3],
    pub image_half: f64,
}

/// One hidden layer with tanh, then separate vertex and landmark heads.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    pub encoding: FeatureEncoding,
    pub norm: Normalization,
    pub n_vertices: usize,
    pub hidden: usize,
    w1: DMatrix<f64>,  // H x D
    b1: DVector<f64>,  // H
    w2v: DMatrix<f64>, // 3N x H
    b2v: DVector<f64>,
    w2p: DMatrix<f64>, // 2N x H
    b2p: DVector<f64>,
}

/// Training schedule and loss weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub poly_power: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub hidden: usize,
    pub feature_count: usize,
    pub feature_noise_px: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 0.1,
            batch_size: 64,
            warmup_steps: 1000,
            poly_power: 1.0,
            seed: 7,
            weights: LossWeights::default(),
            hidden: 256,
            feature_count: 64,
            feature_noise_px: 1.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && self.poly_power > 0.0
            && self.hidden > 0
            && self.feature_count > 0
            && self.feature_noise_px >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// One training example: features plus ground-truth targets.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub features: DVector<f64>,
    pub gt_vertices: VertexSet,
    pub gt_landmarks: LandmarkSet2D,
}

/// Builds training samples from dataset instances: the features are
/// noisy projections of the encoding subset (noise seeded per index).
pub fn make_samples(
    instances: &[crate::synth::LoadedInstance],
    encoding: &FeatureEncoding,
    noise_px: f64,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    let normal = Normal::new(0.0, noise_px.max(1e-300)).expect("valid sigma");
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut noisy = inst.landmarks.clone();
            if noise_px > 0.0 {
                let mut rng = ChaCha12Rng::seed_from_u64(seed ^ (0xFEA7 + i as u64) << 1);
                noisy = LandmarkSet2D::new(
                    noisy
                        .points()
                        .iter()
                        .map(|p| {
                            Vector2::new(p.x + normal.sample(&mut rng), p.y + normal.sample(&mut rng))
                        })
                        .collect(),
                )?;
            }
            Ok(TrainSample {
                features: encoding.encode(&noisy)?,
                gt_vertices: inst.v_world.clone(),
                gt_landmarks: inst.landmarks.clone(),
            })
        })
        .collect()
}

impl RegressorModel {
    /// Seeded uniform init; biases start at zero so the initial outputs
    /// sit at the de-normalization offsets.
    pub fn init(
        encoding: FeatureEncoding,
        norm: Normalization,
        n_vertices: usize,
        hidden: usize,
        seed: u64,
    ) -> Self {
        let d = encoding.dim();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a1 = 1.0 / (d as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let mat = |rows: usize, cols: usize, a: f64, rng: &mut ChaCha12Rng| {
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
        };
        Self {
            w1: mat(hidden, d, a1, &mut rng),
            b1: DVector::zeros(hidden),
            w2v: mat(3 * n_vertices, hidden, a2, &mut rng),
            b2v: DVector::zeros(3 * n_vertices),
            w2p: mat(2 * n_vertices, hidden, a2, &mut rng),
            b2p: DVector::zeros(2 * n_vertices),
            encoding,
            norm,
            n_vertices,
            hidden,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.encoding.dim()
    }

    fn forward_batch(&self, f: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let b = f.ncols();
        let mut z = &self.w1 * f;
        for c in 0..b {
            for r in 0..self.hidden {
                z[(r, c)] = (z[(r, c)] + self.b1[r]).tanh();
            }
        }
        let mut yv = &self.w2v * &z;
        let mut yp = &self.w2p * &z;
        for c in 0..b {
            for r in 0..yv.nrows() {
                yv[(r, c)] += self.b2v[r];
            }
            for r in 0..yp.nrows() {
                yp[(r, c)] += self.b2p[r];
            }
        }
        (z, yv, yp)
    }

    fn decode_vertices(&self, yv: &[f64]) -> Result<VertexSet> {
        let s = &self.norm.vert_std;
        let points = yv
            .chunks_exact(3)
            .zip(&self.norm.vert_mean)
            .map(|(c, m)| {
                Vector3::new(
                    c[0] * s[0] + m[0],
                    c[1] * s[1] + m[1],
                    c[2] * s[2] + m[2],
                )
            })
            .collect();
        VertexSet::new(points, Frame::World)
    }

    fn decode_landmarks(&self, yp: &[f64]) -> Result<LandmarkSet2D> {
        let h = self.norm.image_half;
        LandmarkSet2D::new(
            yp.chunks_exact(2)
                .map(|c| Vector2::new(c[0] * h + h, c[1] * h + h))
                .collect(),
        )
    }

    /// Deterministic forward pass for one feature vector.
    pub fn forward(&self, features: &DVector<f64>) -> Result<(VertexSet, LandmarkSet2D)> {
        if features.len() != self.feature_dim() {
            return Err(Error::SizeMismatch {
                context: "regressor features".into(),
                expected: self.feature_dim(),
                got: features.len(),
            });
        }
        let f = DMatrix::from_column_slice(features.len(), 1, features.as_slice());
        let (_, yv, yp) = self.forward_batch(&f);
        Ok((
            self.decode_vertices(yv.as_slice())?,
            self.decode_landmarks(yp.as_slice())?,
        ))
    }

    /// Forward pass followed by PnP on the predicted correspondences.
    pub fn predict_with_pose(
        &self,
        features: &DVector<f64>,
        k: &CameraIntrinsics,
        cfg: &PnPConfig,
    ) -> Result<(VertexSet, LandmarkSet2D, PnPResult)> {
        let (v, p) = self.forward(features)?;
        let result = solve_pnp(&v, &p, k, cfg, None)?;
        Ok((v, p, result))
    }

}

impl RegressorModel {
    /// Parameter blocks in save order (column-major within each matrix).
    pub(crate) fn param_slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2v.as_mut_slice(),
            self.b2v.as_mut_slice(),
            self.w2p.as_mut_slice(),
            self.b2p.as_mut_slice(),
        ]
    }
}

fn lr_at(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    // Base rate is scaled by 1/batch; gradients are batch means, so the
    // per-example step stays constant across batch sizes. Warmup is
    // clamped to a tenth of the run when the dataset is too small to
    // reach the configured step count.
    let base = cfg.learning_rate / cfg.batch_size as f64;
    let warmup = cfg.warmup_steps.min((total_steps / 10).max(1));
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    if total_steps <= warmup {
        return base;
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    base * (1.0 - progress).powf(cfg.poly_power)
}

/// Per-epoch mean training loss.
pub type LossCurve = Vec<f64>;

/// Mini-batch gradient descent on the combined loss with manual backprop.
/// Deterministic for a fixed (seed, config, dataset).
pub fn train(
    samples: &[TrainSample],
    edges: &EdgeTable,
    norm: Normalization,
    encoding: FeatureEncoding,
    cfg: &TrainConfig,
) -> Result<(RegressorModel, LossCurve)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_vertices = samples[0].gt_vertices.len();
    let mut model = RegressorModel::init(encoding, norm, n_vertices, cfg.hidden, cfg.seed);
    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_loss_and_grads(&model, samples, chunk, edges, &cfg.weights)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("batch mean loss = {loss}"),
                });
            }
            let lr = lr_at(cfg, step, total_steps);
            model.w1 -= &grads.w1 * lr;
            model.b1 -= &grads.b1 * lr;
            model.w2v -= &grads.w2v * lr;
            model.b2v -= &grads.b2v * lr;
            model.w2p -= &grads.w2p * lr;
            model.b2p -= &grads.b2p * lr;
            epoch_loss += loss;
            epoch_batches += 1;
            step += 1;
        }
        curve.push(epoch_loss / epoch_batches as f64);
    }
    Ok((model, curve))
}

pub(crate) struct ParamGrads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2v: DMatrix<f64>,
    pub b2v: DVector<f64>,
    pub w2p: DMatrix<f64>,
    pub b2p: DVector<f64>,
}

/// Mean batch loss plus gradients of it w.r.t. every parameter.
pub(crate) fn batch_loss_and_grads(
    model: &RegressorModel,
    samples: &[TrainSample],
    batch: &[usize],
    edges: &EdgeTable,
    weights: &LossWeights,
) -> Result<(f64, ParamGrads)> {
    let b = batch.len();
    let d = model.feature_dim();
    let mut f = DMatrix::zeros(d, b);
    for (c, &i) in batch.iter().enumerate() {
        f.set_column(c, &samples[i].features);
    }
    let (hidden, yv, yp) = model.forward_batch(&f);

    let inv_b = 1.0 / b as f64;
    let mut loss_sum = 0.0;
    let mut d_yv = DMatrix::zeros(yv.nrows(), b);
    let mut d_yp = DMatrix::zeros(yp.nrows(), b);
    let s = &model.norm.vert_std;
    let h = model.norm.image_half;
    for (c, &i) in batch.iter().enumerate() {
        let sample = &samples[i];
        let pred_v = model.decode_vertices(yv.column(c).as_slice())?;
        let pred_p = model.decode_landmarks(yp.column(c).as_slice())?;
        let report = total_loss(
            &pred_v,
            &sample.gt_vertices,
            &pred_p,
            &sample.gt_landmarks,
            edges,
            weights,
        )?;
        loss_sum += report.l_total;
        for (vi, g) in report.grad_vertices.iter().enumerate() {
            d_yv[(3 * vi, c)] = g.x * s[0] * inv_b;
            d_yv[(3 * vi + 1, c)] = g.y * s[1] * inv_b;
            d_yv[(3 * vi + 2, c)] = g.z * s[2] * inv_b;
        }
        for (pi, g) in report.grad_landmarks.iter().enumerate() {
            d_yp[(2 * pi, c)] = g.x * h * inv_b;
            d_yp[(2 * pi + 1, c)] = g.y * h * inv_b;
        }
    }

    let w2v_grad = &d_yv * hidden.transpose();
    let w2p_grad = &d_yp * hidden.transpose();
    let b2v_grad = DVector::from_fn(d_yv.nrows(), |r, _| d_yv.row(r).sum());
    let b2p_grad = DVector::from_fn(d_yp.nrows(), |r, _| d_yp.row(r).sum());

    let mut d_hidden = model.w2v.transpose() * &d_yv + model.w2p.transpose() * &d_yp;
    for c in 0..b {
        for r in 0..d_hidden.nrows() {
            let a = hidden[(r, c)];
            d_hidden[(r, c)] *= 1.0 - a * a;
        }
    }
    let w1_grad = &d_hidden * f.transpose();
    let b1_grad = DVector::from_fn(d_hidden.nrows(), |r, _| d_hidden.row(r).sum());

    Ok((
        loss_sum * inv_b,
        ParamGrads {
            w1: w1_grad,
            b1: b1_grad,
            w2v: w2v_grad,
            b2v: b2v_grad,
            w2p: w2p_grad,
            b2p: b2p_grad,
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    n_vertices: usize,
    hidden: usize,
    encoding: FeatureEncoding,
    norm: Normalization,
    seed: u64,
    config_hash: String,
}

pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = sha2::Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RegressorModel {
    /// JSON header line followed by a flat little-endian f64 block in the
    /// order W1, b1, W2v, b2v, W2p, b2p (matrices row-major).
    pub fn save(&self, path: impl AsRef<Path>, seed: u64, config_hash: &str) -> Result<()> {
        let path = path.as_ref();
        let header = ModelHeader {
            version: 1,
            n_vertices: self.n_vertices,
            hidden: self.hidden,
            encoding: self.encoding.clone(),
            norm: self.norm.clone(),
            seed,
            config_hash: config_hash.to_string(),
        };
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut write_all = |bytes: &[u8]| {
            file.write_all(bytes)
                .map_err(|e| Error::io(path.display().to_string(), e))
        };
        write_all(serde_json::to_string(&header).expect("header serializes").as_bytes())?;
        write_all(b"\n")?;
        let push_matrix = |m: &DMatrix<f64>| -> Vec<u8> {
            let mut out = Vec::with_capacity(8 * m.len());
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    out.extend_from_slice(&m[(r, c)].to_le_bytes());
                }
            }
            out
        };
        let mut block = Vec::new();
        block.extend(push_matrix(&self.w1));
        block.extend(self.b1.iter().flat_map(|x| x.to_le_bytes()));
        block.extend(push_matrix(&self.w2v));
        block.extend(self.b2v.iter().flat_map(|x| x.to_le_bytes()));
        block.extend(push_matrix(&self.w2p));
        block.extend(self.b2p.iter().flat_map(|x| x.to_le_bytes()));
        write_all(&block)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(path.display().to_string(), "missing header line"))?;
        let header: ModelHeader = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let mut cursor = newline + 1;
        let mut take = |count: usize| -> Result<Vec<f64>> {
            let bytes_needed = 8 * count;
            if cursor + bytes_needed > bytes.len() {
                return Err(Error::parse(
                    path.display().to_string(),
                    "truncated parameter block",
                ));
            }
            let vals = bytes[cursor..cursor + bytes_needed]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor += bytes_needed;
            Ok(vals)
        };
        let d = header.encoding.dim();
        let (h, n) = (header.hidden, header.n_vertices);
        let w1 = DMatrix::from_row_slice(h, d, &take(h * d)?);
        let b1 = DVector::from_vec(take(h)?);
        let w2v = DMatrix::from_row_slice(3 * n, h, &take(3 * n * h)?);
        let b2v = DVector::from_vec(take(3 * n)?);
        let w2p = DMatrix::from_row_slice(2 * n, h, &take(2 * n * h)?);
        let b2p = DVector::from_vec(take(2 * n)?);
        if cursor != bytes.len() {
            return Err(Error::parse(
                path.display().to_string(),
                "trailing bytes after parameter block",
            ));
        }
        Ok(Self {
            encoding: header.encoding,
            norm: header.norm,
            n_vertices: n,
            hidden: h,
            w1,
            b1,
            w2v,
            b2v,
            w2p,
            b2p,
        })
    }
}

/// De-normalization constants from a training set.
pub fn normalization_from_samples(samples: &[TrainSample], image_size: f64) -> Result<Normalization> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = samples[0].gt_vertices.len();
    let inv = 1.0 / samples.len() as f64;
    let mut mean = vec![[0.0f64; 3]; n];
    for s in samples {
        for (m, p) in mean.iter_mut().zip(s.gt_vertices.points()) {
            m[0] += p.x * inv;
            m[1] += p.y * inv;
            m[2] += p.z * inv;
        }
    }
    // Per-axis std of the residuals about the per-vertex means: the scale
    // the head actually has to produce.
    let mut var = [0.0f64; 3];
    let count = (samples.len() * n) as f64;
    for s in samples {
        for (m, p) in mean.iter().zip(s.gt_vertices.points()) {
            var[0] += (p.x - m[0]).powi(2);
            var[1] += (p.y - m[1]).powi(2);
            var[2] += (p.z - m[2]).powi(2);
        }
    }
    let std = [
        (var[0] / count).sqrt().max(1e-6),
        (var[1] / count).sqrt().max(1e-6),
        (var[2] / count).sqrt().max(1e-6),
    ];
    Ok(Normalization {
        vert_mean: mean,
        vert_std: std,
        image_half: image_size / 2.0,
    })
}
