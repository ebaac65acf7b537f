//! Deterministic synthetic data: a parametric face-proxy mesh, poses and
//! intrinsics in the target capture range, and exact projected landmarks.
//! Serves as the ground-truth oracle for the solver, loss and metric tests.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    project_world, CameraIntrinsics, Frame, LandmarkSet2D, Pose6DoF, VertexSet,
};
use crate::topology::FaceTopology;

/// Template mesh plus a small orthogonal deformation basis.
#[derive(Debug, Clone)]
pub struct ShapeModel {
    pub template: VertexSet,
    /// Each basis entry is an N-vector of 3D displacement directions;
    /// flattened basis vectors are mutually orthogonal.
    pub basis: Vec<Vec<Vector3<f64>>>,
}

/// Pose/intrinsics sampling ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRanges {
    pub depth_min: f64,
    pub depth_max: f64,
    pub yaw_max_deg: f64,
    pub pitch_max_deg: f64,
    pub roll_max_deg: f64,
    pub image_size: f64,
}

impl Default for SampleRanges {
    fn default() -> Self {
        Self {
            depth_min: 0.3,
            depth_max: 0.9,
            yaw_max_deg: 90.0,
            pitch_max_deg: 45.0,
            roll_max_deg: 30.0,
            image_size: 800.0,
        }
    }
}

impl SampleRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = self.depth_min >= 0.2
            && self.depth_max <= 1.5
            && self.depth_min < self.depth_max
            && (0.0..=90.0).contains(&self.yaw_max_deg)
            && (0.0..=45.0).contains(&self.pitch_max_deg)
            && (0.0..=30.0).contains(&self.roll_max_deg)
            && self.image_size > 0.0;
        if !ok {
            return Err(Error::RangeInvalid {
                reason: format!("{self:?}"),
            });
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        // fx = fy = 1000 px with the principal point centered gives
        // face sizes of roughly 200-500 px across the depth range.
        CameraIntrinsics::new(1000.0, 1000.0, self.image_size / 2.0, self.image_size / 2.0)
            .expect("valid default intrinsics")
    }
}

/// One generated instance; `landmarks` is the exact projection of
/// `v_world` under `pose` and `k`.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub id: String,
    pub v_world: VertexSet,
    pub pose: Pose6DoF,
    pub k: CameraIntrinsics,
    pub landmarks: LandmarkSet2D,
    pub coeffs: Vec<f64>,
}

fn grid_dims(n: usize) -> (usize, usize) {
    let rows = (((n as f64) / 2.0).sqrt() as usize).max(3);
    let cols = n / rows;
    (rows, cols)
}

fn surface_point(u: f64, v: f64) -> Vector3<f64> {
    // Ellipsoidal cap with face-proxy proportions ~0.16 x 0.22 x 0.10 m.
    let (a, b, c) = (0.08, 0.11, 0.05);
    let phi = 1.1 * u;
    let psi = 1.2 * v;
    Vector3::new(
        a * phi.sin() * psi.cos(),
        b * psi.sin(),
        c * phi.cos() * psi.cos(),
    )
}

/// Builds the template mesh, its topology and a seeded smooth
/// orthogonalized deformation basis. Deterministic per seed.
pub fn make_shape_model(
    n_vertices: usize,
    n_basis: usize,
    seed: u64,
) -> Result<(ShapeModel, FaceTopology)> {
    if n_vertices < 9 {
        return Err(Error::InvalidConfig(format!(
            "need at least 9 vertices, got {n_vertices}"
        )));
    }
    let (rows, cols) = grid_dims(n_vertices);
    let leftover = n_vertices - rows * cols;

    // Grid vertices with their (u, v) surface parameters.
    let mut params = Vec::with_capacity(n_vertices);
    for r in 0..rows {
        for c in 0..cols {
            let u = 2.0 * c as f64 / (cols - 1) as f64 - 1.0;
            let v = 2.0 * r as f64 / (rows - 1) as f64 - 1.0;
            params.push((u, v));
        }
    }
    let mut triangles = Vec::with_capacity(2 * (rows - 1) * (cols - 1) + leftover);
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let i = (r * cols + c) as u32;
            let right = i + 1;
            let below = i + cols as u32;
            triangles.push([i, below, right]);
            triangles.push([right, below, below + 1]);
        }
    }
    // Leftover vertices hang off the last grid row, one triangle each.
    let last_row = (rows - 1) * cols;
    for j in 0..leftover {
        let (u0, v0) = params[last_row + j];
        let (u1, _) = params[last_row + j + 1];
        params.push(((u0 + u1) / 2.0, v0 + 2.0 / (rows - 1) as f64));
        let extra = (rows * cols + j) as u32;
        triangles.push([(last_row + j) as u32, extra, (last_row + j + 1) as u32]);
    }

    let mut points: Vec<Vector3<f64>> = params.iter().map(|&(u, v)| surface_point(u, v)).collect();
    let centroid = points.iter().sum::<Vector3<f64>>() / n_vertices as f64;
    for p in &mut points {
        *p -= centroid;
    }

    // 68-landmark table (fewer on tiny meshes): evenly spread indices.
    let n_landmarks = n_vertices.min(68);
    let landmark68: Vec<u32> = (0..n_landmarks)
        .map(|i| (i * n_vertices / n_landmarks) as u32)
        .collect();
    let topo = FaceTopology::new(n_vertices, triangles, landmark68)?;

    // Smooth random deformation fields, orthogonalized over the
    // flattened 3N coordinates.
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut basis_flat: Vec<Vec<f64>> = Vec::with_capacity(n_basis);
    for _ in 0..n_basis {
        let mut field = vec![0.0f64; 3 * n_vertices];
        for axis in 0..3 {
            for _ in 0..3 {
                let fu = rng.random_range(0.5..2.5);
                let fv = rng.random_range(0.5..2.5);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = rng.random_range(0.3..1.0);
                for (i, &(u, v)) in params.iter().enumerate() {
                    field[3 * i + axis] += amp * (fu * u + fv * v + phase).sin();
                }
            }
        }
        // Gram-Schmidt against the accepted directions.
        for prev in &basis_flat {
            let dot: f64 = field.iter().zip(prev).map(|(a, b)| a * b).sum();
            let nn: f64 = prev.iter().map(|x| x * x).sum();
            for (f, p) in field.iter_mut().zip(prev) {
                *f -= dot / nn * p;
            }
        }
        let norm: f64 = field.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Err(Error::InvalidConfig(
                "degenerate deformation basis draw".into(),
            ));
        }
        // Per-coordinate rms displacement of 1 mm at unit coefficient.
        let scale = 0.001 * (3.0 * n_vertices as f64).sqrt() / norm;
        for f in &mut field {
            *f *= scale;
        }
        basis_flat.push(field);
    }
    let basis = basis_flat
        .into_iter()
        .map(|flat| {
            flat.chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect()
        })
        .collect();

    Ok((
        ShapeModel {
            template: VertexSet::new(points, Frame::World)?,
            basis,
        },
        topo,
    ))
}

impl ShapeModel {
    pub fn n_basis(&self) -> usize {
        self.basis.len()
    }

    pub fn deform(&self, coeffs: &[f64]) -> Result<VertexSet> {
        if coeffs.len() != self.basis.len() {
            return Err(Error::SizeMismatch {
                context: "shape coefficients".into(),
                expected: self.basis.len(),
                got: coeffs.len(),
            });
        }
        let mut points = self.template.points().to_vec();
        for (c, dir) in coeffs.iter().zip(&self.basis) {
            for (p, d) in points.iter_mut().zip(dir) {
                *p += d * *c;
            }
        }
        VertexSet::new(points, Frame::World)
    }
}

fn euler_zyx_row(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    // Column-convention product Rz(roll) * Ry(yaw) * Rx(pitch), stored
    // transposed for the crate's row-vector convention.
    let rx = Matrix3::new(
        1.0,
        0.0,
        0.0,
        0.0,
        pitch.cos(),
        -pitch.sin(),
        0.0,
        pitch.sin(),
        pitch.cos(),
    );
    let ry = Matrix3::new(
        yaw.cos(),
        0.0,
        yaw.sin(),
        0.0,
        1.0,
        0.0,
        -yaw.sin(),
        0.0,
        yaw.cos(),
    );
    let rz = Matrix3::new(
        roll.cos(),
        -roll.sin(),
        0.0,
        roll.sin(),
        roll.cos(),
        0.0,
        0.0,
        0.0,
        1.0,
    );
    (rz * ry * rx).transpose()
}

fn derived_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 of (seed ^ index) keeps per-instance streams independent.
    let mut z = (seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples one instance. Pose angles are uniform in the configured Euler
/// ranges (ZYX order), depth uniform in the depth range, and T_x/T_y are
/// chosen so the projected centroid lands in the central half of the image.
pub fn sample_instance(
    model: &ShapeModel,
    ranges: &SampleRanges,
    id: impl Into<String>,
    seed: u64,
) -> Result<SyntheticInstance> {
    ranges.validate()?;
    let id = id.into();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let k = ranges.intrinsics();
    let deg = std::f64::consts::PI / 180.0;

    for _attempt in 0..100 {
        let coeffs: Vec<f64> = (0..model.n_basis())
            .map(|_| {
                let x: f64 = normal.sample(&mut rng);
                x.clamp(-3.0, 3.0)
            })
            .collect();
        let v_world = model.deform(&coeffs)?;

        let yaw = rng.random_range(-ranges.yaw_max_deg..=ranges.yaw_max_deg) * deg;
        let pitch = rng.random_range(-ranges.pitch_max_deg..=ranges.pitch_max_deg) * deg;
        let roll = rng.random_range(-ranges.roll_max_deg..=ranges.roll_max_deg) * deg;
        let r = euler_zyx_row(yaw, pitch, roll);

        let tz = rng.random_range(ranges.depth_min..ranges.depth_max);
        // Target centroid pixel uniform in the central half of the frame.
        let half = ranges.image_size / 2.0;
        let px = rng.random_range(0.5 * half..1.5 * half);
        let py = rng.random_range(0.5 * half..1.5 * half);
        // Solve T_x, T_y from the pinhole equation at the rotated centroid.
        let c_rot = r.transpose() * v_world.centroid();
        let cz = c_rot.z + tz;
        let tx = (px - k.cx) / k.fx * cz - c_rot.x;
        let ty = (py - k.cy) / k.fy * cz - c_rot.y;
        let pose = Pose6DoF::new(r, Vector3::new(tx, ty, tz))?;

        let min_depth = v_world
            .points()
            .iter()
            .map(|p| pose.apply(p).z)
            .fold(f64::INFINITY, f64::min);
        if min_depth <= 0.05 {
            continue;
        }
        let landmarks = project_world(&v_world, &pose, &k)?;
        return Ok(SyntheticInstance {
            id,
            v_world,
            pose,
            k,
            landmarks,
            coeffs,
        });
    }
    Err(Error::RangeInvalid {
        reason: "could not sample an instance with all depths > 0.05 m".into(),
    })
}

/// Adds seeded per-coordinate Gaussian pixel noise to the exact landmarks.
pub fn add_landmark_noise(
    inst: &SyntheticInstance,
    sigma_px: f64,
    seed: u64,
) -> LandmarkSet2D {
    if sigma_px == 0.0 {
        return inst.landmarks.clone();
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_px).expect("valid sigma");
    LandmarkSet2D::new(
        inst.landmarks
            .points()
            .iter()
            .map(|p| {
                nalgebra::Vector2::new(p.x + normal.sample(&mut rng), p.y + normal.sample(&mut rng))
            })
            .collect(),
    )
    .expect("finite noise")
}

/// Generator configuration, recorded verbatim in the dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_instances: usize,
    pub seed: u64,
    pub n_vertices: usize,
    pub n_basis: usize,
    pub sigma_px: f64,
    pub ranges: SampleRanges,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_instances: 10,
            seed: 7,
            n_vertices: 1220,
            n_basis: 8,
            sigma_px: 0.0,
            ranges: SampleRanges::default(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub ids: Vec<String>,
    pub config: SynthConfig,
}

/// Generates the whole dataset for a config: shape model from the config
/// seed, instances from per-index derived seeds.
pub fn generate_dataset(
    config: &SynthConfig,
) -> Result<(ShapeModel, FaceTopology, Vec<SyntheticInstance>)> {
    let (model, topo) = make_shape_model(config.n_vertices, config.n_basis, config.seed)?;
    let mut instances = Vec::with_capacity(config.n_instances);
    for i in 0..config.n_instances {
        let id = format!("inst_{i:05}");
        let inst = sample_instance(
            &model,
            &config.ranges,
            id,
            derived_seed(config.seed, i as u64),
        )?;
        instances.push(inst);
    }
    Ok((model, topo, instances))
}

/// Writes per-instance vertices/pose/intrinsics/landmarks files plus a
/// manifest and the topology. Landmarks are stored noisy when
/// `config.sigma_px > 0` (noise seed derived from the instance index).
pub fn write_dataset(
    instances: &[SyntheticInstance],
    topo: &FaceTopology,
    config: &SynthConfig,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (i, inst) in instances.iter().enumerate() {
        crate::io::write_vertices(&inst.v_world, dir.join(format!("{}.vertices.json", inst.id)))?;
        crate::io::write_pose(&inst.pose, dir.join(format!("{}.pose.json", inst.id)))?;
        crate::io::write_intrinsics(&inst.k, dir.join(format!("{}.intrinsics.json", inst.id)))?;
        let landmarks = if config.sigma_px > 0.0 {
            add_landmark_noise(inst, config.sigma_px, derived_seed(config.seed, 1_000_003 + i as u64))
        } else {
            inst.landmarks.clone()
        };
        crate::io::write_landmarks(&landmarks, dir.join(format!("{}.landmarks.json", inst.id)))?;
    }
    topo.save(dir.join("topology.json"))?;
    let manifest = Manifest {
        ids: instances.iter().map(|i| i.id.clone()).collect(),
        config: config.clone(),
    };
    crate::io::write_json(&manifest, dir.join("manifest.json"))
}

/// A dataset reloaded from disk.
#[derive(Debug)]
pub struct LoadedInstance {
    pub id: String,
    pub v_world: VertexSet,
    pub pose: Pose6DoF,
    pub k: CameraIntrinsics,
    pub landmarks: LandmarkSet2D,
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(FaceTopology, Vec<LoadedInstance>)> {
    let dir = dir.as_ref();
    let manifest: Manifest = crate::io::read_json(dir.join("manifest.json"))?;
    let topo = crate::topology::load_topology(dir.join("topology.json"))?;
    let mut out = Vec::with_capacity(manifest.ids.len());
    for id in &manifest.ids {
        out.push(LoadedInstance {
            id: id.clone(),
            v_world: crate::io::read_vertices(
                dir.join(format!("{id}.vertices.json")),
                Frame::World,
            )?,
            pose: crate::io::read_pose(dir.join(format!("{id}.pose.json")))?,
            k: crate::io::read_intrinsics(dir.join(format!("{id}.intrinsics.json")))?,
            landmarks: crate::io::read_landmarks(dir.join(format!("{id}.landmarks.json")))?,
        });
    }
    Ok((topo, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_model_valid_topology_at_paper_size() {
        let (model, topo) = make_shape_model(1220, 8, 3).unwrap();
        assert_eq!(topo.n_vertices(), 1220);
        assert_eq!(model.template.len(), 1220);
        assert_eq!(topo.landmark68().len(), 68);
        // Triangle validity is enforced by the FaceTopology constructor.
        assert!(topo.edge_table().len() >= 3 * 2 * 18);
    }

    #[test]
    fn shape_model_deterministic() {
        let (a, _) = make_shape_model(300, 4, 11).unwrap();
        let (b, _) = make_shape_model(300, 4, 11).unwrap();
        assert_eq!(a.template.points(), b.template.points());
        assert_eq!(a.basis, b.basis);
    }

    #[test]
    fn basis_is_orthogonal() {
        let (model, _) = make_shape_model(500, 8, 5).unwrap();
        for i in 0..model.basis.len() {
            for j in 0..i {
                let dot: f64 = model.basis[i]
                    .iter()
                    .zip(&model.basis[j])
                    .map(|(a, b)| a.dot(b))
                    .sum();
                assert!(dot.abs() < 1e-9, "basis {i} . basis {j} = {dot}");
            }
        }
    }

    #[test]
    fn template_centered() {
        let (model, _) = make_shape_model(400, 2, 1).unwrap();
        assert!(model.template.centroid().norm() < 1e-12);
    }

    #[test]
    fn too_few_vertices_rejected() {
        assert!(make_shape_model(8, 2, 0).is_err());
    }

    #[test]
    fn instance_depth_in_range_and_self_consistent() {
        let (model, _) = make_shape_model(200, 4, 9).unwrap();
        let ranges = SampleRanges::default();
        for i in 0..20 {
            let inst = sample_instance(&model, &ranges, format!("i{i}"), 100 + i).unwrap();
            let tz = inst.pose.translation().z;
            assert!((0.3..0.9).contains(&tz), "tz = {tz}");
            let reproj = project_world(&inst.v_world, &inst.pose, &inst.k).unwrap();
            for (a, b) in reproj.points().iter().zip(inst.landmarks.points()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_coeffs_is_template() {
        let (model, _) = make_shape_model(100, 3, 2).unwrap();
        let v = model.deform(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(v.points(), model.template.points());
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut r = SampleRanges::default();
        r.depth_min = 0.1;
        assert!(r.validate().is_err());
        let mut r = SampleRanges::default();
        r.yaw_max_deg = 120.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let (model, _) = make_shape_model(1000, 2, 4).unwrap();
        let inst = sample_instance(&model, &SampleRanges::default(), "n", 55).unwrap();
        let sigma = 2.0;
        // sigma = 0 is the identity.
        let clean = add_landmark_noise(&inst, 0.0, 1);
        assert_eq!(clean.points(), inst.landmarks.points());
        // Same seed, same noise.
        let a = add_landmark_noise(&inst, sigma, 42);
        let b = add_landmark_noise(&inst, sigma, 42);
        assert_eq!(a.points(), b.points());
        // Empirical std over many draws within 1% of sigma.
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for seed in 0..60 {
            let noisy = add_landmark_noise(&inst, sigma, 1000 + seed);
            for (p, q) in noisy.points().iter().zip(inst.landmarks.points()) {
                let d = p - q;
                sum_sq += d.x * d.x + d.y * d.y;
                count += 2;
            }
        }
        let std = (sum_sq / count as f64).sqrt();
        assert!(
            (std / sigma - 1.0).abs() < 0.01,
            "empirical std {std} vs sigma {sigma}"
        );
    }

    #[test]
    fn dataset_write_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            n_instances: 5,
            seed: 21,
            n_vertices: 150,
            n_basis: 3,
            sigma_px: 0.0,
            ranges: SampleRanges::default(),
        };
        let (_, topo, instances) = generate_dataset(&config).unwrap();
        write_dataset(&instances, &topo, &config, dir.path()).unwrap();
        let (topo2, loaded) = load_dataset(dir.path()).unwrap();
        assert_eq!(topo2.n_vertices(), 150);
        assert_eq!(loaded.len(), 5);
        for (inst, back) in instances.iter().zip(&loaded) {
            assert_eq!(inst.id, back.id);
            // Shortest round-trip floats survive exactly.
            assert_eq!(inst.v_world.points(), back.v_world.points());
            let reproj = project_world(&back.v_world, &back.pose, &back.k).unwrap();
            for (a, b) in reproj.points().iter().zip(back.landmarks.points()) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn dataset_bytes_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            n_instances: 3,
            seed: 77,
            n_vertices: 120,
            n_basis: 2,
            sigma_px: 0.5,
            ranges: SampleRanges::default(),
        };
        for dir in [dir_a.path(), dir_b.path()] {
            let (_, topo, instances) = generate_dataset(&config).unwrap();
            write_dataset(&instances, &topo, &config, dir).unwrap();
        }
        let mut names: Vec<_> = std::fs::read_dir(dir_a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let a = std::fs::read(dir_a.path().join(&name)).unwrap();
            let b = std::fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "file {name:?} differs");
        }
    }
}
