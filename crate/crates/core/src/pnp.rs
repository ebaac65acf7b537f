//! 6DoF pose recovery from 3D world points and 2D pixel observations.
//!
//! Two stages: a DLT initialization over the homogeneous 3x4 pose, and a
//! damped Gauss-Newton (Levenberg-Marquardt) refinement over an
//! axis-angle increment and the translation. Rotations follow the crate's
//! row-vector convention.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Frame, LandmarkSet2D, Pose6DoF, VertexSet};

/// Levenberg-Marquardt settings.
#[derive(Debug, Clone)]
pub struct PnPConfig {
    pub max_iterations: usize,
    /// Relative decrease of the squared-residual cost that counts as converged.
    pub cost_tolerance: f64,
    /// Parameter-step norm that counts as converged.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for PnPConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            cost_tolerance: 1e-12,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
        }
    }
}

impl PnPConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.cost_tolerance > 0.0
            && self.step_tolerance > 0.0
            && self.initial_damping > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 0.0
            && self.damping_down < 1.0;
        if !ok {
            return Err(Error::InvalidConfig(
                "PnP config requires positive tolerances and damping_up > 1 > damping_down > 0"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Refined pose plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct PnPResult {
    pub pose: Pose6DoF,
    pub rms_reprojection_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Root-mean-square over points of the squared 2D reprojection residual.
pub fn reprojection_rms(
    v: &VertexSet,
    pose: &Pose6DoF,
    k: &CameraIntrinsics,
    p: &LandmarkSet2D,
) -> Result<f64> {
    if v.len() != p.len() {
        return Err(Error::SizeMismatch {
            context: "reprojection_rms".into(),
            expected: v.len(),
            got: p.len(),
        });
    }
    let proj = crate::geometry::project_world(v, pose, k)?;
    let sum: f64 = proj
        .points()
        .iter()
        .zip(p.points())
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok((sum / v.len() as f64).sqrt())
}

fn nearest_rotation(b: &Matrix3<f64>) -> (Matrix3<f64>, f64) {
    // Polar factor of b, determinant corrected to +1; second return is the
    // mean singular value (the scale absorbed by b).
    let svd = b.svd(true, true);
    let u = svd.u.expect("3x3 svd u");
    let v_t = svd.v_t.expect("3x3 svd v_t");
    let mut r = u * v_t;
    let mut s = svd.singular_values;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
        s[2] = -s[2];
    }
    (r, (s[0] + s[1] + s[2]) / 3.0)
}

/// Linear (DLT) pose estimate from >= 6 exact-or-noisy correspondences.
pub fn solve_pnp_dlt(
    v: &VertexSet,
    p: &LandmarkSet2D,
    k: &CameraIntrinsics,
) -> Result<Pose6DoF> {
    v.require_frame(Frame::World)?;
    let n = v.len();
    if n != p.len() {
        return Err(Error::SizeMismatch {
            context: "solve_pnp_dlt".into(),
            expected: n,
            got: p.len(),
        });
    }
    if n < 6 {
        return Err(Error::TooFewPoints { got: n });
    }

    // Unknown 12-vector: rows r0, r1, r2 of the row-convention R, then T.
    // Camera point c = x*r0 + y*r1 + z*r2 + T; constraints c_x = xh*c_z,
    // c_y = yh*c_z with K-normalized pixels (xh, yh).
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (pt, px)) in v.points().iter().zip(p.points()).enumerate() {
        let xh = (px.x - k.cx) / k.fx;
        let yh = (px.y - k.cy) / k.fy;
        let coords = [pt.x, pt.y, pt.z, 1.0];
        for (j, &c) in coords.iter().enumerate() {
            a[(2 * i, 3 * j)] = c;
            a[(2 * i, 3 * j + 2)] = -xh * c;
            a[(2 * i + 1, 3 * j + 1)] = c;
            a[(2 * i + 1, 3 * j + 2)] = -yh * c;
        }
    }

    let svd = a.svd(false, true);
    let sv = &svd.singular_values;
    // The solution occupies the null direction; rank must be 11 beyond it.
    if sv[10] / sv[0] < 1e-10 {
        return Err(Error::DegenerateConfiguration {
            reason: format!(
                "near-rank-deficient DLT system: sigma_11/sigma_1 = {:.3e}",
                sv[10] / sv[0]
            ),
        });
    }
    let v_t = svd.v_t.expect("dlt svd v_t");
    let sol = v_t.row(11);

    let mut b = Matrix3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            b[(r, c)] = sol[3 * r + c];
        }
    }
    let mut t_raw = Vector3::new(sol[9], sol[10], sol[11]);

    // Cheirality: pick the homogeneous sign putting the median depth in front.
    let mut depths: Vec<f64> = v
        .points()
        .iter()
        .map(|pt| pt.x * b[(0, 2)] + pt.y * b[(1, 2)] + pt.z * b[(2, 2)] + t_raw.z)
        .collect();
    depths.sort_by(|x, y| x.partial_cmp(y).unwrap());
    if depths[depths.len() / 2] < 0.0 {
        b = -b;
        t_raw = -t_raw;
    }

    let (r, scale) = nearest_rotation(&b);
    if scale.abs() < 1e-300 {
        return Err(Error::DegenerateConfiguration {
            reason: "zero-scale DLT solution".into(),
        });
    }
    Pose6DoF::new(r, t_raw / scale)
}

struct Residuals {
    r: DVector<f64>,
    cost: f64,
}

fn residuals(
    v: &VertexSet,
    p: &LandmarkSet2D,
    k: &CameraIntrinsics,
    pose: &Pose6DoF,
) -> Result<Residuals> {
    let n = v.len();
    let mut r = DVector::zeros(2 * n);
    for (i, (pt, px)) in v.points().iter().zip(p.points()).enumerate() {
        let c = pose.apply(pt);
        if c.z <= 1e-9 {
            return Err(Error::BehindCamera {
                index: i,
                depth: c.z,
            });
        }
        r[2 * i] = k.fx * c.x / c.z + k.cx - px.x;
        r[2 * i + 1] = k.fy * c.y / c.z + k.cy - px.y;
    }
    let cost = r.norm_squared();
    Ok(Residuals { r, cost })
}

/// Jacobian of the residual vector w.r.t. a left-multiplied axis-angle
/// increment (columns 0..3) and the translation (columns 3..6), evaluated
/// at increment zero.
fn jacobian(
    v: &VertexSet,
    k: &CameraIntrinsics,
    pose: &Pose6DoF,
) -> Result<DMatrix<f64>> {
    let n = v.len();
    let mut j = DMatrix::zeros(2 * n, 6);
    let t = pose.translation();
    for (i, pt) in v.points().iter().enumerate() {
        let c = pose.apply(pt);
        if c.z <= 1e-9 {
            return Err(Error::BehindCamera {
                index: i,
                depth: c.z,
            });
        }
        let y = c - t; // rotated point before translation
        let iz = 1.0 / c.z;
        // du/dc rows for u = (fx cx_/cz + cx, fy cy_/cz + cy)
        let du = [
            Vector3::new(k.fx * iz, 0.0, -k.fx * c.x * iz * iz),
            Vector3::new(0.0, k.fy * iz, -k.fy * c.y * iz * iz),
        ];
        // dc/d(delta) = -[y]x for c(delta) = R(delta) y + t, dc/dt = I.
        for (row, d) in du.iter().enumerate() {
            let drot = Vector3::new(
                d.y * y.z - d.z * y.y,
                d.z * y.x - d.x * y.z,
                d.x * y.y - d.y * y.x,
            );
            // d^T (-[y]x) = (y x d)^T componentwise; drot = d x y... careful:
            // (-[y]x)^T d = [y]x d? We use J_rot = -d^T [y]x, i.e. (y x d).
            for col in 0..3 {
                j[(2 * i + row, col)] = -drot[col];
            }
            for col in 0..3 {
                j[(2 * i + row, 3 + col)] = d[col];
            }
        }
    }
    Ok(j)
}

fn apply_increment(pose: &Pose6DoF, delta: &SVector<f64, 6>) -> Result<Pose6DoF> {
    // Column-convention composition R_col <- R_std(delta) R_col, expressed
    // on the stored row matrix as R_row <- R_row * R_std(delta)^T.
    let omega = crate::geometry::AxisAngle(Vector3::new(delta[0], delta[1], delta[2]));
    let inc_row = crate::geometry::rotation_from_axis_angle(&omega);
    let mut r = pose.rotation() * inc_row;
    // Re-project to SO(3) so accumulated round-off never violates the
    // pose invariants; the correction is at machine-epsilon scale.
    let (rp, _) = nearest_rotation(&r);
    r = rp;
    let t = pose.translation() + Vector3::new(delta[3], delta[4], delta[5]);
    Pose6DoF::new(r, t)
}

/// Levenberg-Marquardt refinement over (axis-angle increment, translation),
/// initialized from `init` or [`solve_pnp_dlt`]. The returned pose never
/// costs more than its initialization.
pub fn solve_pnp(
    v: &VertexSet,
    p: &LandmarkSet2D,
    k: &CameraIntrinsics,
    cfg: &PnPConfig,
    init: Option<Pose6DoF>,
) -> Result<PnPResult> {
    cfg.validate()?;
    v.require_frame(Frame::World)?;
    if v.len() != p.len() {
        return Err(Error::SizeMismatch {
            context: "solve_pnp".into(),
            expected: v.len(),
            got: p.len(),
        });
    }
    if v.len() < 6 {
        return Err(Error::TooFewPoints { got: v.len() });
    }

    let mut pose = match init {
        Some(pose) => pose,
        None => solve_pnp_dlt(v, p, k)?,
    };
    // Cheirality fallback: an initialization fitted to inconsistent
    // correspondences can place points marginally behind the camera, which
    // the projective residuals cannot evaluate. Advancing the translation
    // along the optical axis restores a feasible (if poor) starting point.
    let min_depth = v
        .points()
        .iter()
        .map(|pt| pose.apply(pt).z)
        .fold(f64::INFINITY, f64::min);
    if min_depth <= 1e-9 {
        let t = pose.translation() + Vector3::new(0.0, 0.0, 0.05 - min_depth);
        pose = Pose6DoF::new(*pose.rotation(), t)?;
    }
    let mut res = residuals(v, p, k, &pose)?;
    let mut damping = cfg.initial_damping;
    let mut converged = res.cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let j = jacobian(v, k, &pose)?;
        let jtj: SMatrix<f64, 6, 6> = SMatrix::from_iterator(
            (0..6).flat_map(|c| (0..6).map(move |r| (r, c))).map(|(r, c)| {
                j.column(r).dot(&j.column(c))
            }),
        );
        let jtr: SVector<f64, 6> =
            SVector::from_iterator((0..6).map(|c| j.column(c).dot(&res.r)));

        let mut accepted = false;
        // Inner damping loop: retry with more damping until a step helps.
        for _ in 0..20 {
            let lhs = jtj + SMatrix::<f64, 6, 6>::identity() * damping;
            let Some(chol) = lhs.cholesky() else {
                damping *= cfg.damping_up;
                continue;
            };
            let delta = chol.solve(&(-jtr));
            let step_norm = delta.norm();
            let trial = apply_increment(&pose, &delta)?;
            match residuals(v, p, k, &trial) {
                Ok(trial_res) if trial_res.cost <= res.cost => {
                    let rel_decrease = if res.cost > 0.0 {
                        (res.cost - trial_res.cost) / res.cost
                    } else {
                        0.0
                    };
                    pose = trial;
                    res = trial_res;
                    damping *= cfg.damping_down;
                    accepted = true;
                    if rel_decrease <= cfg.cost_tolerance
                        || step_norm <= cfg.step_tolerance
                        || res.cost == 0.0
                    {
                        converged = true;
                    }
                    break;
                }
                Ok(_) | Err(Error::BehindCamera { .. }) => {
                    // Worse cost or a point pushed behind the camera:
                    // reject and stiffen.
                    damping *= cfg.damping_up;
                }
                Err(e) => return Err(e),
            }
        }
        if !accepted {
            // No improving step found at any damping level: local optimum.
            converged = true;
        }
    }

    let rms = (res.cost / v.len() as f64).sqrt();
    Ok(PnPResult {
        pose,
        rms_reprojection_error: rms,
        iterations,
        converged,
    })
}

/// Angle of the relative rotation between two row-convention matrices.
pub fn geodesic_rotation_error(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    (((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_world, rotation_from_axis_angle, AxisAngle};
    use nalgebra::Vector2;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_instance(seed: u64, n: usize) -> (VertexSet, Pose6DoF, CameraIntrinsics) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.random_range(-0.08..0.08),
                    rng.random_range(-0.11..0.11),
                    rng.random_range(-0.05..0.05),
                ]
            })
            .collect();
        let v = VertexSet::from_rows(&pts, Frame::World).unwrap();
        let omega = AxisAngle(Vector3::new(
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.4..0.4),
        ));
        let r = rotation_from_axis_angle(&omega);
        let t = Vector3::new(
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(0.3..0.9),
        );
        let pose = Pose6DoF::new(r, t).unwrap();
        let k = CameraIntrinsics::new(1000.0, 1000.0, 400.0, 400.0).unwrap();
        (v, pose, k)
    }

    #[test]
    fn dlt_identity_pose() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let pts: Vec<[f64; 3]> = (0..40)
            .map(|_| {
                [
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(1.0..2.0),
                ]
            })
            .collect();
        let v = VertexSet::from_rows(&pts, Frame::World).unwrap();
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let p = project_world(&v, &Pose6DoF::identity(), &k).unwrap();
        let pose = solve_pnp_dlt(&v, &p, &k).unwrap();
        assert!((pose.rotation() - Matrix3::identity()).abs().max() < 1e-9);
        assert!(pose.translation().norm() < 1e-9);
    }

    #[test]
    fn dlt_recovers_random_pose() {
        for seed in 0..10 {
            let (v, pose, k) = random_instance(seed, 120);
            let p = project_world(&v, &pose, &k).unwrap();
            let est = solve_pnp_dlt(&v, &p, &k).unwrap();
            assert!(
                geodesic_rotation_error(pose.rotation(), est.rotation()) < 1e-6,
                "seed {seed}"
            );
            assert!((pose.translation() - est.translation()).norm() < 1e-8);
        }
    }

    #[test]
    fn dlt_too_few_points() {
        let (v, pose, k) = random_instance(3, 5);
        let p = project_world(&v, &pose, &k).unwrap();
        assert!(matches!(
            solve_pnp_dlt(&v, &p, &k),
            Err(Error::TooFewPoints { got: 5 })
        ));
    }

    #[test]
    fn dlt_degenerate_configuration() {
        // All points identical: hopelessly rank-deficient.
        let v = VertexSet::from_rows(&[[0.0, 0.0, 0.0]; 8], Frame::World).unwrap();
        let p = LandmarkSet2D::from_rows(&[[400.0, 400.0]; 8]).unwrap();
        let k = CameraIntrinsics::new(1000.0, 1000.0, 400.0, 400.0).unwrap();
        assert!(matches!(
            solve_pnp_dlt(&v, &p, &k),
            Err(Error::DegenerateConfiguration { .. })
        ));
    }

    #[test]
    fn lm_exact_recovery() {
        for seed in 20..30 {
            let (v, pose, k) = random_instance(seed, 200);
            let p = project_world(&v, &pose, &k).unwrap();
            let result = solve_pnp(&v, &p, &k, &PnPConfig::default(), None).unwrap();
            assert!(result.converged);
            assert!(result.rms_reprojection_error < 1e-8, "seed {seed}");
            assert!(geodesic_rotation_error(pose.rotation(), result.pose.rotation()) < 1e-9);
            assert!((pose.translation() - result.pose.translation()).norm() < 1e-9);
        }
    }

    #[test]
    fn lm_from_ground_truth_converges_immediately() {
        let (v, pose, k) = random_instance(42, 100);
        let p = project_world(&v, &pose, &k).unwrap();
        let result = solve_pnp(&v, &p, &k, &PnPConfig::default(), Some(pose.clone())).unwrap();
        assert!(result.converged);
        assert!(result.iterations <= 2);
        assert!(geodesic_rotation_error(pose.rotation(), result.pose.rotation()) < 1e-12);
    }

    #[test]
    fn lm_never_worse_than_init() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for seed in 50..60 {
            let (v, pose, k) = random_instance(seed, 150);
            let exact = project_world(&v, &pose, &k).unwrap();
            // Noisy pixels.
            let noisy = LandmarkSet2D::new(
                exact
                    .points()
                    .iter()
                    .map(|p| p + Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                    .collect(),
            )
            .unwrap();
            let init = solve_pnp_dlt(&v, &noisy, &k).unwrap();
            let init_rms = reprojection_rms(&v, &init, &k, &noisy).unwrap();
            let result = solve_pnp(&v, &noisy, &k, &PnPConfig::default(), Some(init)).unwrap();
            assert!(result.rms_reprojection_error <= init_rms + 1e-15, "seed {seed}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (v, pose, k) = random_instance(99, 30);
        let exact = project_world(&v, &pose, &k).unwrap();
        // Offset pixels so residuals are non-trivial.
        let p = LandmarkSet2D::new(
            exact
                .points()
                .iter()
                .map(|q| q + Vector2::new(1.5, -2.0))
                .collect(),
        )
        .unwrap();
        let j = jacobian(&v, &k, &pose).unwrap();
        let h = 1e-5;
        for col in 0..6 {
            let mut dp = SVector::<f64, 6>::zeros();
            dp[col] = h;
            let plus = residuals(&v, &p, &k, &apply_increment(&pose, &dp).unwrap()).unwrap();
            dp[col] = -h;
            let minus = residuals(&v, &p, &k, &apply_increment(&pose, &dp).unwrap()).unwrap();
            let fd = (&plus.r - &minus.r) / (2.0 * h);
            for row in 0..j.nrows() {
                let a = j[(row, col)];
                let b = fd[row];
                let denom = a.abs().max(b.abs()).max(1e-6);
                assert!(
                    (a - b).abs() / denom < 1e-5,
                    "col {col} row {row}: analytic {a} fd {b}"
                );
            }
        }
    }

    #[test]
    fn reprojection_rms_hand_cases() {
        let (v, pose, k) = random_instance(5, 20);
        let p = project_world(&v, &pose, &k).unwrap();
        assert_eq!(reprojection_rms(&v, &pose, &k, &p).unwrap(), 0.0);

        // Single point with residual (3, 4) -> rms 5.
        let v1 = VertexSet::from_rows(&[[0.0, 0.0, 1.0]], Frame::World).unwrap();
        let k1 = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let p1 = LandmarkSet2D::from_rows(&[[3.0, 4.0]]).unwrap();
        let rms = reprojection_rms(&v1, &Pose6DoF::identity(), &k1, &p1).unwrap();
        assert!((rms - 5.0).abs() < 1e-12);
    }

    #[test]
    fn equivariance_under_world_rotation() {
        let (v, pose, k) = random_instance(11, 120);
        let p = project_world(&v, &pose, &k).unwrap();
        let r0 = rotation_from_axis_angle(&AxisAngle(Vector3::new(0.3, -0.1, 0.2)));
        // New world points w = v * R0; the same pixels are explained by
        // rotation R0^T * R_orig (row convention), unchanged translation.
        let rotated = VertexSet::new(
            v.points().iter().map(|q| r0.transpose() * q).collect(),
            Frame::World,
        )
        .unwrap();
        let result = solve_pnp(&rotated, &p, &k, &PnPConfig::default(), None).unwrap();
        let expected = r0.transpose() * pose.rotation();
        assert!(geodesic_rotation_error(&expected, result.pose.rotation()) < 1e-6);
        assert!((result.pose.translation() - pose.translation()).norm() < 1e-7);
    }

    #[test]
    fn determinism() {
        let (v, pose, k) = random_instance(13, 80);
        let p = project_world(&v, &pose, &k).unwrap();
        let a = solve_pnp(&v, &p, &k, &PnPConfig::default(), None).unwrap();
        let b = solve_pnp(&v, &p, &k, &PnPConfig::default(), None).unwrap();
        assert_eq!(a.pose.rotation(), b.pose.rotation());
        assert_eq!(a.pose.translation(), b.pose.translation());
        assert_eq!(a.rms_reprojection_error, b.rms_reprojection_error);
        assert_eq!(a.iterations, b.iterations);
    }
}
