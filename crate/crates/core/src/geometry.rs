//! Frames, rotations and perspective projection.
//!
//! Everything here follows the row-vector convention: a world point `v`
//! (a 1x3 row) maps into the camera frame as `v * R + T`. Rotation
//! matrices are stored in that convention; `AxisAngle` is the minimal
//! 3-parameter chart used by the pose optimizer.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate frame tag for a [`VertexSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    World,
    Camera,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "principal point must be finite, got cx={cx}, cy={cy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// Rigid pose: rotation (row-vector convention) plus translation in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose6DoF {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHONORMALITY_TOL: f64 = 1e-9;

impl Pose6DoF {
    /// Validates orthonormality and determinant +1 to 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, ORTHONORMALITY_TOL)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Applies `v * R + T` to a single point.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        // row * matrix == matrix^T * column
        self.rotation.transpose() * p + self.translation
    }
}

fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    let gram = r.transpose() * r;
    let dev = (gram - Matrix3::identity()).abs().max();
    if dev > tol {
        return Err(Error::NotARotation {
            reason: format!("R^T R deviates from identity by {dev:.3e} (tol {tol:.0e})"),
        });
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(Error::NotARotation {
            reason: format!("det(R) = {det} (tol {tol:.0e} around +1)"),
        });
    }
    Ok(())
}

/// Axis-angle rotation vector; angle = |omega|, axis = omega/|omega|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// N x 3 points in meters, tagged with the frame they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    points: Vec<Vector3<f64>>,
    frame: Frame,
}

impl VertexSet {
    pub fn new(points: Vec<Vector3<f64>>, frame: Frame) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::ParseError {
                    path: String::new(),
                    reason: format!("non-finite vertex at row {i}"),
                });
            }
        }
        Ok(Self { points, frame })
    }

    pub fn from_rows(rows: &[[f64; 3]], frame: Frame) -> Result<Self> {
        Self::new(
            rows.iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect(),
            frame,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn require_frame(&self, expected: Frame) -> Result<()> {
        if self.frame != expected {
            return Err(Error::FrameMismatch {
                expected,
                got: self.frame,
            });
        }
        Ok(())
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for p in &self.points {
            c += p;
        }
        c / self.points.len().max(1) as f64
    }
}

/// N x 2 pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet2D {
    points: Vec<Vector2<f64>>,
}

impl LandmarkSet2D {
    pub fn new(points: Vec<Vector2<f64>>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(Error::ParseError {
                    path: String::new(),
                    reason: format!("non-finite landmark at row {i}"),
                });
            }
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[[f64; 2]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| Vector2::new(r[0], r[1])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues map producing a row-convention matrix: `p * R` rotates the
/// row vector `p` by |omega| radians about omega.
pub fn rotation_from_axis_angle(omega: &AxisAngle) -> Matrix3<f64> {
    let theta = omega.angle();
    if theta < 1e-300 {
        return Matrix3::identity();
    }
    let axis = omega.0 / theta;
    let k = skew(&axis);
    // Transpose of the usual column-convention Rodrigues matrix.
    Matrix3::identity() - k * theta.sin() + k * k * (1.0 - theta.cos())
}

/// Inverse of [`rotation_from_axis_angle`] on |omega| < pi. Near angle pi
/// the axis sign is fixed by making its largest-magnitude component positive.
pub fn axis_angle_from_rotation(r: &Matrix3<f64>) -> Result<AxisAngle> {
    check_rotation(r, 1e-6)?;
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta < 1e-12 {
        return Ok(AxisAngle::zero());
    }
    if theta > std::f64::consts::PI - 1e-6 {
        // Symmetric part: R_sym = cos(t) I + (1-cos(t)) a a^T.
        let sym = (r + r.transpose()) / 2.0;
        let d = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
        // Column with the largest diagonal entry is the best-conditioned
        // multiple of the axis.
        let mut best = 0;
        for i in 1..3 {
            if d[(i, i)] > d[(best, best)] {
                best = i;
            }
        }
        let mut axis = Vector3::new(d[(0, best)], d[(1, best)], d[(2, best)]);
        axis /= axis.norm();
        let mut dominant = 0;
        for i in 1..3 {
            if axis[i].abs() > axis[dominant].abs() {
                dominant = i;
            }
        }
        if axis[dominant] < 0.0 {
            axis = -axis;
        }
        return Ok(AxisAngle(axis * theta));
    }
    // Skew part of the row-convention matrix carries -sin(theta) [a]x,
    // so the component order below is the transpose of the usual one.
    let v = Vector3::new(
        r[(1, 2)] - r[(2, 1)],
        r[(2, 0)] - r[(0, 2)],
        r[(0, 1)] - r[(1, 0)],
    ) / 2.0;
    let axis = v / theta.sin();
    Ok(AxisAngle(axis * theta))
}

/// `v * R + T` per row; output is tagged camera-frame.
pub fn world_to_camera(v: &VertexSet, pose: &Pose6DoF) -> Result<VertexSet> {
    v.require_frame(Frame::World)?;
    let rt = pose.rotation().transpose();
    let t = pose.translation();
    let points = v.points().iter().map(|p| rt * p + t).collect();
    Ok(VertexSet {
        points,
        frame: Frame::Camera,
    })
}

/// Pinhole projection of camera-frame points.
pub fn perspective_project(v: &VertexSet, k: &CameraIntrinsics) -> Result<LandmarkSet2D> {
    v.require_frame(Frame::Camera)?;
    let mut out = Vec::with_capacity(v.len());
    for (i, p) in v.points().iter().enumerate() {
        if p.z <= 1e-9 {
            return Err(Error::BehindCamera {
                index: i,
                depth: p.z,
            });
        }
        out.push(Vector2::new(
            k.fx * p.x / p.z + k.cx,
            k.fy * p.y / p.z + k.cy,
        ));
    }
    Ok(LandmarkSet2D { points: out })
}

/// World points straight to pixels: [`world_to_camera`] then [`perspective_project`].
pub fn project_world(
    v: &VertexSet,
    pose: &Pose6DoF,
    k: &CameraIntrinsics,
) -> Result<LandmarkSet2D> {
    perspective_project(&world_to_camera(v, pose)?, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn assert_vec_close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) {
        assert!((a - b).norm() < tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn zero_axis_angle_is_identity() {
        let r = rotation_from_axis_angle(&AxisAngle::zero());
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z_row_convention() {
        let r = rotation_from_axis_angle(&AxisAngle(Vector3::new(0.0, 0.0, PI / 2.0)));
        let p = nalgebra::RowVector3::new(1.0, 0.0, 0.0);
        let rotated = p * r;
        assert!((rotated - nalgebra::RowVector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn axis_angle_round_trip() {
        let omega = AxisAngle(Vector3::new(PI / 3.0, 0.0, 0.0));
        let back = axis_angle_from_rotation(&rotation_from_axis_angle(&omega)).unwrap();
        assert_vec_close(&back.0, &omega.0, 1e-12);

        let omega = AxisAngle(Vector3::new(0.1, -0.2, 0.3));
        let back = axis_angle_from_rotation(&rotation_from_axis_angle(&omega)).unwrap();
        assert_vec_close(&back.0, &omega.0, 1e-9);
    }

    #[test]
    fn identity_extracts_to_zero() {
        let back = axis_angle_from_rotation(&Matrix3::identity()).unwrap();
        assert_eq!(back.0, Vector3::zeros());
    }

    #[test]
    fn near_pi_extraction() {
        // Rotation by pi about z.
        let r = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        let omega = axis_angle_from_rotation(&r).unwrap();
        assert!((omega.angle() - PI).abs() < 1e-6);
        let axis = omega.0 / omega.angle();
        assert!((axis - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-6);
        // Forward map reproduces the input.
        let r2 = rotation_from_axis_angle(&omega);
        assert!((r2 - r).abs().max() < 1e-9);
    }

    #[test]
    fn not_a_rotation_rejected() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 2.0));
        assert!(matches!(
            axis_angle_from_rotation(&m),
            Err(Error::NotARotation { .. })
        ));
        // Reflection: orthonormal but det -1.
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            axis_angle_from_rotation(&m),
            Err(Error::NotARotation { .. })
        ));
    }

    #[test]
    fn world_to_camera_identity_and_translation() {
        let v = VertexSet::from_rows(&[[1.0, 0.0, 0.0]], Frame::World).unwrap();
        let out = world_to_camera(&v, &Pose6DoF::identity()).unwrap();
        assert_eq!(out.points()[0], v.points()[0]);
        assert_eq!(out.frame(), Frame::Camera);

        let pose = Pose6DoF::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.5)).unwrap();
        let out = world_to_camera(&v, &pose).unwrap();
        assert_vec_close(&out.points()[0], &Vector3::new(1.0, 0.0, 0.5), 1e-15);
    }

    #[test]
    fn world_to_camera_quarter_turn() {
        let v = VertexSet::from_rows(&[[1.0, 0.0, 0.0]], Frame::World).unwrap();
        let r = rotation_from_axis_angle(&AxisAngle(Vector3::new(0.0, 0.0, PI / 2.0)));
        let pose = Pose6DoF::new(r, Vector3::zeros()).unwrap();
        let out = world_to_camera(&v, &pose).unwrap();
        assert_vec_close(&out.points()[0], &Vector3::new(0.0, 1.0, 0.0), 1e-12);
    }

    #[test]
    fn frame_mismatch_detected() {
        let v = VertexSet::from_rows(&[[0.0, 0.0, 1.0]], Frame::Camera).unwrap();
        assert!(matches!(
            world_to_camera(&v, &Pose6DoF::identity()),
            Err(Error::FrameMismatch { .. })
        ));
        let w = VertexSet::from_rows(&[[0.0, 0.0, 1.0]], Frame::World).unwrap();
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            perspective_project(&w, &k),
            Err(Error::FrameMismatch { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let v = VertexSet::from_rows(&[[0.0, 0.0, 1.0]], Frame::Camera).unwrap();
        let p = perspective_project(&v, &k).unwrap();
        assert_eq!(p.points()[0], Vector2::new(0.0, 0.0));

        let k = CameraIntrinsics::new(1000.0, 1000.0, 400.0, 400.0).unwrap();
        let v = VertexSet::from_rows(&[[0.1, -0.05, 0.5]], Frame::Camera).unwrap();
        let p = perspective_project(&v, &k).unwrap();
        assert!((p.points()[0] - Vector2::new(600.0, 300.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_rejected() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let v = VertexSet::from_rows(&[[0.0, 0.0, -0.2]], Frame::Camera).unwrap();
        assert!(matches!(
            perspective_project(&v, &k),
            Err(Error::BehindCamera { index: 0, .. })
        ));
    }

    #[test]
    fn project_world_is_composition() {
        let k = CameraIntrinsics::new(1000.0, 1000.0, 400.0, 400.0).unwrap();
        let v = VertexSet::from_rows(&[[0.0, 0.0, 0.0]], Frame::World).unwrap();
        let pose = Pose6DoF::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.6)).unwrap();
        let p = project_world(&v, &pose, &k).unwrap();
        assert_eq!(p.points()[0], Vector2::new(400.0, 400.0));
    }

    #[test]
    fn bad_intrinsics_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::NAN, 0.0).is_err());
    }
}
