//! Python bindings over the meshpose core. All matrices are row-major
//! nested lists; rotations follow the row-vector convention `v * R + T`.

use meshpose::geometry::{
    AxisAngle, CameraIntrinsics, Frame, LandmarkSet2D, Pose6DoF, VertexSet,
};
use meshpose::losses::LossWeights;
use meshpose::pnp::{geodesic_rotation_error, PnPConfig};
use meshpose::topology::FaceTopology;
use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: meshpose::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn mat3(rows: [[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(
        rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
        rows[2][1], rows[2][2],
    )
}

fn mat3_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

fn pose(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> PyResult<Pose6DoF> {
    Pose6DoF::new(mat3(rotation), Vector3::from(translation)).map_err(err)
}

fn intrinsics(k: (f64, f64, f64, f64)) -> PyResult<CameraIntrinsics> {
    CameraIntrinsics::new(k.0, k.1, k.2, k.3).map_err(err)
}

fn world(vertices: Vec<[f64; 3]>) -> PyResult<VertexSet> {
    VertexSet::from_rows(&vertices, Frame::World).map_err(err)
}

fn pixels(points: Vec<[f64; 2]>) -> PyResult<LandmarkSet2D> {
    LandmarkSet2D::from_rows(&points).map_err(err)
}

fn pixel_rows(p: &LandmarkSet2D) -> Vec<[f64; 2]> {
    p.points().iter().map(|q| [q.x, q.y]).collect()
}

#[pyfunction]
fn rotation_from_axis_angle(omega: [f64; 3]) -> [[f64; 3]; 3] {
    mat3_rows(&meshpose::geometry::rotation_from_axis_angle(&AxisAngle(
        Vector3::from(omega),
    )))
}

#[pyfunction]
fn axis_angle_from_rotation(rotation: [[f64; 3]; 3]) -> PyResult<[f64; 3]> {
    let omega = meshpose::geometry::axis_angle_from_rotation(&mat3(rotation)).map_err(err)?;
    Ok([omega.0.x, omega.0.y, omega.0.z])
}

#[pyfunction]
fn project_world(
    vertices: Vec<[f64; 3]>,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    k: (f64, f64, f64, f64),
) -> PyResult<Vec<[f64; 2]>> {
    let p = meshpose::geometry::project_world(
        &world(vertices)?,
        &pose(rotation, translation)?,
        &intrinsics(k)?,
    )
    .map_err(err)?;
    Ok(pixel_rows(&p))
}

#[pyfunction]
fn solve_pnp_dlt(
    vertices: Vec<[f64; 3]>,
    landmarks: Vec<[f64; 2]>,
    k: (f64, f64, f64, f64),
) -> PyResult<([[f64; 3]; 3], [f64; 3])> {
    let p = meshpose::pnp::solve_pnp_dlt(&world(vertices)?, &pixels(landmarks)?, &intrinsics(k)?)
        .map_err(err)?;
    let t = p.translation();
    Ok((mat3_rows(p.rotation()), [t.x, t.y, t.z]))
}

#[pyfunction]
fn solve_pnp<'py>(
    py: Python<'py>,
    vertices: Vec<[f64; 3]>,
    landmarks: Vec<[f64; 2]>,
    k: (f64, f64, f64, f64),
) -> PyResult<Bound<'py, PyDict>> {
    let r = meshpose::pnp::solve_pnp(
        &world(vertices)?,
        &pixels(landmarks)?,
        &intrinsics(k)?,
        &PnPConfig::default(),
        None,
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    let t = r.pose.translation();
    out.set_item("rotation", mat3_rows(r.pose.rotation()))?;
    out.set_item("translation", [t.x, t.y, t.z])?;
    out.set_item("rms_px", r.rms_reprojection_error)?;
    out.set_item("iterations", r.iterations)?;
    out.set_item("converged", r.converged)?;
    Ok(out)
}

#[pyfunction]
fn rotation_error_deg(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> f64 {
    geodesic_rotation_error(&mat3(a), &mat3(b)).to_degrees()
}

#[pyfunction]
#[pyo3(signature = (pred_vertices, gt_vertices, pred_landmarks, gt_landmarks, triangles, lambda0 = 0.25, lambda1 = 2.0))]
#[allow(clippy::too_many_arguments)]
fn total_loss<'py>(
    py: Python<'py>,
    pred_vertices: Vec<[f64; 3]>,
    gt_vertices: Vec<[f64; 3]>,
    pred_landmarks: Vec<[f64; 2]>,
    gt_landmarks: Vec<[f64; 2]>,
    triangles: Vec<[u32; 3]>,
    lambda0: f64,
    lambda1: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let n = pred_vertices.len();
    let landmark68 = (0..68.min(n as u32)).collect();
    let topo = FaceTopology::new(n, triangles, landmark68).map_err(err)?;
    let report = meshpose::losses::total_loss(
        &world(pred_vertices)?,
        &world(gt_vertices)?,
        &pixels(pred_landmarks)?,
        &pixels(gt_landmarks)?,
        &topo.edge_table(),
        &LossWeights { lambda0, lambda1 },
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("l_vert", report.l_vert)?;
    out.set_item("l_edge", report.l_edge)?;
    out.set_item("l_land", report.l_land)?;
    out.set_item("l_total", report.l_total)?;
    out.set_item(
        "grad_vertices",
        report
            .grad_vertices
            .iter()
            .map(|g| [g.x, g.y, g.z])
            .collect::<Vec<_>>(),
    )?;
    out.set_item(
        "grad_landmarks",
        report
            .grad_landmarks
            .iter()
            .map(|g| [g.x, g.y])
            .collect::<Vec<_>>(),
    )?;
    Ok(out)
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn instance_error<'py>(
    py: Python<'py>,
    gt_vertices: Vec<[f64; 3]>,
    pred_vertices: Vec<[f64; 3]>,
    gt_rotation: [[f64; 3]; 3],
    gt_translation: [f64; 3],
    pred_rotation: [[f64; 3]; 3],
    pred_translation: [f64; 3],
) -> PyResult<Bound<'py, PyDict>> {
    let e = meshpose::metrics::instance_error(
        &world(gt_vertices)?,
        &world(pred_vertices)?,
        &pose(gt_rotation, gt_translation)?,
        &pose(pred_rotation, pred_translation)?,
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("d12", e.d12)?;
    out.set_item("d13", e.d13)?;
    out.set_item("d14", e.d14)?;
    out.set_item("l_error_mm", e.l_error_mm)?;
    Ok(out)
}

#[pymodule]
fn meshpose_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(rotation_from_axis_angle, m)?)?;
    m.add_function(wrap_pyfunction!(axis_angle_from_rotation, m)?)?;
    m.add_function(wrap_pyfunction!(project_world, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pnp_dlt, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pnp, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_error_deg, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(instance_error, m)?)?;
    Ok(())
}
