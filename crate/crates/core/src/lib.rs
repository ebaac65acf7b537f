//! Geometric and numerical core for perspective face mesh reconstruction:
//! a fixed-topology mesh, pinhole projection under a row-vector pose
//! convention, L1 training losses with analytic gradients, a DLT +
//! Levenberg-Marquardt PnP solver, the combined camera-space distance
//! metric, a deterministic synthetic data generator, and a small joint
//! mesh+landmark regressor whose pose is recovered by PnP.

pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pnp;
pub mod regressor;
pub mod synth;
pub mod topology;

pub use error::{Error, Result};
pub use geometry::{
    axis_angle_from_rotation, perspective_project, project_world, rotation_from_axis_angle,
    world_to_camera, AxisAngle, CameraIntrinsics, Frame, LandmarkSet2D, Pose6DoF, VertexSet,
};
pub use losses::{edge_loss, landmark_loss, total_loss, vertex_loss, LossReport, LossWeights};
pub use metrics::{instance_error, score_submission, transformed_sets, InstanceError};
pub use pnp::{reprojection_rms, solve_pnp, solve_pnp_dlt, PnPConfig, PnPResult};
pub use topology::{edge_lengths, export_obj, load_topology, EdgeTable, FaceTopology};
