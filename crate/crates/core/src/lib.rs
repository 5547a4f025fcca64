//! Point-to-point scan matching on SE(3) with Stein Variational Newton
//! particle inference.
//!
//! [`stein::solve_icp`] aligns a source cloud to a target cloud and returns a
//! pose together with a 6×6 covariance estimated from the particle spread.
//! [`fusion`] feeds those estimates into an error-state Kalman filter, and
//! [`oracle`] measures their consistency against a Monte-Carlo reference.

pub mod error;
pub mod fusion;
pub mod icp;
pub mod manifold;
pub mod oracle;
pub mod pointcloud;
pub mod scenes;
pub mod stein;

pub use error::{Error, Result};
pub use manifold::{Pose, Rot3, Twist};
pub use pointcloud::PointCloud;
pub use stein::{solve_icp, PoseWithCovariance, SolverConfig};
