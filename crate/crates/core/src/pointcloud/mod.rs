//! Point clouds, file IO, voxel downsampling and neighbor search.

mod io;
mod kdtree;
mod subtarget;
mod voxel;

pub use io::{load_cloud, write_csv, CloudFormat};
pub use kdtree::KdTree;
pub use subtarget::{build_sub_targets, nearest_in_subtarget, SubTargetIndex};
pub use voxel::voxel_downsample;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::manifold::Pose;

pub type Point = Vector3<f64>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    pub timestamp: Option<f64>,
}

impl PointCloud {
    /// Rejects any non-finite coordinate.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidConfig(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(PointCloud {
            points,
            timestamp: None,
        })
    }

    pub fn with_timestamp(mut self, t: f64) -> Self {
        self.timestamp = Some(t);
        self
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> &Point {
        &self.points[i]
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            timestamp: self.timestamp,
        }
    }

    pub fn ensure_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        PointCloud {
            points: iter.into_iter().collect(),
            timestamp: None,
        }
    }
}
