use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifold::Pose;

use super::{KdTree, Point, PointCloud};

/// Per-source-point candidate target sets, built once per scan pair.
///
/// Neighborhood `n` holds the `m` nearest target indices of the source point
/// `n` placed under the prior pose, in ascending distance order.
#[derive(Clone, Debug, PartialEq)]
pub struct SubTargetIndex {
    indices: Vec<usize>,
    m: usize,
}

impl SubTargetIndex {
    /// Effective neighborhood size after clamping to the target size.
    pub fn neighborhood_size(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighborhood(&self, n: usize) -> &[usize] {
        &self.indices[n * self.m..(n + 1) * self.m]
    }
}

pub fn build_sub_targets(
    source: &PointCloud,
    target: &KdTree,
    m: usize,
    prior: &Pose,
) -> Result<SubTargetIndex> {
    if m == 0 {
        return Err(Error::InvalidConfig("neighborhood size must be >= 1".into()));
    }
    if target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let m = m.min(target.len());
    let indices = source
        .points()
        .par_iter()
        .flat_map_iter(|p| {
            target
                .knn(&prior.transform_point(p), m)
                .into_iter()
                .map(|(i, _)| i)
        })
        .collect();
    Ok(SubTargetIndex { indices, m })
}

/// Closest member of `neighborhood` to `p` by linear scan; the lower target
/// index wins on equal distance.
pub fn nearest_in_subtarget(
    p: &Point,
    neighborhood: &[usize],
    target: &PointCloud,
) -> (usize, Point) {
    let mut best = neighborhood[0];
    let mut best_d = (target.get(best) - p).norm_squared();
    for &i in &neighborhood[1..] {
        let d = (target.get(i) - p).norm_squared();
        if d < best_d || (d == best_d && i < best) {
            best = i;
            best_d = d;
        }
    }
    (best, *target.get(best))
}
