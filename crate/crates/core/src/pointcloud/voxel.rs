use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{Point, PointCloud};

fn voxel_key(p: &Point, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// Keeps, per occupied voxel, the point nearest the voxel's centroid.
/// Output is ordered by ascending voxel key; ties go to the lower index.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::InvalidVoxel(voxel));
    }
    let mut cells: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        cells.entry(voxel_key(p, voxel)).or_default().push(i);
    }
    let points = cells
        .values()
        .map(|members| {
            let centroid = members
                .iter()
                .fold(Point::zeros(), |acc, &i| acc + cloud.get(i))
                / members.len() as f64;
            let best = members
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da = (cloud.get(a) - centroid).norm_squared();
                    let db = (cloud.get(b) - centroid).norm_squared();
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .expect("voxel cells are never empty");
            *cloud.get(best)
        })
        .collect();
    Ok(PointCloud {
        points,
        timestamp: cloud.timestamp,
    })
}
