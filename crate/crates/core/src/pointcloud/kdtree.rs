use std::collections::BinaryHeap;

use crate::error::{Error, Result};

use super::{Point, PointCloud};

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact k-nearest-neighbor index. Splits on the widest-spread axis at the
/// median; equal distances are ordered by ascending point index.
#[derive(Clone, Debug)]
pub struct KdTree {
    cloud: PointCloud,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Max-heap entry ordered by `(distance², index)`.
#[derive(Clone, Copy, PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        cloud.ensure_non_empty()?;
        let mut tree = KdTree {
            cloud: cloud.clone(),
            order: (0..cloud.len()).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, cloud.len());
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    /// The indexed cloud, in original point order.
    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(self.cloud.get(i));
            hi = hi.sup(self.cloud.get(i));
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let pts = self.cloud.points();
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = self.cloud.get(self.order[mid])[axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points as `(index, squared distance)`, sorted by
    /// ascending distance then index. `k` is clamped to the cloud size.
    pub fn knn(&self, query: &Point, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.cloud.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|Candidate(d, i)| (i, d))
            .collect()
    }

    pub fn nearest(&self, query: &Point) -> (usize, f64) {
        self.knn(query, 1)[0]
    }

    fn search(&self, node: usize, q: &Point, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate((self.cloud.get(i) - q).norm_squared(), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap holds k items") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                let worst = heap.peek().map_or(f64::INFINITY, |c| c.0);
                if heap.len() < k || diff * diff <= worst {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

impl TryFrom<&PointCloud> for KdTree {
    type Error = Error;
    fn try_from(cloud: &PointCloud) -> Result<Self> {
        KdTree::build(cloud)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(cloud: &[Point], q: &Point, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = cloud
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        (0..n)
            .map(|_| {
                Point::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn empty_cloud_is_rejected() {
        assert!(matches!(
            KdTree::build(&PointCloud::default()),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn existing_point_is_its_own_neighbor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cloud(&mut rng, 200);
        let t = KdTree::build(&c).unwrap();
        for i in [0, 17, 199] {
            assert_eq!(t.nearest(c.get(i)), (i, 0.0));
        }
    }

    #[test]
    fn k_equal_to_size_returns_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_cloud(&mut rng, 50);
        let t = KdTree::build(&c).unwrap();
        let mut idx: Vec<usize> = t.knn(&Point::zeros(), 50).iter().map(|r| r.0).collect();
        idx.sort();
        assert_eq!(idx, (0..50).collect::<Vec<_>>());
        assert_eq!(t.knn(&Point::zeros(), 500).len(), 50);
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_cloud(&mut rng, 1000);
        let t = KdTree::build(&c).unwrap();
        for _ in 0..100 {
            let q = Point::new(
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
                rng.random_range(-2.0..2.0),
            );
            assert_eq!(t.knn(&q, 5), brute_knn(c.points(), &q, 5));
        }
    }

    #[test]
    fn duplicate_points_break_ties_by_index() {
        let c: PointCloud = vec![Point::new(1.0, 0.0, 0.0); 20].into_iter().collect();
        let t = KdTree::build(&c).unwrap();
        let idx: Vec<usize> = t.knn(&Point::zeros(), 4).iter().map(|r| r.0).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    proptest! {
        #[test]
        fn knn_is_exact(seed in 0u64..1000, n in 1usize..300, k in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Coarse integer grid forces many exact distance ties.
            let c: PointCloud = (0..n)
                .map(|_| Point::new(
                    rng.random_range(-4..4) as f64,
                    rng.random_range(-4..4) as f64,
                    rng.random_range(-2..2) as f64,
                ))
                .collect();
            let t = KdTree::build(&c).unwrap();
            let q = Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.5);
            prop_assert_eq!(t.knn(&q, k), brute_knn(c.points(), &q, k));
        }
    }
}
