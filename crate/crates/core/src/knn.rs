//! Exact max-norm (Chebyshev) neighbor queries.
//!
//! [`KdTree`] answers two queries over a fixed point set:
//! k-th nearest neighbor distance (optionally excluding one index) and
//! strict range counts `#{j : ‖x_j - c‖∞ < r}`. Both return exactly what a
//! linear scan computes: distances are evaluated with the same floating-point
//! expression, and pruning relies only on the monotonicity of rounding.
//!
//! [`NeighborIndex`] bundles a joint tree with one tree per subspace of a
//! [`DataCloud`], which is what the KSG estimator needs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::ensemble::{DataCloud, Subspace};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

/// Max-norm distance between two equal-length points.
#[inline]
pub fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| {
        let d = (x - y).abs();
        if d > m {
            d
        } else {
            m
        }
    })
}

#[derive(Debug, Clone)]
struct Node {
    start: usize,
    end: usize,
    /// Child node ids; `None` for leaves.
    children: Option<(usize, usize)>,
}

/// Static k-d tree over `n` points of dimension `dim` (row-major buffer).
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<f64>,
    dim: usize,
    perm: Vec<usize>,
    nodes: Vec<Node>,
    /// Per-node bounding boxes, `[lo_0..lo_d, hi_0..hi_d]`.
    bounds: Vec<f64>,
}

#[derive(PartialEq)]
struct Cand(f64);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl KdTree {
    pub fn new(points: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && points.len() % dim == 0, "point buffer does not match dimension");
        let n = points.len() / dim;
        let mut tree = Self {
            points,
            dim,
            perm: (0..n).collect(),
            nodes: Vec::new(),
            bounds: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let d = self.dim;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in &self.perm[start..end] {
            for (c, &v) in self.points[i * d..(i + 1) * d].iter().enumerate() {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node { start, end, children: None });
        self.bounds.extend_from_slice(&lo);
        self.bounds.extend_from_slice(&hi);
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..d)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            // all points identical
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.perm[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| pts[a * d + axis].total_cmp(&pts[b * d + axis]));
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    fn bbox(&self, node: usize) -> (&[f64], &[f64]) {
        let d = self.dim;
        let b = &self.bounds[node * 2 * d..(node + 1) * 2 * d];
        b.split_at(d)
    }

    /// Max-norm distance from `q` to the node's box (0 inside).
    fn box_gap(&self, node: usize, q: &[f64]) -> f64 {
        let (lo, hi) = self.bbox(node);
        let mut m: f64 = 0.0;
        for c in 0..self.dim {
            let g = if q[c] < lo[c] {
                lo[c] - q[c]
            } else if q[c] > hi[c] {
                q[c] - hi[c]
            } else {
                0.0
            };
            m = m.max(g);
        }
        m
    }

    /// Largest max-norm distance from `q` to any point of the node's box.
    fn box_reach(&self, node: usize, q: &[f64]) -> f64 {
        let (lo, hi) = self.bbox(node);
        let mut m: f64 = 0.0;
        for c in 0..self.dim {
            m = m.max((q[c] - lo[c]).abs()).max((hi[c] - q[c]).abs());
        }
        m
    }

    /// k-th smallest distance from `q` to the stored points, skipping index
    /// `exclude`. Returns `None` when fewer than `k` candidates exist.
    pub fn kth_distance(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Option<f64> {
        if k == 0 || self.is_empty() {
            return None;
        }
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, q, k, exclude, &mut heap);
        if heap.len() < k {
            None
        } else {
            heap.peek().map(|c| c.0)
        }
    }

    fn knn_rec(&self, node: usize, q: &[f64], k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Cand>) {
        let n = &self.nodes[node];
        match n.children {
            None => {
                for &i in &self.perm[n.start..n.end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let dist = chebyshev(self.point(i), q);
                    if heap.len() < k {
                        heap.push(Cand(dist));
                    } else if dist < heap.peek().map_or(f64::INFINITY, |c| c.0) {
                        heap.pop();
                        heap.push(Cand(dist));
                    }
                }
            }
            Some((l, r)) => {
                let gl = self.box_gap(l, q);
                let gr = self.box_gap(r, q);
                let order = if gl <= gr { [(l, gl), (r, gr)] } else { [(r, gr), (l, gl)] };
                for (child, gap) in order {
                    // ties at the current bound cannot change the k-th value
                    if heap.len() == k && gap >= heap.peek().map_or(f64::INFINITY, |c| c.0) {
                        continue;
                    }
                    self.knn_rec(child, q, k, exclude, heap);
                }
            }
        }
    }

    /// Number of stored points strictly closer than `radius` to `q`.
    pub fn count_within(&self, q: &[f64], radius: f64) -> usize {
        if self.is_empty() {
            return 0;
        }
        self.count_rec(0, q, radius)
    }

    fn count_rec(&self, node: usize, q: &[f64], radius: f64) -> usize {
        if self.box_gap(node, q) >= radius {
            return 0;
        }
        let n = &self.nodes[node];
        if self.box_reach(node, q) < radius {
            return n.end - n.start;
        }
        match n.children {
            None => self.perm[n.start..n.end]
                .iter()
                .filter(|&&i| chebyshev(self.point(i), q) < radius)
                .count(),
            Some((l, r)) => self.count_rec(l, q, radius) + self.count_rec(r, q, radius),
        }
    }
}

/// Joint and per-subspace trees over one data cloud.
#[derive(Debug, Clone)]
pub struct NeighborIndex<'a> {
    cloud: &'a DataCloud,
    joint: KdTree,
    sub_a: Option<KdTree>,
    sub_b: Option<KdTree>,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(cloud: &'a DataCloud) -> Self {
        let joint = KdTree::new(cloud.points().to_vec(), cloud.dim());
        let sub = |s: Subspace| {
            let r = cloud.axes(s);
            (!r.is_empty() && r.len() < cloud.dim()).then(|| KdTree::new(cloud.project(s), r.len()))
        };
        Self { cloud, joint, sub_a: sub(Subspace::A), sub_b: sub(Subspace::B) }
    }

    pub fn cloud(&self) -> &DataCloud {
        self.cloud
    }

    fn check_k(&self, k: usize) -> Result<()> {
        let n = self.cloud.len();
        if k == 0 || k >= n {
            return Err(Error::KTooLarge { k, n });
        }
        Ok(())
    }

    /// k-th smallest max-norm distance from point `i` to the other points.
    pub fn kth_neighbor_distance(&self, i: usize, k: usize) -> Result<f64> {
        self.check_k(k)?;
        Ok(self
            .joint
            .kth_distance(self.cloud.point(i), k, Some(i))
            .expect("k < n guarantees enough candidates"))
    }

    /// Points (self included) strictly within `radius` of point `i` in the
    /// chosen subspace.
    pub fn count_within_subspace(&self, i: usize, radius: f64, sub: Subspace) -> usize {
        let p = &self.cloud.point(i)[self.cloud.axes(sub)];
        let tree = match sub {
            Subspace::A => self.sub_a.as_ref(),
            Subspace::B => self.sub_b.as_ref(),
            Subspace::Joint => None,
        }
        .unwrap_or(&self.joint);
        tree.count_within(p, radius)
    }
}

#[cfg(test)]
pub(crate) mod brute {
    //! Linear-scan oracle.
    use super::chebyshev;

    pub fn kth_distance(points: &[f64], dim: usize, q: &[f64], k: usize, exclude: Option<usize>) -> Option<f64> {
        let mut d: Vec<f64> = points
            .chunks_exact(dim)
            .enumerate()
            .filter(|(j, _)| Some(*j) != exclude)
            .map(|(_, p)| chebyshev(p, q))
            .collect();
        d.sort_by(f64::total_cmp);
        d.get(k.wrapping_sub(1)).copied()
    }

    pub fn count_within(points: &[f64], dim: usize, q: &[f64], radius: f64) -> usize {
        points.chunks_exact(dim).filter(|p| chebyshev(p, q) < radius).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn line_examples() {
        let c = DataCloud::single(vec![0.0, 1.0, 3.0], 3, 1).unwrap();
        let idx = NeighborIndex::new(&c);
        assert_eq!(idx.kth_neighbor_distance(0, 1).unwrap(), 1.0);
        assert_eq!(idx.kth_neighbor_distance(0, 2).unwrap(), 3.0);
        assert!(matches!(idx.kth_neighbor_distance(0, 3), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn plane_example_uses_max_norm() {
        let c = DataCloud::new(vec![0.0, 0.0, 1.0, 2.0, 3.0, 1.0], 3, 1, 1).unwrap();
        let idx = NeighborIndex::new(&c);
        assert_eq!(idx.kth_neighbor_distance(0, 1).unwrap(), 2.0);
    }

    #[test]
    fn strict_counts_exclude_boundary() {
        let c = DataCloud::new(vec![0.0, 0.0, 1.0, 5.0, 2.0, 9.0], 3, 1, 1).unwrap();
        let idx = NeighborIndex::new(&c);
        assert_eq!(idx.count_within_subspace(0, 1.0, Subspace::A), 1);
        let c = DataCloud::new(vec![0.0, 0.0, 0.5, 5.0, 2.0, 9.0], 3, 1, 1).unwrap();
        let idx = NeighborIndex::new(&c);
        assert_eq!(idx.count_within_subspace(0, 1.0, Subspace::A), 2);
        assert_eq!(idx.count_within_subspace(0, 9.5, Subspace::Joint), 3);
    }

    #[test]
    fn duplicates_give_zero_distance() {
        let t = KdTree::new(vec![1.0; 40], 2);
        assert_eq!(t.kth_distance(&[1.0, 1.0], 3, Some(0)), Some(0.0));
        assert_eq!(t.count_within(&[1.0, 1.0], 1e-300), 20);
    }

    fn cloud_strategy() -> impl Strategy<Value = (Vec<f64>, usize)> {
        (1usize..=4, 2usize..60).prop_flat_map(|(dim, n)| {
            // small integer lattice to force ties
            (prop::collection::vec((-4i32..4).prop_map(|v| v as f64 * 0.5), n * dim), Just(dim))
        })
    }

    proptest! {
        #[test]
        fn tree_matches_linear_scan((pts, dim) in cloud_strategy(), k in 1usize..6, r in 0.01f64..3.0) {
            let n = pts.len() / dim;
            let tree = KdTree::new(pts.clone(), dim);
            for i in 0..n {
                let q = &pts[i * dim..(i + 1) * dim];
                prop_assert_eq!(tree.kth_distance(q, k, Some(i)), brute::kth_distance(&pts, dim, q, k, Some(i)));
                prop_assert_eq!(tree.count_within(q, r), brute::count_within(&pts, dim, q, r));
                if let Some(eps) = tree.kth_distance(q, k, Some(i)) {
                    if eps > 0.0 {
                        prop_assert_eq!(tree.count_within(q, eps), brute::count_within(&pts, dim, q, eps));
                    }
                }
            }
        }

        #[test]
        fn counts_are_monotone_in_radius(
            pts in prop::collection::vec(-1.0f64..1.0, 2..120),
            r1 in 0.0f64..1.0,
            dr in 0.0f64..1.0,
        ) {
            let tree = KdTree::new(pts.clone(), 1);
            for q in &pts {
                prop_assert!(tree.count_within(&[*q], r1) <= tree.count_within(&[*q], r1 + dr));
            }
        }

        #[test]
        fn distinct_distances_count_equals_k(pts in prop::collection::vec(-1.0f64..1.0, 4..80), k in 1usize..3) {
            let c = DataCloud::single(pts.clone(), pts.len(), 1).unwrap();
            let idx = NeighborIndex::new(&c);
            for i in 0..pts.len() {
                let mut ds: Vec<f64> = pts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| (p - pts[i]).abs()).collect();
                ds.sort_by(f64::total_cmp);
                if ds.windows(2).all(|w| w[0] < w[1]) && ds[0] > 0.0 {
                    let eps = idx.kth_neighbor_distance(i, k).unwrap();
                    prop_assert_eq!(idx.count_within_subspace(i, eps, Subspace::Joint), k);
                }
            }
        }
    }
}
