//! Minimal k-d tree over 3D points with deterministic k-nearest-neighbor
//! queries: candidates are ordered by (squared distance, point index), so
//! ties always resolve to the lower index regardless of tree shape.

use crate::frames::Vec3;

struct Node {
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

pub struct KdTree<'a> {
    points: &'a [Vec3],
    nodes: Vec<Node>,
    root: i32,
}

/// Squared distance used everywhere (tree and oracle) so that float results
/// are identical between search strategies.
#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vec3]) -> Self {
        let mut ids: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut ids, 0, &mut nodes);
        Self { points, nodes, root }
    }

    fn build_rec(points: &[Vec3], ids: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> i32 {
        if ids.is_empty() {
            return -1;
        }
        let axis = (depth % 3) as u8;
        let mid = ids.len() / 2;
        // Median split with an index tiebreak keeps the build deterministic
        // for duplicate coordinates.
        ids.select_nth_unstable_by(mid, |&a, &b| {
            let ca = points[a as usize][axis as usize];
            let cb = points[b as usize][axis as usize];
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        });
        let point = ids[mid];
        let slot = nodes.len();
        nodes.push(Node { point, axis, left: -1, right: -1 });
        let (lo, rest) = ids.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, hi, depth + 1, nodes);
        nodes[slot].left = left;
        nodes[slot].right = right;
        slot as i32
    }

    /// K nearest neighbors of `query`, excluding the point with index
    /// `skip` (the query point itself). Results ascend by (distance, index).
    pub fn knn(&self, query: &Vec3, k: usize, skip: Option<u32>) -> Vec<u32> {
        // Bounded worst-first list; k is small (tens) so a sorted Vec beats
        // a heap in practice.
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search(self.root, query, k, skip, &mut best);
        best.into_iter().map(|(_, i)| i).collect()
    }

    fn search(&self, node: i32, query: &Vec3, k: usize, skip: Option<u32>, best: &mut Vec<(f64, u32)>) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        if Some(n.point) != skip {
            let d = dist2(query, p);
            let cand = (d, n.point);
            if best.len() < k || cand < *best.last().unwrap() {
                let pos = best.partition_point(|e| *e < cand);
                best.insert(pos, cand);
                if best.len() > k {
                    best.pop();
                }
            }
        }
        let axis = n.axis as usize;
        let delta = query[axis] - p[axis];
        let (near, far) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, query, k, skip, best);
        // Strict comparison: an equal-distance candidate on the far side may
        // still win its index tiebreak, so only prune when strictly worse.
        if best.len() < k || delta * delta <= best.last().unwrap().0 {
            self.search(far, query, k, skip, best);
        }
    }
}
