//! Bounded polygonal facets from slices: normal-constrained slice merging,
//! total-least-squares plane fits, convex boundary extraction by Graham's
//! scan, the facet height-band filter and neighbor-spacing statistics.

use nalgebra::Vector2;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::frames::{FrameOrigin, Vec3};
use crate::segmentation::{
    estimate_slice, normal_deviation, pca_plane, CloudPoint, NeighborLists, PointAttributes,
    Slice,
};

pub type Vec2 = Vector2<f64>;

/// Boundary vertices must sit on the facet plane within this distance (m).
pub const PLANE_TOLERANCE: f64 = 1e-6;
/// Collinear-cleanup threshold for hull vertices (m); well below
/// [`PLANE_TOLERANCE`] so cleanup never moves a boundary materially.
const COLLINEAR_CLEANUP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum PlanarMapError {
    #[error("slice is degenerate (fewer than 3 non-collinear members)")]
    DegenerateSlice,
    #[error("convex hull needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("all points collinear, no 2D hull")]
    CollinearInput,
}

/// Plane in Hessian form: normal . x + tau = 0, with a reference anchor on
/// the plane.
#[derive(Debug, Clone, Copy)]
pub struct Plane {
    /// Unit normal (beta, eps1, eps2).
    pub normal: Vec3,
    pub tau: f64,
    /// A point on the plane (the fit centroid).
    pub anchor: Vec3,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.tau
    }
}

/// Bounded convex facet: plane plus counterclockwise boundary (seen from
/// the +normal side).
#[derive(Debug, Clone)]
pub struct Facet {
    pub id: u32,
    pub plane: Plane,
    pub boundary: Vec<Vec3>,
    /// [z_min, z_max] over the boundary (m).
    pub height_range: (f64, f64),
    pub source_slice: u32,
    /// Axis-aligned bounds of the boundary, cached for fast ray rejection.
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
}

impl Facet {
    pub fn new(id: u32, plane: Plane, boundary: Vec<Vec3>, source_slice: u32) -> Self {
        let mut bbox_min = Vec3::repeat(f64::INFINITY);
        let mut bbox_max = Vec3::repeat(f64::NEG_INFINITY);
        for v in &boundary {
            bbox_min = bbox_min.inf(v);
            bbox_max = bbox_max.sup(v);
        }
        let height_range = (bbox_min.z, bbox_max.z);
        Self { id, plane, boundary, height_range, source_slice, bbox_min, bbox_max }
    }

    /// Checks the structural invariants: vertices on the plane, convex
    /// counterclockwise boundary, ordered height range.
    pub fn validate(&self) -> Result<(), String> {
        if self.boundary.len() < 3 {
            return Err(format!("facet {}: fewer than 3 boundary vertices", self.id));
        }
        for v in &self.boundary {
            let d = self.plane.signed_distance(v).abs();
            if d > PLANE_TOLERANCE {
                return Err(format!("facet {}: vertex {d:.3e} m off plane", self.id));
            }
        }
        let n = self.boundary.len();
        for i in 0..n {
            let a = self.boundary[i];
            let b = self.boundary[(i + 1) % n];
            let c = self.boundary[(i + 2) % n];
            let cross = (b - a).cross(&(c - a)).dot(&self.plane.normal);
            if cross < -PLANE_TOLERANCE {
                return Err(format!("facet {}: boundary not convex/ccw at vertex {i}", self.id));
            }
        }
        if self.height_range.0 > self.height_range.1 {
            return Err(format!("facet {}: inverted height range", self.id));
        }
        Ok(())
    }
}

/// The collection of facets the tracer walks, together with the frame
/// origin the coordinates are expressed in.
#[derive(Clone)]
pub struct PlanarMap {
    pub origin: FrameOrigin,
    pub facets: Vec<Facet>,
    pub provenance: String,
}

/// Paper-style neighbor spacing statistics over clustered points (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacingStats {
    pub mean_all: f64,
    pub median_all: f64,
    pub mean_of_cluster_means: f64,
    pub median_of_cluster_means: f64,
    pub sample_count: usize,
    pub cluster_count: usize,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = i;
        while self.0[c] != c {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }
    /// Lower root wins, which keeps merged groups canonical under input
    /// permutation.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.0[hi] = lo;
        true
    }
}

/// Point pairs that are mutually in each other's consistent sets.
fn mutual_consistency_pairs(attrs: &[Option<PointAttributes>]) -> Vec<(u32, u32)> {
    let mut pairs = Vec::new();
    for (i, attr) in attrs.iter().enumerate() {
        let Some(a) = attr else { continue };
        for &j in &a.consistent {
            if (j as usize) <= i {
                continue;
            }
            if let Some(b) = &attrs[j as usize] {
                if b.consistent.binary_search(&(i as u32)).is_ok() {
                    pairs.push((i as u32, j));
                }
            }
        }
    }
    pairs
}

/// Merge neighboring slices whenever a mutually-consistent point pair links
/// their consistent sets and the folded normal angle stays below
/// `theta_merge` (radians). Iterates to a fixed point, re-estimating merged
/// slice attributes each round; the result is independent of input order.
pub fn merge_slices(
    slices: &[Slice],
    points: &[CloudPoint],
    attrs: &[Option<PointAttributes>],
    theta_merge: f64,
) -> Vec<Slice> {
    let positions: Vec<Vec3> = points.iter().map(|p| p.position).collect();
    let pairs = mutual_consistency_pairs(attrs);

    let mut current: Vec<Slice> = slices.to_vec();
    current.sort_by_key(|s| s.members.first().copied().unwrap_or(u32::MAX));

    loop {
        let mut cs_owner: Vec<i64> = vec![-1; points.len()];
        for (si, slice) in current.iter().enumerate() {
            for &m in &slice.consistent {
                cs_owner[m as usize] = si as i64;
            }
        }
        let mut uf = UnionFind::new(current.len());
        let mut merged_any = false;
        for &(i, j) in &pairs {
            let (p, q) = (cs_owner[i as usize], cs_owner[j as usize]);
            if p < 0 || q < 0 || p == q {
                continue;
            }
            let (p, q) = (p as usize, q as usize);
            if normal_deviation(&current[p].normal, &current[q].normal) < theta_merge {
                merged_any |= uf.union(p, q);
            }
        }
        if !merged_any {
            return current;
        }
        let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for (si, slice) in current.iter().enumerate() {
            let root = uf.find(si);
            groups.entry(root).or_default().extend(slice.members.iter().copied());
        }
        current = groups
            .into_values()
            .filter_map(|mut members| {
                members.sort_unstable();
                let (normal, flatness, consistent) = estimate_slice(&positions, &members)?;
                Some(Slice { members, normal, flatness, consistent })
            })
            .collect();
        current.sort_by_key(|s| s.members.first().copied().unwrap_or(u32::MAX));
    }
}

/// Total-least-squares plane through all slice members.
pub fn fit_plane(slice: &Slice, positions: &[Vec3]) -> Result<Plane, PlanarMapError> {
    if slice.members.len() < 3 {
        return Err(PlanarMapError::DegenerateSlice);
    }
    let pca = pca_plane(positions, &slice.members);
    if pca.eigenvalues[1] <= 1e-18 {
        return Err(PlanarMapError::DegenerateSlice);
    }
    Ok(Plane {
        normal: pca.normal,
        tau: -pca.normal.dot(&pca.centroid),
        anchor: pca.centroid,
    })
}

/// Orthonormal in-plane basis. `u` follows the projection of global +z
/// (global +x for near-horizontal planes), `v = n x u`.
#[derive(Debug, Clone, Copy)]
pub struct PlaneBasis {
    pub u: Vec3,
    pub v: Vec3,
}

pub fn plane_basis(plane: &Plane) -> PlaneBasis {
    let n = plane.normal;
    let mut u = Vec3::z() - n.z * n;
    if u.norm() < 1e-6 {
        u = Vec3::x() - n.x * n;
    }
    let u = u.normalize();
    PlaneBasis { u, v: n.cross(&u) }
}

/// Orthogonal projection of the listed points into plane coordinates.
pub fn project_to_plane_2d(
    positions: &[Vec3],
    members: &[u32],
    plane: &Plane,
) -> (Vec<Vec2>, PlaneBasis) {
    let basis = plane_basis(plane);
    let coords = members
        .iter()
        .map(|&i| {
            let d = positions[i as usize] - plane.anchor;
            Vec2::new(d.dot(&basis.u), d.dot(&basis.v))
        })
        .collect();
    (coords, basis)
}

/// Lift plane coordinates back to 3D.
pub fn lift_from_plane(c: &Vec2, plane: &Plane, basis: &PlaneBasis) -> Vec3 {
    plane.anchor + c.x * basis.u + c.y * basis.v
}

#[inline]
fn cross2(o: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Exact sign of the turn o -> a -> b (positive = counterclockwise).
/// Plain f64 cross products are not transitive under rounding for
/// near-collinear fans, which both derails the polar sort and lets the
/// scan strand interior points.
#[inline]
fn orient(o: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    robust::orient2d(
        robust::Coord { x: o.x, y: o.y },
        robust::Coord { x: a.x, y: a.y },
        robust::Coord { x: b.x, y: b.y },
    )
}

/// Convex hull by Graham's scan. Returns indices into `points` in
/// counterclockwise order starting from the pivot (lowest y, then lowest
/// x). Collinear chains keep only their extreme vertices.
pub fn graham_scan(points: &[Vec2]) -> Result<Vec<usize>, PlanarMapError> {
    if points.len() < 3 {
        return Err(PlanarMapError::TooFewPoints(points.len()));
    }
    let pivot = (0..points.len())
        .min_by(|&a, &b| {
            (points[a].y, points[a].x, a)
                .partial_cmp(&(points[b].y, points[b].x, b))
                .unwrap()
        })
        .unwrap();
    let p = points[pivot];

    let mut rest: Vec<usize> = (0..points.len())
        .filter(|&i| i != pivot && (points[i] - p).norm_squared() > 0.0)
        .collect();
    // Polar-angle sort about the pivot; ties (collinear with the pivot) go
    // nearer first so the scan's collinear rule retains the farthest.
    rest.sort_unstable_by(|&a, &b| {
        let cr = orient(&p, &points[a], &points[b]);
        if cr > 0.0 {
            std::cmp::Ordering::Less
        } else if cr < 0.0 {
            std::cmp::Ordering::Greater
        } else {
            let da = (points[a] - p).norm_squared();
            let db = (points[b] - p).norm_squared();
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        }
    });

    let mut stack: Vec<usize> = vec![pivot];
    for &g in &rest {
        loop {
            if stack.len() < 2 {
                stack.push(g);
                break;
            }
            let e = points[stack[stack.len() - 2]];
            let f = points[stack[stack.len() - 1]];
            let cr = orient(&e, &f, &points[g]);
            if cr > 0.0 {
                stack.push(g);
                break;
            } else if cr < 0.0 {
                stack.pop();
            } else {
                // Collinear: retain the extreme point of the chain.
                if (points[g] - e).norm_squared() >= (f - e).norm_squared() {
                    stack.pop();
                } else {
                    break;
                }
            }
        }
    }
    if stack.len() < 3 {
        return Err(PlanarMapError::CollinearInput);
    }
    Ok(stack)
}

/// Drops hull vertices that are within [`COLLINEAR_CLEANUP`] of the line
/// through their neighbors; float roundoff in the projection otherwise
/// leaves strings of near-collinear vertices along straight edges.
fn cleanup_collinear(hull: &mut Vec<Vec2>) {
    let mut changed = true;
    while changed && hull.len() > 3 {
        changed = false;
        let n = hull.len();
        for i in 0..n {
            let prev = hull[(i + n - 1) % n];
            let cur = hull[i];
            let next = hull[(i + 1) % n];
            let len = (next - prev).norm();
            if len == 0.0 {
                continue;
            }
            if (cross2(&prev, &next, &cur) / len).abs() < COLLINEAR_CLEANUP {
                hull.remove(i);
                changed = true;
                break;
            }
        }
    }
}

/// Fit, project, hull and lift every slice into a facet. Slices that fail
/// the plane fit or the hull are skipped.
pub fn build_facets(
    slices: &[Slice],
    points: &[CloudPoint],
    origin: FrameOrigin,
    provenance: impl Into<String>,
) -> PlanarMap {
    let positions: Vec<Vec3> = points.iter().map(|p| p.position).collect();
    let mut facets = Vec::new();
    for (si, slice) in slices.iter().enumerate() {
        let Ok(plane) = fit_plane(slice, &positions) else {
            eprintln!("warning: slice {si} degenerate, skipped");
            continue;
        };
        let (coords, basis) = project_to_plane_2d(&positions, &slice.members, &plane);
        let Ok(hull_idx) = graham_scan(&coords) else {
            eprintln!("warning: slice {si} has no 2D hull, skipped");
            continue;
        };
        let mut hull: Vec<Vec2> = hull_idx.iter().map(|&i| coords[i]).collect();
        cleanup_collinear(&mut hull);
        let boundary: Vec<Vec3> =
            hull.iter().map(|c| lift_from_plane(c, &plane, &basis)).collect();
        facets.push(Facet::new(facets.len() as u32, plane, boundary, si as u32));
    }
    PlanarMap { origin, facets, provenance: provenance.into() }
}

/// Parameters for the cloud-to-map pipeline.
#[derive(Debug, Clone)]
pub struct MapBuildParams {
    pub k: usize,
    /// Minimum slice size after merging; smaller merged slices are
    /// discarded as noise.
    pub min_slice_size: usize,
    /// Slice-merge normal angle threshold (radians).
    pub merge_angle: f64,
    /// Cluster seed threshold before merging. P-Linkage chains terminate
    /// at local flatness minima, so pre-merge clusters are neighborhood
    /// sized; the scale filter proper applies after merging.
    pub seed_slice_size: usize,
    pub flatness_std_multiplier: f64,
}

impl Default for MapBuildParams {
    fn default() -> Self {
        Self {
            k: 30,
            min_slice_size: 200,
            merge_angle: 10f64.to_radians(),
            seed_slice_size: 10,
            flatness_std_multiplier: 1.0,
        }
    }
}

/// Full pipeline: segment, merge to a fixed point, drop merged slices
/// below the scale threshold, and extract facet boundaries. Returns the
/// map together with the segmentation and the final slices (for spacing
/// statistics).
pub fn build_map_from_cloud(
    points: &[CloudPoint],
    params: &MapBuildParams,
    origin: FrameOrigin,
    provenance: impl Into<String>,
) -> Result<(PlanarMap, crate::segmentation::Segmentation, Vec<Slice>), crate::segmentation::SegmentationError>
{
    let seg = crate::segmentation::segment_cloud(
        points,
        &crate::segmentation::SegmentationParams {
            k: params.k,
            min_slice_size: params.seed_slice_size,
            flatness_std_multiplier: params.flatness_std_multiplier,
        },
    )?;
    let merged = merge_slices(&seg.slices, points, &seg.attributes, params.merge_angle);
    let slices: Vec<Slice> = merged
        .into_iter()
        .filter(|s| s.members.len() >= params.min_slice_size)
        .collect();
    let map = build_facets(&slices, points, origin, provenance);
    Ok((map, seg, slices))
}

/// Retains exactly the facets whose height range intersects [lo, hi]. Whole
/// facets are kept or dropped, never clipped, and ids are preserved.
pub fn filter_by_height(map: &PlanarMap, lo: f64, hi: f64) -> PlanarMap {
    PlanarMap {
        origin: map.origin,
        facets: map
            .facets
            .iter()
            .filter(|f| f.height_range.0 <= hi && f.height_range.1 >= lo)
            .cloned()
            .collect(),
        provenance: map.provenance.clone(),
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Nearest same-cluster neighbor distance for every clustered point, with
/// per-cluster and global mean/median summaries. Clusters of size one are
/// skipped.
pub fn spacing_stats(
    slices: &[Slice],
    points: &[CloudPoint],
    neighbors: &NeighborLists,
) -> Option<SpacingStats> {
    let mut cluster_of: Vec<i64> = vec![-1; points.len()];
    for (ci, slice) in slices.iter().enumerate() {
        for &m in &slice.members {
            cluster_of[m as usize] = ci as i64;
        }
    }
    let mut all = Vec::new();
    let mut cluster_means = Vec::new();
    for (ci, slice) in slices.iter().enumerate() {
        if slice.members.len() < 2 {
            continue;
        }
        let mut sum = 0.0;
        for &m in &slice.members {
            let pm = points[m as usize].position;
            let from_knn = neighbors
                .neighbors(m as usize)
                .iter()
                .find(|&&j| cluster_of[j as usize] == ci as i64)
                .map(|&j| (points[j as usize].position - pm).norm());
            // The K lists occasionally hold no same-cluster point for rim
            // members; fall back to an exact scan of the cluster.
            let d = from_knn.unwrap_or_else(|| {
                slice
                    .members
                    .iter()
                    .filter(|&&j| j != m)
                    .map(|&j| (points[j as usize].position - pm).norm())
                    .fold(f64::INFINITY, f64::min)
            });
            sum += d;
            all.push(d);
        }
        cluster_means.push(sum / slice.members.len() as f64);
    }
    if all.is_empty() {
        return None;
    }
    Some(SpacingStats {
        mean_all: all.iter().sum::<f64>() / all.len() as f64,
        median_all: median(all.clone()),
        mean_of_cluster_means: cluster_means.iter().sum::<f64>() / cluster_means.len() as f64,
        median_of_cluster_means: median(cluster_means.clone()),
        sample_count: all.len(),
        cluster_count: cluster_means.len(),
    })
}
