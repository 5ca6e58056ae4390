//! Point-cloud attribute estimation and P-Linkage slice creation.
//!
//! For every point: a PCA plane over the nearest half of its K neighbors
//! gives the normal and the flatness (the smallest covariance eigenvalue),
//! and a scaled-MAD filter over all K orthogonal distances gives the
//! consistent set. Points then link to their best flatter consistent
//! neighbor (the CNP) and clusters grow from flatness-minimal candidate
//! centers.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::frames::Vec3;
use crate::kdtree::KdTree;

/// MAD-to-standard-deviation scale factor.
pub const MAD_SCALE: f64 = 1.4826;
/// Modified z-score bound for consistent-set membership.
pub const CONSISTENCY_BOUND: f64 = 2.5;
/// Covariance middle-eigenvalue floor below which the neighborhood is
/// degenerate (coincident or collinear) and the point is noise.
const DEGENERATE_EIGENVALUE: f64 = 1e-18;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("need more points than neighbors: n = {n}, k = {k}")]
    KTooLarge { n: usize, k: usize },
    #[error("k = {0} too small, need at least 4")]
    KTooSmall(usize),
}

/// One raw sample of the cloud. Ids are dense in [0, N).
#[derive(Debug, Clone, Copy)]
pub struct CloudPoint {
    pub id: u32,
    pub position: Vec3,
}

/// K-nearest-neighbor lists for the whole cloud, flattened with stride `k`.
pub struct NeighborLists {
    k: usize,
    flat: Vec<u32>,
}

impl NeighborLists {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, point: usize) -> &[u32] {
        &self.flat[point * self.k..(point + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }
}

/// Per-point geometric attributes. Sign of the normal is arbitrary; all
/// consumers fold it through absolute dot products.
#[derive(Debug, Clone)]
pub struct PointAttributes {
    pub normal: Vec3,
    /// Smallest covariance eigenvalue (m^2).
    pub flatness: f64,
    /// Consistent set: ids of the MAD-inlier neighbors, ascending.
    pub consistent: Vec<u32>,
}

/// Lookup table built by the linkage stage: per-point CNP link, cluster
/// assignment (filled by slice creation) and flatness.
pub struct LinkageTable {
    pub cnp: Vec<Option<u32>>,
    pub cluster: Vec<Option<u32>>,
    pub flatness: Vec<Option<f64>>,
    pub candidate_centers: Vec<u32>,
    pub flatness_threshold: f64,
}

/// A clustered point set with slice-level attributes re-estimated over all
/// of its members.
#[derive(Debug, Clone)]
pub struct Slice {
    /// Member point ids, ascending.
    pub members: Vec<u32>,
    pub normal: Vec3,
    pub flatness: f64,
    /// Member ids passing the slice-level MAD filter, ascending.
    pub consistent: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct SegmentationParams {
    /// Neighborhood size for attribute estimation.
    pub k: usize,
    /// Clusters below this size are discarded as outlier clusters.
    pub min_slice_size: usize,
    /// Multiplier on the flatness standard deviation in the candidate
    /// center threshold.
    pub flatness_std_multiplier: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self { k: 30, min_slice_size: 200, flatness_std_multiplier: 1.0 }
    }
}

/// K nearest neighbors for every point, ascending by (distance, id).
pub fn knn_index(points: &[CloudPoint], k: usize) -> Result<NeighborLists, SegmentationError> {
    if k < 4 {
        return Err(SegmentationError::KTooSmall(k));
    }
    if k >= points.len() {
        return Err(SegmentationError::KTooLarge { n: points.len(), k });
    }
    let positions: Vec<Vec3> = points.iter().map(|p| p.position).collect();
    let tree = KdTree::build(&positions);
    let lists: Vec<Vec<u32>> = (0..positions.len())
        .into_par_iter()
        .map(|i| tree.knn(&positions[i], k, Some(i as u32)))
        .collect();
    let mut flat = Vec::with_capacity(points.len() * k);
    for l in lists {
        debug_assert_eq!(l.len(), k);
        flat.extend(l);
    }
    Ok(NeighborLists { k, flat })
}

pub(crate) struct PcaPlane {
    pub centroid: Vec3,
    pub normal: Vec3,
    /// Eigenvalues ascending.
    pub eigenvalues: [f64; 3],
}

/// Total-least-squares plane over the listed points: centroid plus the
/// eigenvector of the smallest covariance eigenvalue.
pub(crate) fn pca_plane(positions: &[Vec3], ids: &[u32]) -> PcaPlane {
    let n = ids.len() as f64;
    let mut centroid = Vec3::zeros();
    for &i in ids {
        centroid += positions[i as usize];
    }
    centroid /= n;
    let mut cov = Matrix3::zeros();
    for &i in ids {
        let d = positions[i as usize] - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let normal = eig.eigenvectors.column(order[0]).into_owned().normalize();
    PcaPlane {
        centroid,
        normal,
        eigenvalues: [
            eig.eigenvalues[order[0]].max(0.0),
            eig.eigenvalues[order[1]],
            eig.eigenvalues[order[2]],
        ],
    }
}

/// Outcome of the scaled-MAD consistency filter over a set of orthogonal
/// distances.
#[allow(dead_code)] // median and mad are read by tests
pub(crate) struct MadFilter {
    pub median: f64,
    pub mad: f64,
    pub keep: Vec<bool>,
}

/// Flags the entries whose modified z-score is below [`CONSISTENCY_BOUND`].
/// A zero MAD keeps exactly the entries equal to the median.
pub(crate) fn mad_filter(distances: &[f64]) -> MadFilter {
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = median_of_sorted(&sorted);
    let mut deviations: Vec<f64> = distances.iter().map(|d| (d - median).abs()).collect();
    deviations.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mad = MAD_SCALE * median_of_sorted(&deviations);
    let keep = distances
        .iter()
        .map(|d| {
            let dev = (d - median).abs();
            if mad > 0.0 {
                dev / mad < CONSISTENCY_BOUND
            } else {
                dev == 0.0
            }
        })
        .collect();
    MadFilter { median, mad, keep }
}

fn median_of_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Attributes of one point from its neighbor list: PCA plane over the first
/// floor(K/2) neighbors, consistency filter over all K. Returns `None` for
/// degenerate (noise) neighborhoods.
pub fn estimate_attributes(
    positions: &[Vec3],
    neighbors: &[u32],
) -> Option<PointAttributes> {
    let half = neighbors.len() / 2;
    let plane = pca_plane(positions, &neighbors[..half]);
    if plane.eigenvalues[1] <= DEGENERATE_EIGENVALUE {
        return None;
    }
    let distances: Vec<f64> = neighbors
        .iter()
        .map(|&j| (positions[j as usize] - plane.centroid).dot(&plane.normal).abs())
        .collect();
    let filter = mad_filter(&distances);
    let mut consistent: Vec<u32> = neighbors
        .iter()
        .zip(&filter.keep)
        .filter(|(_, keep)| **keep)
        .map(|(&j, _)| j)
        .collect();
    if consistent.is_empty() {
        return None;
    }
    consistent.sort_unstable();
    Some(PointAttributes { normal: plane.normal, flatness: plane.eigenvalues[0], consistent })
}

/// Attributes for every point in parallel; `None` marks noise points.
pub fn estimate_attributes_all(
    points: &[CloudPoint],
    neighbors: &NeighborLists,
) -> Vec<Option<PointAttributes>> {
    let positions: Vec<Vec3> = points.iter().map(|p| p.position).collect();
    (0..points.len())
        .into_par_iter()
        .map(|i| estimate_attributes(&positions, neighbors.neighbors(i)))
        .collect()
}

/// Flatness ordering key. The id tiebreak makes the order strict even on
/// exact planes where every flatness ties at zero.
#[inline]
fn flatter(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Folded angular deviation between two unit normals.
#[inline]
pub fn normal_deviation(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).abs().clamp(0.0, 1.0).acos()
}

/// Link every point to its CNP: the consistent-set neighbor that is flatter
/// (in (flatness, id) order) with minimal normal deviation, ties to the
/// lower id. Candidate centers have no CNP and flatness within the global
/// mean-plus-std threshold.
pub fn build_linkage(
    attrs: &[Option<PointAttributes>],
    std_multiplier: f64,
) -> LinkageTable {
    let n = attrs.len();
    let cnp: Vec<Option<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = attrs[i].as_ref()?;
            let own = (a.flatness, i as u32);
            let mut best: Option<(f64, u32)> = None;
            for &j in &a.consistent {
                let Some(b) = attrs[j as usize].as_ref() else { continue };
                if !flatter((b.flatness, j), own) {
                    continue;
                }
                let dev = normal_deviation(&a.normal, &b.normal);
                if best.is_none_or(|cur| (dev, j) < cur) {
                    best = Some((dev, j));
                }
            }
            best.map(|(_, j)| j)
        })
        .collect();

    let lambdas: Vec<f64> = attrs
        .iter()
        .filter_map(|a| a.as_ref().map(|a| a.flatness))
        .collect();
    let mean = lambdas.iter().sum::<f64>() / lambdas.len().max(1) as f64;
    let std = if lambdas.len() > 1 {
        let var = lambdas.iter().map(|l| (l - mean).powi(2)).sum::<f64>()
            / (lambdas.len() - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    let threshold = mean + std_multiplier * std;

    let candidate_centers: Vec<u32> = (0..n)
        .filter(|&i| {
            cnp[i].is_none()
                && attrs[i].as_ref().is_some_and(|a| a.flatness <= threshold)
        })
        .map(|i| i as u32)
        .collect();

    LinkageTable {
        cnp,
        cluster: vec![None; n],
        flatness: attrs.iter().map(|a| a.as_ref().map(|a| a.flatness)).collect(),
        candidate_centers,
        flatness_threshold: threshold,
    }
}

/// Slice-level attributes: same PCA/MAD procedure as points, over all
/// members.
pub(crate) fn estimate_slice(positions: &[Vec3], members: &[u32]) -> Option<(Vec3, f64, Vec<u32>)> {
    if members.len() < 3 {
        return None;
    }
    let plane = pca_plane(positions, members);
    if plane.eigenvalues[1] <= DEGENERATE_EIGENVALUE {
        return None;
    }
    let distances: Vec<f64> = members
        .iter()
        .map(|&i| (positions[i as usize] - plane.centroid).dot(&plane.normal).abs())
        .collect();
    let filter = mad_filter(&distances);
    let consistent: Vec<u32> = members
        .iter()
        .zip(&filter.keep)
        .filter(|(_, keep)| **keep)
        .map(|(&i, _)| i)
        .collect();
    Some((plane.normal, plane.eigenvalues[0], consistent))
}

/// Grow clusters from the candidate centers along CNP chains, discard those
/// below `min_slice_size`, and re-estimate attributes per surviving slice.
/// Fills the cluster column of the table.
pub fn create_slices(
    table: &mut LinkageTable,
    points: &[CloudPoint],
    min_slice_size: usize,
) -> Vec<Slice> {
    let n = table.cnp.len();
    // Root of every CNP chain, memoized. Chains strictly descend the
    // (flatness, id) order, so they terminate.
    let mut root: Vec<i64> = vec![-1; n];
    for start in 0..n {
        if table.flatness[start].is_none() {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = start;
        let terminal = loop {
            if root[cur] >= 0 {
                break root[cur];
            }
            match table.cnp[cur] {
                Some(next) => {
                    path.push(cur);
                    cur = next as usize;
                }
                None => break cur as i64,
            }
        };
        root[cur] = terminal;
        for p in path {
            root[p] = terminal;
        }
    }

    let center_set: std::collections::HashSet<u32> =
        table.candidate_centers.iter().copied().collect();
    let mut by_center: std::collections::BTreeMap<u32, Vec<u32>> = Default::default();
    for (i, terminal) in root.iter().enumerate() {
        if table.flatness[i].is_none() {
            continue;
        }
        let r = *terminal as u32;
        if center_set.contains(&r) {
            by_center.entry(r).or_default().push(i as u32);
        }
    }

    let positions: Vec<Vec3> = points.iter().map(|p| p.position).collect();
    let mut slices = Vec::new();
    for (_, members) in by_center {
        if members.len() < min_slice_size {
            continue;
        }
        let Some((normal, flatness, consistent)) = estimate_slice(&positions, &members) else {
            continue;
        };
        let cluster_id = slices.len() as u32;
        for &m in &members {
            table.cluster[m as usize] = Some(cluster_id);
        }
        slices.push(Slice { members, normal, flatness, consistent });
    }
    slices
}

/// Full segmentation result.
pub struct Segmentation {
    pub neighbors: NeighborLists,
    pub attributes: Vec<Option<PointAttributes>>,
    pub linkage: LinkageTable,
    pub slices: Vec<Slice>,
}

/// Runs knn, attribute estimation, linkage and slice creation in sequence.
pub fn segment_cloud(
    points: &[CloudPoint],
    params: &SegmentationParams,
) -> Result<Segmentation, SegmentationError> {
    let neighbors = knn_index(points, params.k)?;
    let attributes = estimate_attributes_all(points, &neighbors);
    let mut linkage = build_linkage(&attributes, params.flatness_std_multiplier);
    let slices = create_slices(&mut linkage, points, params.min_slice_size);
    Ok(Segmentation { neighbors, attributes, linkage, slices })
}
