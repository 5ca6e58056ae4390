//! Synthetic urban-canyon scenes with exact ground truth, plus the
//! brute-force oracles used by tests and the acceptance suite.
//!
//! The oracles re-derive every geometric answer from scratch on plain
//! scalar triples (segment-triangle walks over dense wall triangulations,
//! exhaustive hull edge tests, exhaustive neighbor scans) and share no
//! geometry code with the production modules they check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frames::Vec3;
use crate::planar_map::{Facet, Plane};
use crate::raytrace::Classification;
use crate::segmentation::CloudPoint;

/// One generating wall: a vertical rectangle, possibly yawed about its
/// center.
#[derive(Debug, Clone)]
pub struct WallSpec {
    /// Center of the wall base line.
    pub base_center: Vec3,
    /// Yaw of the wall line from the +y street axis (rad).
    pub yaw: f64,
    pub length: f64,
    pub height: f64,
}

impl WallSpec {
    /// Base corners c0 -> c1 along the wall line.
    fn base_corners(&self) -> (Vec3, Vec3) {
        let dir = Vec3::new(-self.yaw.sin(), self.yaw.cos(), 0.0);
        (
            self.base_center - dir * (self.length / 2.0),
            self.base_center + dir * (self.length / 2.0),
        )
    }

    /// Unit normal pointing toward the street centerline (x = 0).
    fn street_normal(&self) -> Vec3 {
        let dir = Vec3::new(-self.yaw.sin(), self.yaw.cos(), 0.0);
        let n = dir.cross(&Vec3::z());
        if n.dot(&-self.base_center) >= 0.0 {
            n.normalize()
        } else {
            -n.normalize()
        }
    }
}

/// A generating plane with its rectangular extent, counterclockwise about
/// the normal.
#[derive(Debug, Clone)]
pub struct TruthFacet {
    pub normal: Vec3,
    pub anchor: Vec3,
    pub corners: [Vec3; 4],
}

impl TruthFacet {
    pub fn from_wall(wall: &WallSpec) -> Self {
        let (c0, c1) = wall.base_corners();
        let up = Vec3::z() * wall.height;
        let normal = wall.street_normal();
        let mut corners = [c0, c1, c1 + up, c0 + up];
        let winding = (corners[1] - corners[0])
            .cross(&(corners[2] - corners[0]))
            .dot(&normal);
        if winding < 0.0 {
            corners.reverse();
        }
        let anchor = (c0 + c1) / 2.0 + up / 2.0;
        Self { normal, anchor, corners }
    }
}

/// One scheduled NLOS event: this signal arrives via the given facet with
/// exactly this extra path length.
#[derive(Debug, Clone)]
pub struct NlosInjection {
    pub epoch: f64,
    pub prn: String,
    pub facet: u32,
    pub delay: f64,
}

/// Ground truth for a generated scene.
#[derive(Debug, Clone, Default)]
pub struct SceneTruth {
    pub walls: Vec<TruthFacet>,
    /// Generating wall index per cloud point.
    pub labels: Vec<u32>,
    pub schedule: Vec<NlosInjection>,
}

#[derive(Debug, Clone)]
pub struct CanyonSceneParams {
    pub n_buildings: usize,
    pub street_width: f64,
    pub noise_sigma: f64,
    /// Points per square meter of wall.
    pub density: f64,
    pub seed: u64,
    pub building_length: (f64, f64),
    pub building_height: (f64, f64),
    /// Gap between consecutive buildings on a side.
    pub gap: f64,
    /// Every second building gets a uniform random yaw up to this (rad).
    pub max_yaw: f64,
}

impl Default for CanyonSceneParams {
    fn default() -> Self {
        Self {
            n_buildings: 6,
            street_width: 40.0,
            noise_sigma: 0.05,
            density: 50.0,
            seed: 1,
            building_length: (18.0, 28.0),
            building_height: (25.0, 60.0),
            gap: 6.0,
            max_yaw: 12f64.to_radians(),
        }
    }
}

/// Stratified wall sampling: round(area * density) points on a jittered
/// raster grid, plus Gaussian off-plane noise. Deterministic under the
/// rng state.
pub fn sample_walls(
    walls: &[WallSpec],
    density: f64,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<CloudPoint>, Vec<u32>) {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (wi, wall) in walls.iter().enumerate() {
        let (c0, _) = wall.base_corners();
        let dir = Vec3::new(-wall.yaw.sin(), wall.yaw.cos(), 0.0);
        let normal = wall.street_normal();
        let area = wall.length * wall.height;
        let n = (area * density).round() as usize;
        let nx = ((wall.length * density.sqrt()).round() as usize).max(1);
        let ny = n.div_ceil(nx);
        let mut emitted = 0;
        'rows: for r in 0..ny {
            for c in 0..nx {
                if emitted == n {
                    break 'rows;
                }
                let s = (c as f64 + rng.gen::<f64>()) / nx as f64;
                let t = (r as f64 + rng.gen::<f64>()) / ny as f64;
                let off = if noise_sigma > 0.0 {
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * noise_sigma
                } else {
                    0.0
                };
                let p = c0 + dir * (s * wall.length) + Vec3::z() * (t * wall.height)
                    + normal * off;
                points.push(CloudPoint { id: points.len() as u32, position: p });
                labels.push(wi as u32);
                emitted += 1;
            }
        }
    }
    (points, labels)
}

/// Lays out `n_buildings` walls alternating street sides and generates the
/// sampled cloud with per-point labels.
pub fn generate_canyon(params: &CanyonSceneParams) -> (Vec<CloudPoint>, SceneTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut cursor = [0.0f64; 2];
    let mut walls = Vec::with_capacity(params.n_buildings);
    for i in 0..params.n_buildings {
        let side = i % 2;
        let length = rng.gen_range(params.building_length.0..=params.building_length.1);
        let height = rng.gen_range(params.building_height.0..=params.building_height.1);
        let yaw = if i % 2 == 1 && params.max_yaw > 0.0 {
            rng.gen_range(-params.max_yaw..params.max_yaw)
        } else {
            0.0
        };
        let x = if side == 0 { params.street_width / 2.0 } else { -params.street_width / 2.0 };
        let y = cursor[side] + length / 2.0;
        cursor[side] += length + params.gap;
        walls.push(WallSpec {
            base_center: Vec3::new(x, y, 0.0),
            yaw,
            length,
            height,
        });
    }
    let (points, labels) = sample_walls(&walls, params.density, params.noise_sigma, &mut rng);
    let truth = SceneTruth {
        walls: walls.iter().map(TruthFacet::from_wall).collect(),
        labels,
        schedule: Vec::new(),
    };
    (points, truth)
}

/// Production facets constructed directly from the truth rectangles
/// (plumbing for oracle-vs-production comparisons on identical geometry).
pub fn truth_to_facets(truth: &SceneTruth) -> Vec<Facet> {
    truth
        .walls
        .iter()
        .enumerate()
        .map(|(i, w)| {
            Facet::new(
                i as u32,
                Plane { normal: w.normal, tau: -w.normal.dot(&w.anchor), anchor: w.anchor },
                w.corners.to_vec(),
                i as u32,
            )
        })
        .collect()
}

// ---------------------------------------------------------------------
// Brute-force oracles on scalar triples.
// ---------------------------------------------------------------------

type P3 = [f64; 3];

fn p3(v: &Vec3) -> P3 {
    [v.x, v.y, v.z]
}

fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: P3, b: P3) -> P3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: P3, s: f64) -> P3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: P3, b: P3) -> P3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: P3) -> f64 {
    dot(a, a).sqrt()
}

struct Triangle(P3, P3, P3);

/// Dense triangulation of a truth rectangle: a grid of cells at roughly
/// 1.5 m pitch (capped), two triangles per cell.
fn triangulate(wall: &TruthFacet) -> Vec<Triangle> {
    let c = &wall.corners;
    let eu = sub(p3(&c[1]), p3(&c[0]));
    let ev = sub(p3(&c[3]), p3(&c[0]));
    let nu = ((norm(eu) / 1.5).ceil() as usize).clamp(1, 48);
    let nv = ((norm(ev) / 1.5).ceil() as usize).clamp(1, 48);
    let mut tris = Vec::with_capacity(2 * nu * nv);
    let at = |i: usize, j: usize| {
        add(
            p3(&c[0]),
            add(scale(eu, i as f64 / nu as f64), scale(ev, j as f64 / nv as f64)),
        )
    };
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, cc, d) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
            tris.push(Triangle(a, b, cc));
            tris.push(Triangle(a, cc, d));
        }
    }
    tris
}

/// Moller-Trumbore segment/triangle intersection, inclusive at shared
/// grid edges.
fn segment_hits_triangle(p0: P3, p1: P3, tri: &Triangle) -> bool {
    const EPS: f64 = 1e-9;
    let dir = sub(p1, p0);
    let e1 = sub(tri.1, tri.0);
    let e2 = sub(tri.2, tri.0);
    let pvec = cross(dir, e2);
    let det = dot(e1, pvec);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let tvec = sub(p0, tri.0);
    let u = dot(tvec, pvec) * inv;
    if !(-EPS..=1.0 + EPS).contains(&u) {
        return false;
    }
    let qvec = cross(tvec, e1);
    let v = dot(dir, qvec) * inv;
    if v < -EPS || u + v > 1.0 + EPS {
        return false;
    }
    let t = dot(e2, qvec) * inv;
    t > 0.0 && t < 1.0
}

fn segment_hits_wall(p0: P3, p1: P3, tris: &[Triangle]) -> bool {
    tris.iter().any(|t| segment_hits_triangle(p0, p1, t))
}

/// Distance from a point to the rectangle's boundary edges.
fn boundary_distance(q: P3, wall: &TruthFacet) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let a = p3(&wall.corners[i]);
        let b = p3(&wall.corners[(i + 1) % 4]);
        let ab = sub(b, a);
        let len2 = dot(ab, ab);
        let t = if len2 > 0.0 { (dot(sub(q, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let d = norm(sub(q, add(a, scale(ab, t))));
        best = best.min(d);
    }
    best
}

/// Oracle answer for one signal.
#[derive(Debug, Clone)]
pub struct OracleVerdict {
    pub classification: Classification,
    pub blocking: Vec<u32>,
    /// (facet, delay, occluded) per reflecting wall.
    pub reflections: Vec<(u32, f64, bool)>,
    pub applied_delay: f64,
    /// The ray passed within the boundary shell of some wall; comparisons
    /// against production should skip this case.
    pub grazing: bool,
}

/// Marks the case grazing when the segment's plane crossing lands within
/// `shell` of the wall boundary, or skims an endpoint of the segment while
/// inside the wall.
fn crossing_grazes(p0: P3, p1: P3, wall: &TruthFacet, shell: f64) -> bool {
    let n = p3(&wall.normal);
    let a = p3(&wall.anchor);
    let seg = sub(p1, p0);
    let denom = dot(seg, n);
    if denom.abs() < 1e-12 * norm(seg).max(1.0) {
        return false;
    }
    let t = dot(sub(a, p0), n) / denom;
    if !(-1e-9..=1.0 + 1e-9).contains(&t) {
        return false;
    }
    let q = add(p0, scale(seg, t));
    if boundary_distance(q, wall) < shell {
        return true;
    }
    if t.abs() < 1e-9 || (t - 1.0).abs() < 1e-9 {
        let c0 = p3(&wall.corners[0]);
        let eu = sub(p3(&wall.corners[1]), c0);
        let ev = sub(p3(&wall.corners[3]), c0);
        let qu = dot(sub(q, c0), eu) / dot(eu, eu);
        let qv = dot(sub(q, c0), ev) / dot(ev, ev);
        return (-0.01..=1.01).contains(&qu) && (-0.01..=1.01).contains(&qv);
    }
    false
}

/// Exhaustive classification of one signal against the truth scene:
/// triangulated blockage, mirror reflections with exact rectangle
/// containment, occlusion of reflected legs, and the same selection policy
/// as the production tracer (minimum usable delay).
pub fn oracle_classify(s: &Vec3, r: &Vec3, truth: &SceneTruth, shell: f64) -> OracleVerdict {
    let sp = p3(s);
    let rp = p3(r);
    let tris: Vec<Vec<Triangle>> = truth.walls.iter().map(triangulate).collect();
    let mut grazing = false;
    let mut blocking = Vec::new();
    for (wi, wall) in truth.walls.iter().enumerate() {
        grazing |= crossing_grazes(sp, rp, wall, shell);
        if segment_hits_wall(sp, rp, &tris[wi]) {
            blocking.push(wi as u32);
        }
    }

    let mut reflections = Vec::new();
    for (wi, wall) in truth.walls.iter().enumerate() {
        let n = p3(&wall.normal);
        let a = p3(&wall.anchor);
        let side_s = dot(sub(sp, a), n);
        let side_r = dot(sub(rp, a), n);
        if side_s.abs() < 1e-9 || side_r.abs() < 1e-9 {
            grazing = true;
        }
        if side_s * side_r < 0.0 {
            continue;
        }
        let mirror = add(rp, scale(n, 2.0 * dot(sub(a, rp), n)));
        let seg = sub(mirror, sp);
        let denom = dot(seg, n);
        if denom.abs() < 1e-12 * norm(seg).max(1.0) {
            continue;
        }
        let t = dot(sub(a, sp), n) / denom;
        if t <= 0.0 || t > 1.0 + 1e-12 {
            continue;
        }
        let q = add(sp, scale(seg, t));
        if boundary_distance(q, wall) < shell {
            grazing = true;
        }
        // Exact containment in the rectangle's own parameterization.
        let c0 = p3(&wall.corners[0]);
        let eu = sub(p3(&wall.corners[1]), c0);
        let ev = sub(p3(&wall.corners[3]), c0);
        let qu = dot(sub(q, c0), eu) / dot(eu, eu);
        let qv = dot(sub(q, c0), ev) / dot(ev, ev);
        if !(0.0..=1.0).contains(&qu) || !(0.0..=1.0).contains(&qv) {
            continue;
        }
        let mut occluded = false;
        for (oi, other) in truth.walls.iter().enumerate() {
            if oi == wi {
                continue;
            }
            grazing |= crossing_grazes(sp, q, other, shell);
            grazing |= crossing_grazes(q, rp, other, shell);
            if segment_hits_wall(sp, q, &tris[oi]) || segment_hits_wall(q, rp, &tris[oi]) {
                occluded = true;
            }
        }
        let delay = norm(sub(q, sp)) + norm(sub(rp, q)) - norm(sub(rp, sp));
        reflections.push((wi as u32, delay, occluded));
    }

    let usable: Vec<&(u32, f64, bool)> = reflections.iter().filter(|x| !x.2).collect();
    let classification = match (blocking.is_empty(), reflections.is_empty(), usable.is_empty()) {
        (true, true, _) => Classification::Los,
        (true, false, _) => Classification::LosPlusNlos,
        (false, _, false) => Classification::Nlos,
        (false, _, true) => Classification::Blocked,
    };
    let applied_delay = if classification == Classification::Nlos {
        usable
            .iter()
            .map(|x| (x.1, x.0))
            .min_by(|a, b| a.partial_cmp(b).unwrap())
            .map(|(d, _)| d)
            .unwrap_or(0.0)
    } else {
        0.0
    };
    OracleVerdict { classification, blocking, reflections, applied_delay, grazing }
}

/// O(n^3) convex hull: a directed pair is a hull edge when every other
/// point lies strictly to its left or on the closed segment. Returns the
/// sorted set of hull vertex indices.
pub fn oracle_hull(points: &[crate::planar_map::Vec2]) -> Vec<usize> {
    let n = points.len();
    let mut on_hull = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let e = points[j] - points[i];
            let mut edge = true;
            for (k, p) in points.iter().enumerate() {
                if k == i || k == j {
                    continue;
                }
                let w = p - points[i];
                let cr = e.x * w.y - e.y * w.x;
                if cr < 0.0 {
                    edge = false;
                    break;
                }
                if cr == 0.0 {
                    let t = w.dot(&e);
                    if t < 0.0 || t > e.norm_squared() {
                        edge = false;
                        break;
                    }
                }
            }
            if edge {
                on_hull[i] = true;
                on_hull[j] = true;
            }
        }
    }
    (0..n).filter(|&i| on_hull[i]).collect()
}

/// O(N^2) exhaustive k-nearest-neighbors, ascending by (distance, id).
pub fn oracle_knn(points: &[Vec3], k: usize) -> Vec<Vec<u32>> {
    (0..points.len())
        .map(|i| {
            let mut all: Vec<(f64, u32)> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, p)| {
                    let dx = points[i].x - p.x;
                    let dy = points[i].y - p.y;
                    let dz = points[i].z - p.z;
                    (dx * dx + dy * dy + dz * dz, j as u32)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all.truncate(k);
            all.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}
