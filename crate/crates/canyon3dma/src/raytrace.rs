//! Image-method ray tracing against the planar map: direct-path blockage,
//! mirror-point reflections, the angle-sum containment test, per-signal
//! LOS/NLOS classification and reflection delays.

use rayon::prelude::*;
use std::collections::HashMap;

use crate::frames::Vec3;
use crate::planar_map::{Facet, PlanarMap};

/// A ray closer than this to a facet boundary edge or vertex counts as
/// inside (inclusive boundary).
pub const EDGE_INCLUSIVE: f64 = 1e-9;
/// Angle-sum decision tolerance (rad).
const ANGLE_SUM_TOL: f64 = 1e-6;
/// Rays are parallel to a plane when |(R-S).n| is below this fraction of
/// the segment length.
const PARALLEL_EPS: f64 = 1e-12;

/// Satellite position at one epoch, enu-frame meters.
#[derive(Debug, Clone)]
pub struct SatEpoch {
    pub prn: String,
    pub epoch: f64,
    pub position: Vec3,
}

/// Receiver position at one epoch, enu-frame meters.
#[derive(Debug, Clone, Copy)]
pub struct ReceiverEpoch {
    pub epoch: f64,
    pub position: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Los,
    Blocked,
    Nlos,
    LosPlusNlos,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Los => "LOS",
            Classification::Blocked => "Blocked",
            Classification::Nlos => "NLOS",
            Classification::LosPlusNlos => "LOS+NLOS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "LOS" => Some(Classification::Los),
            "Blocked" => Some(Classification::Blocked),
            "NLOS" => Some(Classification::Nlos),
            "LOS+NLOS" => Some(Classification::LosPlusNlos),
            _ => None,
        }
    }
}

/// One specular reflection of the signal off a facet.
#[derive(Debug, Clone)]
pub struct Reflection {
    pub facet: u32,
    /// Receiver mirrored through the facet plane.
    pub mirror: Vec3,
    /// Reflection point on the facet.
    pub point: Vec3,
    /// Excess path length over the direct distance (m).
    pub delay: f64,
    /// True when another facet blocks the reflected path; occluded
    /// reflections are reported but never used for correction.
    pub occluded: bool,
}

/// Classification of one (satellite, epoch) signal against the map.
#[derive(Debug, Clone)]
pub struct RayPath {
    pub prn: String,
    pub epoch: f64,
    pub classification: Classification,
    pub blocking: Vec<u32>,
    pub reflections: Vec<Reflection>,
    /// Delay selected for pseudorange correction; zero unless NLOS.
    pub applied_delay: f64,
}

/// Selection rule when several facets reflect the same signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DelayPolicy {
    /// Shortest excess path (the default: it dominates the correlator).
    #[default]
    Min,
    Max,
    /// Keep the minimum for correction but emit one output row per
    /// reflection in the trace table.
    All,
}

impl DelayPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            DelayPolicy::Min => "min",
            DelayPolicy::Max => "max",
            DelayPolicy::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "min" => Some(DelayPolicy::Min),
            "max" => Some(DelayPolicy::Max),
            "all" => Some(DelayPolicy::All),
            _ => None,
        }
    }
}

fn bbox_rejects(facet: &Facet, q: &Vec3) -> bool {
    const M: f64 = 1e-6;
    q.x < facet.bbox_min.x - M
        || q.y < facet.bbox_min.y - M
        || q.z < facet.bbox_min.z - M
        || q.x > facet.bbox_max.x + M
        || q.y > facet.bbox_max.y + M
        || q.z > facet.bbox_max.z + M
}

fn point_segment_dist2(q: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((q - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (q - (a + t * ab)).norm_squared()
}

/// Angle-sum containment of a point known to lie on the facet plane: the
/// directed angles around the counterclockwise boundary total 2*pi inside
/// and 0 outside. Points within [`EDGE_INCLUSIVE`] of the boundary are
/// inside.
pub fn point_in_facet(q: &Vec3, facet: &Facet) -> bool {
    let verts = &facet.boundary;
    let n = verts.len();
    for i in 0..n {
        if point_segment_dist2(q, &verts[i], &verts[(i + 1) % n]) <= EDGE_INCLUSIVE * EDGE_INCLUSIVE {
            return true;
        }
    }
    let mut sum = 0.0;
    for i in 0..n {
        let a = verts[i] - q;
        let b = verts[(i + 1) % n] - q;
        sum += a.cross(&b).dot(&facet.plane.normal).atan2(a.dot(&b));
    }
    let total = sum.abs();
    if (total - std::f64::consts::TAU).abs() < ANGLE_SUM_TOL {
        true
    } else if total < ANGLE_SUM_TOL {
        false
    } else {
        total > std::f64::consts::PI
    }
}

/// Intersection of the open segment S->R with the facet, if any: the
/// signed parameter t = ((A-S).n)/((R-S).n) must fall in (0, 1) and the
/// crossing point must pass the containment test.
pub fn direct_blocked(s: &Vec3, r: &Vec3, facet: &Facet) -> Option<Vec3> {
    let seg = r - s;
    let denom = seg.dot(&facet.plane.normal);
    if denom.abs() < PARALLEL_EPS * seg.norm() {
        return None;
    }
    let t = (facet.plane.anchor - s).dot(&facet.plane.normal) / denom;
    if t <= 0.0 || t >= 1.0 {
        return None;
    }
    let q = s + t * seg;
    if bbox_rejects(facet, &q) || !point_in_facet(&q, facet) {
        return None;
    }
    Some(q)
}

/// Receiver mirrored through the facet plane: R' = R + 2((A-R).n)n.
pub fn mirror_point(r: &Vec3, facet: &Facet) -> Vec3 {
    let n = facet.plane.normal;
    r + 2.0 * (facet.plane.anchor - r).dot(&n) * n
}

/// Specular reflection of S->R off the facet via the mirror construction,
/// if the geometry admits one: S and R on the same side, the segment
/// S->R' crossing the plane inside the boundary. Returns (mirror point,
/// reflection point, delay).
pub fn reflection_path(s: &Vec3, r: &Vec3, facet: &Facet) -> Option<(Vec3, Vec3, f64)> {
    let n = facet.plane.normal;
    let side_s = (s - facet.plane.anchor).dot(&n);
    let side_r = (r - facet.plane.anchor).dot(&n);
    if side_s * side_r < 0.0 {
        return None;
    }
    let mirror = mirror_point(r, facet);
    let seg = mirror - s;
    let denom = seg.dot(&n);
    if denom.abs() < PARALLEL_EPS * seg.norm() {
        return None;
    }
    let t = (facet.plane.anchor - s).dot(&n) / denom;
    // Closed at 1: a receiver sitting on the facet reflects at itself with
    // zero delay.
    if t <= 0.0 || t > 1.0 + 1e-12 {
        return None;
    }
    let q = s + t * seg;
    if bbox_rejects(facet, &q) || !point_in_facet(&q, facet) {
        return None;
    }
    // The path sum ||Q'-S|| + ||R-Q'|| - ||R-S|| equals ||R'-S|| - ||R-S||
    // by the image construction; evaluate that difference as a quotient.
    // Subtracting ~1e7 m norms directly would lose the delay's fine digits
    // to rounding at satellite ranges.
    let direct = r - s;
    let delay = (mirror - r).dot(&(seg + direct)) / (seg.norm() + direct.norm());
    debug_assert!(
        {
            let naive = (q - s).norm() + (r - q).norm() - direct.norm();
            (delay - naive).abs() < 1e-9f64.max(16.0 * f64::EPSILON * seg.norm())
        },
        "mirror path-length identity violated"
    );
    Some((mirror, q, delay))
}

/// Classify one signal against every facet of the map.
pub fn classify(
    prn: &str,
    epoch: f64,
    s: &Vec3,
    r: &Vec3,
    map: &PlanarMap,
    policy: DelayPolicy,
) -> RayPath {
    let mut blocking = Vec::new();
    let mut reflections = Vec::new();
    for facet in &map.facets {
        if direct_blocked(s, r, facet).is_some() {
            blocking.push(facet.id);
        }
        if let Some((mirror, q, delay)) = reflection_path(s, r, facet) {
            let occluded = map.facets.iter().any(|other| {
                other.id != facet.id
                    && (direct_blocked(s, &q, other).is_some()
                        || direct_blocked(&q, r, other).is_some())
            });
            reflections.push(Reflection { facet: facet.id, mirror, point: q, delay, occluded });
        }
    }
    let usable: Vec<&Reflection> = reflections.iter().filter(|x| !x.occluded).collect();
    let classification = match (blocking.is_empty(), reflections.is_empty(), usable.is_empty()) {
        (true, true, _) => Classification::Los,
        (true, false, _) => Classification::LosPlusNlos,
        (false, _, false) => Classification::Nlos,
        (false, _, true) => Classification::Blocked,
    };
    let applied_delay = if classification == Classification::Nlos {
        match policy {
            DelayPolicy::Min | DelayPolicy::All => usable
                .iter()
                .map(|x| (x.delay, x.facet))
                .min_by(|a, b| a.partial_cmp(b).unwrap())
                .map(|(d, _)| d)
                .unwrap_or(0.0),
            DelayPolicy::Max => usable
                .iter()
                .map(|x| (x.delay, std::cmp::Reverse(x.facet)))
                .max_by(|a, b| a.partial_cmp(b).unwrap())
                .map(|(d, _)| d)
                .unwrap_or(0.0),
        }
    } else {
        0.0
    };
    RayPath {
        prn: prn.to_string(),
        epoch,
        classification,
        blocking,
        reflections,
        applied_delay,
    }
}

/// Result of tracing a satellite table against a receiver route.
pub struct TraceRun {
    /// Epoch-major, prn-minor.
    pub rows: Vec<RayPath>,
    /// Satellite rows with no matching route epoch.
    pub skipped: usize,
}

/// Classify every (prn, epoch) pair present in both tables. Rows are
/// processed in parallel but emitted in deterministic (epoch, prn) order.
pub fn trace_run(
    sats: &[SatEpoch],
    route: &[ReceiverEpoch],
    map: &PlanarMap,
    policy: DelayPolicy,
) -> TraceRun {
    let positions: HashMap<u64, Vec3> =
        route.iter().map(|r| (r.epoch.to_bits(), r.position)).collect();
    let mut jobs: Vec<(&SatEpoch, Vec3)> = Vec::with_capacity(sats.len());
    let mut skipped = 0;
    for sat in sats {
        match positions.get(&sat.epoch.to_bits()) {
            Some(&r) => jobs.push((sat, r)),
            None => skipped += 1,
        }
    }
    jobs.sort_by(|a, b| {
        a.0.epoch
            .partial_cmp(&b.0.epoch)
            .unwrap()
            .then_with(|| a.0.prn.cmp(&b.0.prn))
    });
    let rows = jobs
        .par_iter()
        .map(|(sat, r)| classify(&sat.prn, sat.epoch, &sat.position, r, map, policy))
        .collect();
    TraceRun { rows, skipped }
}
