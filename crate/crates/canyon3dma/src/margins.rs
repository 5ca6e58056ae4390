//! Complexity-control analyses: reflection-point height on the canyon
//! walls, the synthetic Walker constellation sweep, and the maximum wall
//! translation / tilt errors that keep the reflection height within a
//! tolerance band.
//!
//! The closed-form margin expressions are evaluated verbatim for
//! reproduction, but the perturbation-search oracles (bisection on the
//! actual mirror geometry) are the authority; both are reported.

use nalgebra::Matrix3;

use crate::frames::{ecef_to_enu, elevation_from_enu, FrameOrigin, Vec3};
use crate::raytrace::SatEpoch;

/// Earth rotation rate (rad/s).
const OMEGA_EARTH: f64 = 7.292_115_146_7e-5;
/// Earth gravitational parameter (m^3/s^2).
const MU_EARTH: f64 = 3.986_004_418e14;

/// Which canyon wall the reflection is computed for. The minus wall is
/// handled by mirroring the scene in x rather than re-deriving signed
/// formula variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WallSide {
    Plus,
    Minus,
}

impl WallSide {
    pub fn as_str(&self) -> &'static str {
        match self {
            WallSide::Plus => "+",
            WallSide::Minus => "-",
        }
    }
}

/// Street canyon: walls at x = +-width/2, vehicle at (a, b, c).
#[derive(Debug, Clone, Copy)]
pub struct CanyonConfig {
    pub street_width: f64,
    pub vehicle: Vec3,
    pub side: WallSide,
}

impl CanyonConfig {
    pub fn new(street_width: f64, vehicle: Vec3, side: WallSide) -> Self {
        assert!(street_width > 0.0, "street width must be positive");
        assert!(
            vehicle.x.abs() < street_width / 2.0,
            "vehicle must sit between the walls"
        );
        Self { street_width, vehicle, side }
    }

    /// Satellite position and vehicle x in the +wall frame (mirrored when
    /// the minus wall is selected).
    fn plus_frame(&self, sat: &Vec3) -> (Vec3, f64) {
        match self.side {
            WallSide::Plus => (*sat, self.vehicle.x),
            WallSide::Minus => (Vec3::new(-sat.x, sat.y, sat.z), -self.vehicle.x),
        }
    }
}

/// Reflection-point height on the wall from the closed-form quotient: the
/// line from the satellite to the mirrored receiver evaluated at the wall
/// plane. Returns `None` when the quotient degenerates.
pub fn reflection_height(sat: &Vec3, cfg: &CanyonConfig) -> Option<f64> {
    let (s, a) = cfg.plus_frame(sat);
    let w = cfg.street_width;
    let denom = w - a - s.x;
    if denom.abs() < 1e-9 {
        return None;
    }
    Some((w / 2.0 - s.x) / denom * (cfg.vehicle.z - s.z) + s.z)
}

/// Independent evaluation through the parametric mirror line: build the
/// mirror point explicitly, solve the line parameter at the wall plane
/// from the x equation, and read the height off the z equation.
pub fn reflection_height_parametric(sat: &Vec3, cfg: &CanyonConfig) -> Option<f64> {
    let (s, a) = cfg.plus_frame(sat);
    let w = cfg.street_width;
    let mirror = Vec3::new(w - a, cfg.vehicle.y, cfg.vehicle.z);
    let dir = mirror - s;
    if dir.x.abs() < 1e-9 {
        return None;
    }
    let t = (w / 2.0 - s.x) / dir.x;
    Some(s.z + t * dir.z)
}

/// Reflection height with the wall translated by `e` along its outward
/// normal (wall plane x = w/2 + e), via explicit mirror geometry.
fn translated_reflection_height(sat: &Vec3, cfg: &CanyonConfig, e: f64) -> Option<f64> {
    let (s, a) = cfg.plus_frame(sat);
    let wall = cfg.street_width / 2.0 + e;
    let mirror = Vec3::new(2.0 * wall - a, cfg.vehicle.y, cfg.vehicle.z);
    let dir = mirror - s;
    if dir.x.abs() < 1e-9 {
        return None;
    }
    let t = (wall - s.x) / dir.x;
    Some(s.z + t * dir.z)
}

/// Reflection height with the wall tilted by `theta` about its base line
/// (the wall-plane / ground intersection). Positive theta leans the top
/// away from the street.
fn tilted_reflection_height(sat: &Vec3, cfg: &CanyonConfig, theta: f64) -> Option<f64> {
    let (s, a) = cfg.plus_frame(sat);
    let r = Vec3::new(a, cfg.vehicle.y, cfg.vehicle.z);
    let base = Vec3::new(cfg.street_width / 2.0, 0.0, 0.0);
    let normal = Vec3::new(theta.cos(), 0.0, -theta.sin());
    let mirror = r + 2.0 * (base - r).dot(&normal) * normal;
    let seg = mirror - s;
    let denom = seg.dot(&normal);
    if denom.abs() < 1e-9 {
        return None;
    }
    let t = (base - s).dot(&normal) / denom;
    Some(s.z + t * seg.z)
}

/// Largest perturbation in [0, cap] keeping `in_band` true, to within
/// `tol`. Doubles an initial bracket and bisects.
fn bisect_margin(in_band: impl Fn(f64) -> bool, initial: f64, cap: f64, tol: f64) -> f64 {
    if !in_band(0.0) {
        return 0.0;
    }
    let mut hi = initial;
    while in_band(hi) {
        hi *= 2.0;
        if hi >= cap {
            return cap;
        }
    }
    let mut lo = 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if in_band(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Translation margin for one geometry: the verbatim closed-form value and
/// the two-sided bisection oracle (outward / inward wall shifts keeping
/// the reflection height within [H-l, H+l]).
#[derive(Debug, Clone, Copy)]
pub struct TranslationMargin {
    /// Closed-form e_max as printed (sum of the two quotient terms);
    /// `None` on degenerate denominators. Informational only.
    pub formula: Option<f64>,
    /// Oracle margin for outward shifts (m).
    pub outward: f64,
    /// Oracle margin for inward shifts (m).
    pub inward: f64,
}

pub fn translation_margin(sat: &Vec3, cfg: &CanyonConfig, height: f64, l: f64) -> TranslationMargin {
    let (s, a) = cfg.plus_frame(sat);
    let c = cfg.vehicle.z;
    let d1 = 2.0 * height + 2.0 * l - c - s.z;
    let d2 = 2.0 * height - 2.0 * l - c - s.z;
    let formula = if d1.abs() < 1e-9 || d2.abs() < 1e-9 {
        None
    } else {
        let num = |h: f64| h * (s.x + a) - c * s.x - s.z * a;
        Some(num(height + l) / d1 + num(height - l) / d2)
    };
    let in_band = |e: f64| {
        translated_reflection_height(sat, cfg, e)
            .is_some_and(|h| (h - height).abs() <= l)
    };
    TranslationMargin {
        formula,
        outward: bisect_margin(in_band, 1.0, 1e4, 1e-6),
        inward: bisect_margin(|e| in_band(-e), 1.0, 1e4, 1e-6),
    }
}

/// Tilt margin for one geometry: the verbatim closed-form value (an
/// approximation in the source) and the two-sided bisection oracle about
/// the wall base line.
#[derive(Debug, Clone, Copy)]
pub struct TiltMargin {
    /// Closed-form theta as printed, radians; informational only.
    pub formula: Option<f64>,
    /// Oracle margin for outward lean (rad).
    pub outward: f64,
    /// Oracle margin for inward lean (rad).
    pub inward: f64,
}

pub fn tilt_margin(sat: &Vec3, cfg: &CanyonConfig, height: f64, l: f64) -> TiltMargin {
    let (s, a) = cfg.plus_frame(sat);
    let c = cfg.vehicle.z;
    let w = cfg.street_width;
    let d1 = (c - s.z) * (height + l);
    let d2 = (c - s.z) * (l - height);
    let formula = if d1.abs() < 1e-9 || d2.abs() < 1e-9 {
        None
    } else {
        let num = |h: f64| h * (w - s.x - a) + (s.x - w / 2.0) * c - s.z * (w / 2.0 - a);
        Some(num(height + l) / d1 + num(height - l) / d2)
    };
    let in_band = |theta: f64| {
        tilted_reflection_height(sat, cfg, theta)
            .is_some_and(|h| (h - height).abs() <= l)
    };
    let cap = std::f64::consts::FRAC_PI_2 - 1e-6;
    TiltMargin {
        formula,
        outward: bisect_margin(in_band, 0.05, cap, 1e-8),
        inward: bisect_margin(|t| in_band(-t), 0.05, cap, 1e-8),
    }
}

/// Walker delta constellation parameters (GPS-like defaults).
#[derive(Debug, Clone, Copy)]
pub struct WalkerParams {
    pub total: usize,
    pub planes: usize,
    pub phasing: usize,
    /// Inclination, radians.
    pub inclination: f64,
    /// Semi-major axis, meters (circular orbits).
    pub semi_major_axis: f64,
    /// Number of time samples over one orbital period.
    pub epochs: usize,
    /// Elevation mask, radians.
    pub elevation_mask: f64,
}

impl Default for WalkerParams {
    fn default() -> Self {
        Self {
            total: 24,
            planes: 6,
            phasing: 1,
            inclination: 55f64.to_radians(),
            semi_major_axis: 26_560e3,
            epochs: 720,
            elevation_mask: 30f64.to_radians(),
        }
    }
}

impl WalkerParams {
    pub fn orbital_period(&self) -> f64 {
        std::f64::consts::TAU * (self.semi_major_axis.powi(3) / MU_EARTH).sqrt()
    }
}

fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Synthesize satellite positions in the ENU frame of `origin` over one
/// orbital period, keeping only samples above the elevation mask.
pub fn synth_constellation(params: &WalkerParams, origin: &FrameOrigin) -> Vec<SatEpoch> {
    let per_plane = params.total / params.planes;
    let period = params.orbital_period();
    let mean_motion = std::f64::consts::TAU / period;
    let mut out = Vec::new();
    for k in 0..params.epochs {
        let t = period * k as f64 / params.epochs as f64;
        let era = rot_z(-OMEGA_EARTH * t);
        for plane in 0..params.planes {
            let raan = std::f64::consts::TAU * plane as f64 / params.planes as f64;
            let orient = era * rot_z(raan) * rot_x(params.inclination);
            for slot in 0..per_plane {
                let u = std::f64::consts::TAU
                    * (slot as f64 / per_plane as f64
                        + params.phasing as f64 * plane as f64 / params.total as f64)
                    + mean_motion * t;
                let orbital =
                    Vec3::new(u.cos(), u.sin(), 0.0) * params.semi_major_axis;
                let ecef = orient * orbital;
                let enu = ecef_to_enu(ecef, origin);
                if elevation_from_enu(enu) > params.elevation_mask {
                    out.push(SatEpoch {
                        prn: format!("W{:02}", plane * per_plane + slot + 1),
                        epoch: t,
                        position: enu,
                    });
                }
            }
        }
    }
    out
}

/// Fixed-width histogram with explicit under/overflow tallies.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, bin_width: f64, bins: usize) -> Self {
        Self { lo, bin_width, counts: vec![0; bins], underflow: 0, overflow: 0 }
    }

    pub fn add(&mut self, v: f64) {
        let idx = (v - self.lo) / self.bin_width;
        if idx < 0.0 {
            self.underflow += 1;
        } else if (idx as usize) < self.counts.len() {
            self.counts[idx as usize] += 1;
        } else {
            self.overflow += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.underflow + self.overflow + self.counts.iter().sum::<u64>()
    }
}

/// Result of the reflection-height sweep over a constellation.
pub struct HeightSimulation {
    pub histogram: Histogram,
    /// Fraction of positive-height reflection points inside the band.
    pub fraction_in_band: f64,
    pub samples: usize,
    pub band: (f64, f64),
}

/// Reflection height for every visible satellite sample on both walls,
/// retaining positive heights, binned at 5 m.
pub fn height_histogram(
    constellation: &[SatEpoch],
    cfg: &CanyonConfig,
    band: (f64, f64),
) -> HeightSimulation {
    let mut histogram = Histogram::new(0.0, 5.0, 80);
    let mut in_band = 0usize;
    let mut samples = 0usize;
    for sat in constellation {
        for side in [WallSide::Plus, WallSide::Minus] {
            let side_cfg = CanyonConfig { side, ..*cfg };
            let Some(h) = reflection_height(&sat.position, &side_cfg) else { continue };
            if h <= 0.0 {
                continue;
            }
            histogram.add(h);
            samples += 1;
            if h >= band.0 && h <= band.1 {
                in_band += 1;
            }
        }
    }
    let fraction_in_band = if samples > 0 { in_band as f64 / samples as f64 } else { 0.0 };
    HeightSimulation { histogram, fraction_in_band, samples, band: (band.0, band.1) }
}

/// One margin sample: a visible satellite geometry on one wall.
#[derive(Debug, Clone)]
pub struct MarginRow {
    pub epoch: f64,
    pub prn: String,
    pub side: WallSide,
    pub height: f64,
    /// Signed oracle margins (outward positive, inward negative).
    pub outward: f64,
    pub inward: f64,
    /// Verbatim closed-form value.
    pub formula: Option<f64>,
}

/// Margin sweep output: per-sample rows plus the fractions of signed
/// oracle margins inside the reference bands.
pub struct MarginDistributions {
    pub translation: Vec<MarginRow>,
    pub tilt: Vec<MarginRow>,
    /// Fraction of signed translation margins within +-1.5 m.
    pub translation_band_fraction: f64,
    /// Fraction of signed tilt margins within +-5 degrees.
    pub tilt_band_fraction: f64,
}

pub fn margin_distributions(
    constellation: &[SatEpoch],
    cfg: &CanyonConfig,
    l: f64,
) -> MarginDistributions {
    assert!(l > 0.0, "spacing tolerance l must be positive");
    let mut translation = Vec::new();
    let mut tilt = Vec::new();
    for sat in constellation {
        for side in [WallSide::Plus, WallSide::Minus] {
            let side_cfg = CanyonConfig { side, ..*cfg };
            let Some(h) = reflection_height(&sat.position, &side_cfg) else { continue };
            if h <= 0.0 {
                continue;
            }
            let tm = translation_margin(&sat.position, &side_cfg, h, l);
            translation.push(MarginRow {
                epoch: sat.epoch,
                prn: sat.prn.clone(),
                side,
                height: h,
                outward: tm.outward,
                inward: tm.inward,
                formula: tm.formula,
            });
            let rm = tilt_margin(&sat.position, &side_cfg, h, l);
            tilt.push(MarginRow {
                epoch: sat.epoch,
                prn: sat.prn.clone(),
                side,
                height: h,
                outward: rm.outward,
                inward: rm.inward,
                formula: rm.formula,
            });
        }
    }
    let band_fraction = |rows: &[MarginRow], band: f64| {
        let total = 2 * rows.len();
        if total == 0 {
            return 0.0;
        }
        let inside = rows
            .iter()
            .map(|r| (r.outward <= band) as usize + (r.inward <= band) as usize)
            .sum::<usize>();
        inside as f64 / total as f64
    };
    let translation_band_fraction = band_fraction(&translation, 1.5);
    let tilt_band_fraction = band_fraction(&tilt, 5f64.to_radians());
    MarginDistributions { translation, tilt, translation_band_fraction, tilt_band_fraction }
}
