//! Coordinate frames: geodetic (WGS-84), ECEF (e-frame) and local ENU
//! (enu-frame) anchored at a run-level origin.
//!
//! All geometry downstream of ingestion (segmentation, tracing, margin
//! analysis) runs in the ENU frame of a single [`FrameOrigin`].

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Shared 3-vector type; the frame (e-frame or enu-frame) is carried by
/// context.
pub type Vec3 = Vector3<f64>;

/// WGS-84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257223563;
/// WGS-84 first eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("latitude {0} deg outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} deg outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Geodetic position on the WGS-84 ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticPoint {
    /// Latitude, degrees, in [-90, 90].
    pub latitude: f64,
    /// Longitude, degrees, in [-180, 180].
    pub longitude: f64,
    /// Height above the ellipsoid, meters.
    pub height: f64,
}

impl GeodeticPoint {
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Result<Self, FrameError> {
        if !latitude.is_finite() || !longitude.is_finite() || !height.is_finite() {
            return Err(FrameError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&latitude) {
            return Err(FrameError::LatitudeOutOfRange(latitude));
        }
        if !(-180.0..=180.0).contains(&longitude) {
            return Err(FrameError::LongitudeOutOfRange(longitude));
        }
        Ok(Self { latitude, longitude, height })
    }
}

/// Anchor of the local ENU frame: geodetic point plus the rigid transform
/// between the e-frame and the enu-frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameOrigin {
    pub anchor: GeodeticPoint,
    /// Rotation taking e-frame vectors into the enu-frame (rows: east,
    /// north, up).
    pub rotation: Matrix3<f64>,
    /// ECEF position of the anchor.
    pub translation: Vec3,
}

impl FrameOrigin {
    pub fn new(anchor: GeodeticPoint) -> Self {
        let lat = anchor.latitude.to_radians();
        let lon = anchor.longitude.to_radians();
        let (sin_lat, cos_lat) = lat.sin_cos();
        let (sin_lon, cos_lon) = lon.sin_cos();
        let rotation = Matrix3::new(
            -sin_lon,
            cos_lon,
            0.0,
            -sin_lat * cos_lon,
            -sin_lat * sin_lon,
            cos_lat,
            cos_lat * cos_lon,
            cos_lat * sin_lon,
            sin_lat,
        );
        let translation = geodetic_to_ecef(anchor);
        Self { anchor, rotation, translation }
    }
}

/// Geodetic to ECEF via the prime-vertical radius of curvature.
pub fn geodetic_to_ecef(p: GeodeticPoint) -> Vec3 {
    let lat = p.latitude.to_radians();
    let lon = p.longitude.to_radians();
    let (sin_lat, cos_lat) = lat.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    Vec3::new(
        (n + p.height) * cos_lat * lon.cos(),
        (n + p.height) * cos_lat * lon.sin(),
        (n * (1.0 - WGS84_E2) + p.height) * sin_lat,
    )
}

/// ECEF to geodetic by fixed-point iteration on the latitude.
pub fn ecef_to_geodetic(p: Vec3) -> GeodeticPoint {
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    let lon = p.y.atan2(p.x);
    // Start from the spherical latitude and iterate; converges in a handful
    // of rounds for any terrestrial point.
    let mut lat = p.z.atan2(rho * (1.0 - WGS84_E2));
    let mut height = 0.0;
    for _ in 0..10 {
        let sin_lat = lat.sin();
        let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
        height = if rho > 1.0 {
            rho / lat.cos() - n
        } else {
            p.z / sin_lat - n * (1.0 - WGS84_E2)
        };
        let next = p.z.atan2(rho * (1.0 - WGS84_E2 * n / (n + height)));
        if (next - lat).abs() < 1e-14 {
            lat = next;
            break;
        }
        lat = next;
    }
    GeodeticPoint {
        latitude: lat.to_degrees(),
        longitude: lon.to_degrees(),
        height,
    }
}

/// ECEF point into the local ENU frame.
pub fn ecef_to_enu(p: Vec3, origin: &FrameOrigin) -> Vec3 {
    origin.rotation * (p - origin.translation)
}

/// ENU point back to ECEF.
pub fn enu_to_ecef(p: Vec3, origin: &FrameOrigin) -> Vec3 {
    origin.rotation.transpose() * p + origin.translation
}

/// Elevation angle (radians) of an ENU position seen from the frame origin.
pub fn elevation_from_enu(enu: Vec3) -> f64 {
    (enu.z / enu.norm()).asin()
}

/// Azimuth angle (radians, clockwise from north) of an ENU position.
pub fn azimuth_from_enu(enu: Vec3) -> f64 {
    enu.x.atan2(enu.y)
}
