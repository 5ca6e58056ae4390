//! Urban-canyon planar mapping and GNSS multipath ray tracing.
//!
//! The pipeline converts a street-level point cloud into a compact planar
//! map (PCA attributes, P-Linkage slices, normal-constrained merging,
//! convex facet boundaries), traces satellite signals against the map to
//! classify LOS/NLOS reception and estimate reflection delays, corrects
//! pseudoranges with those delays, and reproduces the complexity-control
//! analyses (reflection-height band, translation and tilt error margins).

pub mod correction;
pub mod frames;
pub mod io;
pub mod kdtree;
pub mod margins;
pub mod planar_map;
pub mod raytrace;
pub mod segmentation;
pub mod synth;

pub use frames::{FrameOrigin, GeodeticPoint, Vec3};
pub use planar_map::{Facet, Plane, PlanarMap};
pub use raytrace::{Classification, RayPath};
