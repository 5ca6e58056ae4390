//! File formats and run configuration: ASCII PLY / xyz clouds, the JSON
//! planar-map schema, delimited satellite/observation/route/trace tables,
//! and the key=value config file.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! emitted file re-reads to bit-identical values.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::correction::{ErrorSeries, Observation, PositionFix};
use crate::frames::{FrameOrigin, GeodeticPoint, Vec3};
use crate::margins::{Histogram, MarginRow, WallSide};
use crate::planar_map::{Facet, Plane, PlanarMap, SpacingStats};
use crate::raytrace::{Classification, DelayPolicy, RayPath, ReceiverEpoch};
use crate::segmentation::CloudPoint;
use crate::synth::{NlosInjection, SceneTruth, TruthFacet};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: missing required column '{column}'")]
    MissingColumn { path: String, column: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { path: path.display().to_string(), line, message: message.into() }
}

// ---------------------------------------------------------------------
// Point clouds: ASCII PLY and delimited xyz.
// ---------------------------------------------------------------------

/// Reads an ASCII PLY (vertex x y z) or a delimited xyz text file; ids
/// follow file order.
pub fn read_cloud(path: &Path) -> Result<Vec<CloudPoint>, IoError> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.trim() == "ply" {
        read_ply(path, &text)
    } else {
        read_xyz(path, &text)
    }
}

fn read_ply(path: &Path, text: &str) -> Result<Vec<CloudPoint>, IoError> {
    let mut lines = text.lines().enumerate();
    let mut vertex_count: Option<usize> = None;
    let mut columns: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    let mut header_end = 0;
    for (idx, line) in lines.by_ref() {
        let line = line.trim();
        let lineno = idx + 1;
        if lineno == 1 {
            if line != "ply" {
                return Err(parse_err(path, lineno, "expected 'ply' magic"));
            }
            continue;
        }
        if line.starts_with("format") {
            if line != "format ascii 1.0" {
                return Err(parse_err(path, lineno, "only 'format ascii 1.0' is supported"));
            }
        } else if line.starts_with("comment") || line.starts_with("obj_info") {
            continue;
        } else if let Some(rest) = line.strip_prefix("element ") {
            let mut parts = rest.split_whitespace();
            let name = parts.next().unwrap_or("");
            in_vertex_element = name == "vertex";
            if in_vertex_element {
                let count = parts
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(path, lineno, "bad vertex count"))?;
                vertex_count = Some(count);
            }
        } else if let Some(rest) = line.strip_prefix("property ") {
            if in_vertex_element {
                let mut parts = rest.split_whitespace();
                let ty = parts.next().unwrap_or("");
                let name = parts.next().unwrap_or("");
                if !matches!(ty, "float" | "double" | "float32" | "float64") {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("unsupported vertex property type '{ty}'"),
                    ));
                }
                columns.push(name.to_string());
            }
        } else if line == "end_header" {
            header_end = lineno;
            break;
        } else if !line.is_empty() {
            return Err(parse_err(path, lineno, format!("unexpected header line '{line}'")));
        }
    }
    let count = vertex_count.ok_or_else(|| parse_err(path, header_end, "no vertex element"))?;
    let col = |name: &str| {
        columns.iter().position(|c| c == name).ok_or_else(|| IoError::MissingColumn {
            path: path.display().to_string(),
            column: name.to_string(),
        })
    };
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);

    let mut points = Vec::with_capacity(count);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if points.len() == count {
            return Err(parse_err(path, lineno, "more vertex rows than declared"));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < columns.len() {
            return Err(parse_err(path, lineno, "short vertex row"));
        }
        let get = |c: usize| -> Result<f64, IoError> {
            fields[c]
                .parse::<f64>()
                .map_err(|_| parse_err(path, lineno, format!("bad float '{}'", fields[c])))
        };
        points.push(CloudPoint {
            id: points.len() as u32,
            position: Vec3::new(get(cx)?, get(cy)?, get(cz)?),
        });
    }
    if points.len() != count {
        return Err(parse_err(
            path,
            header_end,
            format!("declared {count} vertices, found {}", points.len()),
        ));
    }
    Ok(points)
}

fn read_xyz(path: &Path, text: &str) -> Result<Vec<CloudPoint>, IoError> {
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> =
            line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        if fields.len() < 3 {
            return Err(parse_err(path, idx + 1, "expected at least 3 coordinates"));
        }
        let mut v = [0.0; 3];
        for (slot, field) in v.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .map_err(|_| parse_err(path, idx + 1, format!("bad float '{field}'")))?;
        }
        points.push(CloudPoint {
            id: points.len() as u32,
            position: Vec3::new(v[0], v[1], v[2]),
        });
    }
    Ok(points)
}

pub fn write_cloud(path: &Path, points: &[CloudPoint]) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in points {
        let _ = writeln!(out, "{} {} {}", p.position.x, p.position.y, p.position.z);
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------
// Planar map JSON.
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct OriginDoc {
    lat: f64,
    lon: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct FacetDoc {
    id: u32,
    normal: [f64; 3],
    anchor: [f64; 3],
    tau: f64,
    boundary: Vec<[f64; 3]>,
    height_range: [f64; 2],
    #[serde(default)]
    source_slice: u32,
}

#[derive(Serialize, Deserialize)]
struct MapDoc {
    origin: OriginDoc,
    #[serde(default)]
    provenance: String,
    facets: Vec<FacetDoc>,
}

fn vec3_arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn write_map(path: &Path, map: &PlanarMap) -> Result<(), IoError> {
    let doc = MapDoc {
        origin: OriginDoc {
            lat: map.origin.anchor.latitude,
            lon: map.origin.anchor.longitude,
            h: map.origin.anchor.height,
        },
        provenance: map.provenance.clone(),
        facets: map
            .facets
            .iter()
            .map(|f| FacetDoc {
                id: f.id,
                normal: vec3_arr(&f.plane.normal),
                anchor: vec3_arr(&f.plane.anchor),
                tau: f.plane.tau,
                boundary: f.boundary.iter().map(vec3_arr).collect(),
                height_range: [f.height_range.0, f.height_range.1],
                source_slice: f.source_slice,
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn read_map(path: &Path) -> Result<PlanarMap, IoError> {
    let doc: MapDoc = serde_json::from_str(&fs::read_to_string(path)?)?;
    let anchor = GeodeticPoint::new(doc.origin.lat, doc.origin.lon, doc.origin.h)
        .map_err(|e| IoError::Invalid(format!("map origin: {e}")))?;
    let origin = FrameOrigin::new(anchor);
    let mut ids = std::collections::HashSet::new();
    let mut facets = Vec::with_capacity(doc.facets.len());
    for fd in doc.facets {
        if !ids.insert(fd.id) {
            return Err(IoError::Invalid(format!("duplicate facet id {}", fd.id)));
        }
        let plane = Plane {
            normal: Vec3::from(fd.normal),
            tau: fd.tau,
            anchor: Vec3::from(fd.anchor),
        };
        let boundary: Vec<Vec3> = fd.boundary.into_iter().map(Vec3::from).collect();
        let facet = Facet::new(fd.id, plane, boundary, fd.source_slice);
        facet.validate().map_err(IoError::Invalid)?;
        if (facet.height_range.0 - fd.height_range[0]).abs() > 1e-6
            || (facet.height_range.1 - fd.height_range[1]).abs() > 1e-6
        {
            return Err(IoError::Invalid(format!(
                "facet {}: stored height range disagrees with boundary",
                fd.id
            )));
        }
        facets.push(facet);
    }
    Ok(PlanarMap { origin, facets, provenance: doc.provenance })
}

// ---------------------------------------------------------------------
// Scene truth JSON.
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TruthWallDoc {
    normal: [f64; 3],
    anchor: [f64; 3],
    corners: [[f64; 3]; 4],
}

#[derive(Serialize, Deserialize)]
struct ScheduleDoc {
    epoch: f64,
    prn: String,
    facet: u32,
    delay: f64,
}

#[derive(Serialize, Deserialize)]
struct TruthDoc {
    walls: Vec<TruthWallDoc>,
    labels: Vec<u32>,
    #[serde(default)]
    schedule: Vec<ScheduleDoc>,
}

pub fn write_truth(path: &Path, truth: &SceneTruth) -> Result<(), IoError> {
    let doc = TruthDoc {
        walls: truth
            .walls
            .iter()
            .map(|w| TruthWallDoc {
                normal: vec3_arr(&w.normal),
                anchor: vec3_arr(&w.anchor),
                corners: [
                    vec3_arr(&w.corners[0]),
                    vec3_arr(&w.corners[1]),
                    vec3_arr(&w.corners[2]),
                    vec3_arr(&w.corners[3]),
                ],
            })
            .collect(),
        labels: truth.labels.clone(),
        schedule: truth
            .schedule
            .iter()
            .map(|s| ScheduleDoc {
                epoch: s.epoch,
                prn: s.prn.clone(),
                facet: s.facet,
                delay: s.delay,
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<SceneTruth, IoError> {
    let doc: TruthDoc = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(SceneTruth {
        walls: doc
            .walls
            .into_iter()
            .map(|w| TruthFacet {
                normal: Vec3::from(w.normal),
                anchor: Vec3::from(w.anchor),
                corners: [
                    Vec3::from(w.corners[0]),
                    Vec3::from(w.corners[1]),
                    Vec3::from(w.corners[2]),
                    Vec3::from(w.corners[3]),
                ],
            })
            .collect(),
        labels: doc.labels,
        schedule: doc
            .schedule
            .into_iter()
            .map(|s| NlosInjection { epoch: s.epoch, prn: s.prn, facet: s.facet, delay: s.delay })
            .collect(),
    })
}

// ---------------------------------------------------------------------
// Delimited tables.
// ---------------------------------------------------------------------

struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path, required: &[&str]) -> Result<(Table, Vec<usize>), IoError> {
    let text = fs::read_to_string(path)?;
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        match &header {
            None => header = Some(fields),
            Some(h) => {
                if fields.len() < h.len() {
                    return Err(parse_err(
                        path,
                        idx + 1,
                        format!("expected {} fields, got {}", h.len(), fields.len()),
                    ));
                }
                rows.push((idx + 1, fields));
            }
        }
    }
    let header = header.ok_or_else(|| parse_err(path, 1, "empty table"))?;
    let mut indices = Vec::with_capacity(required.len());
    for name in required {
        let idx = header.iter().position(|h| h == name).ok_or_else(|| IoError::MissingColumn {
            path: path.display().to_string(),
            column: name.to_string(),
        })?;
        indices.push(idx);
    }
    Ok((Table { header, rows }, indices))
}

fn field_f64(path: &Path, line: usize, value: &str) -> Result<f64, IoError> {
    value
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("bad number '{value}'")))
}

/// Satellite positions in e-frame meters: epoch,prn,x,y,z.
#[derive(Debug, Clone)]
pub struct SatRow {
    pub epoch: f64,
    pub prn: String,
    pub ecef: Vec3,
}

pub fn read_sats(path: &Path) -> Result<Vec<SatRow>, IoError> {
    let (table, idx) = read_table(path, &["epoch", "prn", "x", "y", "z"])?;
    let _ = &table.header;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, fields) in &table.rows {
        out.push(SatRow {
            epoch: field_f64(path, *line, &fields[idx[0]])?,
            prn: fields[idx[1]].clone(),
            ecef: Vec3::new(
                field_f64(path, *line, &fields[idx[2]])?,
                field_f64(path, *line, &fields[idx[3]])?,
                field_f64(path, *line, &fields[idx[4]])?,
            ),
        });
    }
    out.sort_by(|a, b| a.epoch.partial_cmp(&b.epoch).unwrap().then_with(|| a.prn.cmp(&b.prn)));
    Ok(out)
}

pub fn write_sats(path: &Path, rows: &[SatRow]) -> Result<(), IoError> {
    let mut out = String::from("epoch,prn,x,y,z\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.prn, r.ecef.x, r.ecef.y, r.ecef.z);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Receiver route in e-frame meters: epoch,x,y,z.
#[derive(Debug, Clone)]
pub struct RouteRow {
    pub epoch: f64,
    pub ecef: Vec3,
}

pub fn read_route(path: &Path) -> Result<Vec<RouteRow>, IoError> {
    let (table, idx) = read_table(path, &["epoch", "x", "y", "z"])?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, fields) in &table.rows {
        out.push(RouteRow {
            epoch: field_f64(path, *line, &fields[idx[0]])?,
            ecef: Vec3::new(
                field_f64(path, *line, &fields[idx[1]])?,
                field_f64(path, *line, &fields[idx[2]])?,
                field_f64(path, *line, &fields[idx[3]])?,
            ),
        });
    }
    out.sort_by(|a, b| a.epoch.partial_cmp(&b.epoch).unwrap());
    Ok(out)
}

pub fn write_route(path: &Path, rows: &[RouteRow]) -> Result<(), IoError> {
    let mut out = String::from("epoch,x,y,z\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.ecef.x, r.ecef.y, r.ecef.z);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_obs(path: &Path) -> Result<Vec<Observation>, IoError> {
    let (table, idx) = read_table(path, &["epoch", "prn", "pseudorange_m"])?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, fields) in &table.rows {
        let pseudorange = field_f64(path, *line, &fields[idx[2]])?;
        if !(pseudorange.is_finite() && pseudorange > 0.0) {
            return Err(parse_err(path, *line, "pseudorange must be positive and finite"));
        }
        out.push(Observation {
            epoch: field_f64(path, *line, &fields[idx[0]])?,
            prn: fields[idx[1]].clone(),
            pseudorange,
        });
    }
    out.sort_by(|a, b| a.epoch.partial_cmp(&b.epoch).unwrap().then_with(|| a.prn.cmp(&b.prn)));
    Ok(out)
}

pub fn write_obs(path: &Path, rows: &[Observation]) -> Result<(), IoError> {
    let mut out = String::from("epoch,prn,pseudorange_m\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.prn, r.pseudorange);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_trace(path: &Path, rows: &[RayPath]) -> Result<(), IoError> {
    let mut out =
        String::from("epoch,prn,classification,applied_delay_m,n_reflections,blocking_facets\n");
    for r in rows {
        let blocking: Vec<String> = r.blocking.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            r.prn,
            r.classification.as_str(),
            r.applied_delay,
            r.reflections.len(),
            blocking.join(";"),
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-reflection detail table, emitted alongside the trace under the
/// `all` delay policy.
pub fn write_reflections(path: &Path, rows: &[RayPath]) -> Result<(), IoError> {
    let mut out = String::from("epoch,prn,facet,delay_m,occluded\n");
    for r in rows {
        for refl in &r.reflections {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.prn, refl.facet, refl.delay, refl.occluded as u8
            );
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<RayPath>, IoError> {
    let (table, idx) = read_table(
        path,
        &["epoch", "prn", "classification", "applied_delay_m", "n_reflections", "blocking_facets"],
    )?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, fields) in &table.rows {
        let classification = Classification::parse(&fields[idx[2]])
            .ok_or_else(|| parse_err(path, *line, format!("bad classification '{}'", fields[idx[2]])))?;
        let blocking = if fields[idx[5]].is_empty() {
            vec![]
        } else {
            fields[idx[5]]
                .split(';')
                .map(|b| {
                    b.parse::<u32>()
                        .map_err(|_| parse_err(path, *line, format!("bad facet id '{b}'")))
                })
                .collect::<Result<Vec<u32>, IoError>>()?
        };
        out.push(RayPath {
            epoch: field_f64(path, *line, &fields[idx[0]])?,
            prn: fields[idx[1]].clone(),
            classification,
            blocking,
            reflections: Vec::new(),
            applied_delay: field_f64(path, *line, &fields[idx[3]])?,
        });
    }
    out.sort_by(|a, b| a.epoch.partial_cmp(&b.epoch).unwrap().then_with(|| a.prn.cmp(&b.prn)));
    Ok(out)
}

pub fn write_fixes(path: &Path, fixes: &[PositionFix]) -> Result<(), IoError> {
    let mut out = String::from("epoch,x,y,z,bias_m,n_sats,converged\n");
    for f in fixes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            f.epoch,
            f.position.x,
            f.position.y,
            f.position.z,
            f.clock_bias,
            f.used_satellites,
            f.converged as u8
        );
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_errors(path: &Path, series: &ErrorSeries) -> Result<(), IoError> {
    let mut out = String::new();
    let _ = writeln!(out, "# mean_3d_m = {}", series.summary_3d.mean);
    let _ = writeln!(out, "# rms_3d_m = {}", series.summary_3d.rms);
    let _ = writeln!(out, "# max_3d_m = {}", series.summary_3d.max);
    let _ = writeln!(out, "# rms_horizontal_m = {}", series.summary_horizontal.rms);
    let _ = writeln!(out, "# skipped_epochs = {}", series.skipped);
    out.push_str("epoch,east_m,north_m,up_m,horizontal_m,total_m\n");
    for r in &series.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.east, r.north, r.up, r.horizontal, r.total
        );
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_histogram(
    path: &Path,
    hist: &Histogram,
    notes: &[(&str, f64)],
) -> Result<(), IoError> {
    let mut out = String::new();
    for (key, value) in notes {
        let _ = writeln!(out, "# {key} = {value}");
    }
    let _ = writeln!(out, "# underflow = {}", hist.underflow);
    let _ = writeln!(out, "# overflow = {}", hist.overflow);
    out.push_str("bin_lo,bin_hi,count\n");
    for (i, count) in hist.counts.iter().enumerate() {
        let lo = hist.lo + i as f64 * hist.bin_width;
        let _ = writeln!(out, "{},{},{}", lo, lo + hist.bin_width, count);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Margin table: one row per (satellite sample, wall side); angles are
/// emitted in degrees.
pub fn write_margin_rows(path: &Path, rows: &[MarginRow], degrees: bool) -> Result<(), IoError> {
    let mut out = String::new();
    if degrees {
        out.push_str("epoch,prn,side,height_m,outward_deg,inward_deg,formula_deg\n");
    } else {
        out.push_str("epoch,prn,side,height_m,outward_m,inward_m,formula_m\n");
    }
    let conv = |v: f64| if degrees { v.to_degrees() } else { v };
    for r in rows {
        let formula = r.formula.map(|f| conv(f).to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.prn,
            r.side.as_str(),
            r.height,
            conv(r.outward),
            conv(r.inward),
            formula
        );
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_stats(path: &Path, stats: &SpacingStats) -> Result<(), IoError> {
    let mut out = String::from("statistic,value\n");
    let _ = writeln!(out, "mean_all_m,{}", stats.mean_all);
    let _ = writeln!(out, "median_all_m,{}", stats.median_all);
    let _ = writeln!(out, "mean_of_cluster_means_m,{}", stats.mean_of_cluster_means);
    let _ = writeln!(out, "median_of_cluster_means_m,{}", stats.median_of_cluster_means);
    let _ = writeln!(out, "sample_count,{}", stats.sample_count);
    let _ = writeln!(out, "cluster_count,{}", stats.cluster_count);
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------
// Run configuration.
// ---------------------------------------------------------------------

/// Run-level parameters. CLI flags override config-file values, which
/// override these defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub origin: GeodeticPoint,
    pub k: usize,
    pub min_slice_size: usize,
    pub merge_angle_deg: f64,
    pub band: (f64, f64),
    pub street_width: f64,
    pub elevation_mask_deg: f64,
    /// Neighbor-spacing tolerance l (m).
    pub spacing_l: f64,
    pub policy: DelayPolicy,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            origin: GeodeticPoint { latitude: 31.24416, longitude: 121.50347, height: 0.0 },
            k: 30,
            min_slice_size: 200,
            merge_angle_deg: 10.0,
            band: (10.0, 60.0),
            street_width: 40.0,
            elevation_mask_deg: 30.0,
            spacing_l: 1.0723,
            policy: DelayPolicy::Min,
            seed: 1,
            workers: None,
        }
    }
}

impl RunConfig {
    /// Loads a flat key=value file over the defaults. Unknown keys are
    /// rejected.
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let mut cfg = Self::default();
        let text = fs::read_to_string(path)?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(path, idx + 1, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| parse_err(path, idx + 1, format!("bad {what} '{value}'"));
            match key {
                "origin_lat" => cfg.origin.latitude = value.parse().map_err(|_| bad("latitude"))?,
                "origin_lon" => cfg.origin.longitude = value.parse().map_err(|_| bad("longitude"))?,
                "origin_height" => cfg.origin.height = value.parse().map_err(|_| bad("height"))?,
                "k" => cfg.k = value.parse().map_err(|_| bad("k"))?,
                "min_slice_size" => cfg.min_slice_size = value.parse().map_err(|_| bad("size"))?,
                "merge_angle_deg" => cfg.merge_angle_deg = value.parse().map_err(|_| bad("angle"))?,
                "band_lo" => cfg.band.0 = value.parse().map_err(|_| bad("band"))?,
                "band_hi" => cfg.band.1 = value.parse().map_err(|_| bad("band"))?,
                "street_width" => cfg.street_width = value.parse().map_err(|_| bad("width"))?,
                "elevation_mask_deg" => {
                    cfg.elevation_mask_deg = value.parse().map_err(|_| bad("mask"))?
                }
                "spacing_l" => cfg.spacing_l = value.parse().map_err(|_| bad("l"))?,
                "policy" => {
                    cfg.policy = DelayPolicy::parse(value).ok_or_else(|| bad("policy"))?
                }
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "workers" => cfg.workers = Some(value.parse().map_err(|_| bad("workers"))?),
                _ => return Err(parse_err(path, idx + 1, format!("unknown key '{key}'"))),
            }
        }
        cfg.validate().map_err(IoError::Invalid)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        GeodeticPoint::new(self.origin.latitude, self.origin.longitude, self.origin.height)
            .map_err(|e| e.to_string())?;
        if self.k < 4 {
            return Err("k must be at least 4".into());
        }
        if self.band.0 > self.band.1 {
            return Err("height band is inverted".into());
        }
        if self.street_width <= 0.0 {
            return Err("street width must be positive".into());
        }
        if self.spacing_l <= 0.0 {
            return Err("spacing tolerance l must be positive".into());
        }
        if !(0.0..=90.0).contains(&self.elevation_mask_deg) {
            return Err("elevation mask must be in [0, 90] degrees".into());
        }
        Ok(())
    }
}

/// Converts e-frame satellite rows into ENU-frame tracer inputs.
pub fn sats_to_enu(rows: &[SatRow], origin: &FrameOrigin) -> Vec<crate::raytrace::SatEpoch> {
    rows.iter()
        .map(|r| crate::raytrace::SatEpoch {
            prn: r.prn.clone(),
            epoch: r.epoch,
            position: crate::frames::ecef_to_enu(r.ecef, origin),
        })
        .collect()
}

/// Converts e-frame route rows into ENU-frame receiver epochs.
pub fn route_to_enu(rows: &[RouteRow], origin: &FrameOrigin) -> Vec<ReceiverEpoch> {
    rows.iter()
        .map(|r| ReceiverEpoch {
            epoch: r.epoch,
            position: crate::frames::ecef_to_enu(r.ecef, origin),
        })
        .collect()
}

impl std::str::FromStr for WallSide {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "+" | "plus" => Ok(WallSide::Plus),
            "-" | "minus" => Ok(WallSide::Minus),
            other => Err(format!("bad wall side '{other}'")),
        }
    }
}
