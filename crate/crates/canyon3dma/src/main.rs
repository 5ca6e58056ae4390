use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use canyon3dma::correction::{correct_observations, error_series, spp_solve, CorrectionPolicy};
use canyon3dma::frames::{FrameOrigin, GeodeticPoint};
use canyon3dma::io::{self, RunConfig};
use canyon3dma::margins::{
    height_histogram, margin_distributions, synth_constellation, CanyonConfig, Histogram,
    MarginRow, WalkerParams, WallSide,
};
use canyon3dma::planar_map::{build_map_from_cloud, filter_by_height, spacing_stats, MapBuildParams};
use canyon3dma::raytrace::{trace_run, DelayPolicy};
use canyon3dma::synth::{generate_canyon, CanyonSceneParams};
use canyon3dma::Vec3;

#[derive(Parser)]
#[command(name = "canyon3dma", version, about = "Urban-canyon planar mapping and GNSS multipath ray tracing")]
struct Cli {
    /// Flat key=value config file; flags override config values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// ENU origin as "lat,lon,height" (decimal degrees, meters).
    #[arg(long, global = true)]
    origin: Option<String>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for synthetic generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SegmentOpts {
    /// Input cloud (ASCII PLY or xyz text), local ENU meters.
    #[arg(long)]
    cloud: PathBuf,
    /// Output planar map (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write spacing statistics here.
    #[arg(long)]
    stats_out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    min_slice_size: Option<usize>,
    #[arg(long)]
    merge_angle_deg: Option<f64>,
    /// Apply the facet height-band filter to the emitted map.
    #[arg(long)]
    apply_band: bool,
    /// Height band "lo,hi" in meters.
    #[arg(long)]
    band: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a point cloud into a planar facet map.
    Segment(SegmentOpts),
    /// Trace satellite signals against a planar map.
    Trace {
        #[arg(long)]
        map: PathBuf,
        /// Satellite table: epoch,prn,x,y,z (ECEF meters).
        #[arg(long)]
        sats: PathBuf,
        /// Receiver route: epoch,x,y,z (ECEF meters).
        #[arg(long)]
        route: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Height band "lo,hi" applied to the map before tracing.
        #[arg(long)]
        band: Option<String>,
        #[arg(long)]
        apply_band: bool,
        /// Delay policy: min, max or all.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Sweep a synthetic constellation and histogram reflection heights.
    SimulateHeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        street_width: Option<f64>,
        #[arg(long)]
        mask_deg: Option<f64>,
        /// Constellation time samples over one orbital period.
        #[arg(long, default_value_t = 720)]
        epochs: usize,
        /// Receiver antenna height above ground (m).
        #[arg(long, default_value_t = 2.0)]
        receiver_height: f64,
    },
    /// Translation and tilt error-margin tables and histograms.
    Margins {
        #[arg(long)]
        out_translation: PathBuf,
        #[arg(long)]
        out_tilt: PathBuf,
        #[arg(long)]
        out_translation_hist: Option<PathBuf>,
        #[arg(long)]
        out_tilt_hist: Option<PathBuf>,
        /// Spacing tolerance l (m).
        #[arg(long)]
        l: Option<f64>,
        #[arg(long)]
        street_width: Option<f64>,
        #[arg(long)]
        mask_deg: Option<f64>,
        #[arg(long, default_value_t = 240)]
        epochs: usize,
        #[arg(long, default_value_t = 2.0)]
        receiver_height: f64,
    },
    /// Correct pseudoranges with traced delays and solve positions.
    Correct {
        #[arg(long)]
        obs: PathBuf,
        /// Trace table from the trace subcommand.
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        sats: PathBuf,
        #[arg(long)]
        out_fixes: PathBuf,
        /// Truth route for the error series.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out_errors: Option<PathBuf>,
    },
    /// Generate a synthetic canyon scene with ground truth.
    Synth {
        #[arg(long)]
        out_cloud: PathBuf,
        #[arg(long)]
        out_truth: PathBuf,
        #[arg(long, default_value_t = 6)]
        buildings: usize,
        #[arg(long)]
        street_width: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 50.0)]
        density: f64,
    },
    /// Neighbor-spacing statistics of a segmented cloud.
    Stats {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        min_slice_size: Option<usize>,
        #[arg(long)]
        merge_angle_deg: Option<f64>,
    },
}

/// Removes declared output files unless disarmed, so failed runs leave no
/// partial outputs behind.
struct OutputGuard {
    paths: Vec<PathBuf>,
    armed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        Self { paths: Vec::new(), armed: true }
    }
    fn register(&mut self, path: &Path) {
        self.paths.push(path.to_path_buf());
    }
    fn disarm(&mut self) {
        self.armed = false;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.armed {
            for p in &self.paths {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

fn parse_origin(text: &str) -> Result<GeodeticPoint> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("origin must be 'lat,lon,height', got '{text}'");
    }
    let lat: f64 = parts[0].parse().context("bad origin latitude")?;
    let lon: f64 = parts[1].parse().context("bad origin longitude")?;
    let h: f64 = parts[2].parse().context("bad origin height")?;
    GeodeticPoint::new(lat, lon, h).map_err(|e| anyhow!("{e}"))
}

fn parse_band(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("band must be 'lo,hi', got '{text}'");
    }
    let lo: f64 = parts[0].parse().context("bad band low edge")?;
    let hi: f64 = parts[1].parse().context("bad band high edge")?;
    if lo > hi {
        bail!("band is inverted: {lo} > {hi}");
    }
    Ok((lo, hi))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(origin) = &cli.origin {
        cfg.origin = parse_origin(origin)?;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = Some(workers);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| anyhow!("config: {e}"))?;
    Ok(cfg)
}

fn with_workers<T>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

fn signed_margin_histogram(rows: &[MarginRow], lo: f64, width: f64, bins: usize, to_deg: bool) -> Histogram {
    let mut hist = Histogram::new(lo, width, bins);
    for r in rows {
        let (o, i) = if to_deg {
            (r.outward.to_degrees(), r.inward.to_degrees())
        } else {
            (r.outward, r.inward)
        };
        hist.add(o);
        hist.add(-i);
    }
    hist
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let mut guard = OutputGuard::new();
    let result = with_workers(cfg.workers, || dispatch(&cli.command, &cfg, &mut guard));
    if result.is_ok() {
        guard.disarm();
    }
    result
}

fn segment_params(cfg: &RunConfig, k: Option<usize>, min: Option<usize>, angle: Option<f64>) -> MapBuildParams {
    MapBuildParams {
        k: k.unwrap_or(cfg.k),
        min_slice_size: min.unwrap_or(cfg.min_slice_size),
        merge_angle: angle.unwrap_or(cfg.merge_angle_deg).to_radians(),
        ..Default::default()
    }
}

fn dispatch(command: &Command, cfg: &RunConfig, guard: &mut OutputGuard) -> Result<()> {
    match command {
        Command::Segment(opts) => {
            let points = io::read_cloud(&opts.cloud)
                .with_context(|| format!("reading {}", opts.cloud.display()))?;
            let params = segment_params(cfg, opts.k, opts.min_slice_size, opts.merge_angle_deg);
            let origin = FrameOrigin::new(cfg.origin);
            let provenance = format!("segment k={} min={} cloud={}", params.k, params.min_slice_size, opts.cloud.display());
            let (map, seg, slices) = build_map_from_cloud(&points, &params, origin, provenance)?;
            let map = if opts.apply_band {
                let band = match &opts.band {
                    Some(b) => parse_band(b)?,
                    None => cfg.band,
                };
                filter_by_height(&map, band.0, band.1)
            } else {
                map
            };
            guard.register(&opts.out);
            io::write_map(&opts.out, &map)?;
            if let Some(stats_path) = &opts.stats_out {
                guard.register(stats_path);
                match spacing_stats(&slices, &points, &seg.neighbors) {
                    Some(stats) => io::write_stats(stats_path, &stats)?,
                    None => eprintln!("warning: no clustered points, stats not written"),
                }
            }
            eprintln!("{} facets from {} points", map.facets.len(), points.len());
            Ok(())
        }
        Command::Trace { map, sats, route, out, band, apply_band, policy } => {
            let mut map = io::read_map(map)?;
            if *apply_band || band.is_some() {
                let band = match band {
                    Some(b) => parse_band(b)?,
                    None => cfg.band,
                };
                map = filter_by_height(&map, band.0, band.1);
            }
            let policy = match policy {
                Some(p) => DelayPolicy::parse(p).ok_or_else(|| anyhow!("bad policy '{p}'"))?,
                None => cfg.policy,
            };
            let sat_rows = io::read_sats(sats)?;
            let route_rows = io::read_route(route)?;
            let sats_enu = io::sats_to_enu(&sat_rows, &map.origin);
            let route_enu = io::route_to_enu(&route_rows, &map.origin);
            let near = sats_enu.iter().filter(|s| s.position.norm() <= 1e6).count();
            if near > 0 {
                eprintln!("warning: {near} satellite rows closer than 1000 km");
            }
            let run = trace_run(&sats_enu, &route_enu, &map, policy);
            if run.skipped > 0 {
                eprintln!("warning: {} satellite rows had no route epoch", run.skipped);
            }
            guard.register(out);
            io::write_trace(out, &run.rows)?;
            if policy == DelayPolicy::All {
                let detail = out.with_extension("reflections.csv");
                guard.register(&detail);
                io::write_reflections(&detail, &run.rows)?;
            }
            Ok(())
        }
        Command::SimulateHeights { out, street_width, mask_deg, epochs, receiver_height } => {
            let params = WalkerParams {
                epochs: *epochs,
                elevation_mask: mask_deg.unwrap_or(cfg.elevation_mask_deg).to_radians(),
                ..Default::default()
            };
            let origin = FrameOrigin::new(cfg.origin);
            let constellation = synth_constellation(&params, &origin);
            let canyon = CanyonConfig::new(
                street_width.unwrap_or(cfg.street_width),
                Vec3::new(0.0, 0.0, *receiver_height),
                WallSide::Plus,
            );
            let sim = height_histogram(&constellation, &canyon, cfg.band);
            guard.register(out);
            io::write_histogram(
                out,
                &sim.histogram,
                &[
                    ("band_lo_m", sim.band.0),
                    ("band_hi_m", sim.band.1),
                    ("fraction_in_band", sim.fraction_in_band),
                    ("samples", sim.samples as f64),
                ],
            )?;
            eprintln!(
                "{} reflection samples, {:.1}% in [{}, {}] m",
                sim.samples,
                100.0 * sim.fraction_in_band,
                sim.band.0,
                sim.band.1
            );
            Ok(())
        }
        Command::Margins {
            out_translation,
            out_tilt,
            out_translation_hist,
            out_tilt_hist,
            l,
            street_width,
            mask_deg,
            epochs,
            receiver_height,
        } => {
            let params = WalkerParams {
                epochs: *epochs,
                elevation_mask: mask_deg.unwrap_or(cfg.elevation_mask_deg).to_radians(),
                ..Default::default()
            };
            let origin = FrameOrigin::new(cfg.origin);
            let constellation = synth_constellation(&params, &origin);
            let canyon = CanyonConfig::new(
                street_width.unwrap_or(cfg.street_width),
                Vec3::new(0.0, 0.0, *receiver_height),
                WallSide::Plus,
            );
            let dist = margin_distributions(&constellation, &canyon, l.unwrap_or(cfg.spacing_l));
            guard.register(out_translation);
            io::write_margin_rows(out_translation, &dist.translation, false)?;
            guard.register(out_tilt);
            io::write_margin_rows(out_tilt, &dist.tilt, true)?;
            if let Some(path) = out_translation_hist {
                guard.register(path);
                let hist = signed_margin_histogram(&dist.translation, -10.0, 0.25, 80, false);
                io::write_histogram(path, &hist, &[
                    ("band_fraction_within_1p5_m", dist.translation_band_fraction),
                ])?;
            }
            if let Some(path) = out_tilt_hist {
                guard.register(path);
                let hist = signed_margin_histogram(&dist.tilt, -25.0, 0.25, 200, true);
                io::write_histogram(path, &hist, &[
                    ("band_fraction_within_5_deg", dist.tilt_band_fraction),
                ])?;
            }
            eprintln!(
                "translation samples within +-1.5 m: {:.1}%; tilt within +-5 deg: {:.1}%",
                100.0 * dist.translation_band_fraction,
                100.0 * dist.tilt_band_fraction
            );
            Ok(())
        }
        Command::Correct { obs, paths, sats, out_fixes, truth, out_errors } => {
            let observations = io::read_obs(obs)?;
            let trace_rows = io::read_trace(paths)?;
            let (corrected, report) =
                correct_observations(&observations, &trace_rows, CorrectionPolicy::NlosOnly);
            eprintln!(
                "corrected {}, dropped {} blocked, {} unmatched",
                report.corrected, report.dropped_blocked, report.unmatched
            );
            let origin = FrameOrigin::new(cfg.origin);
            let sat_rows = io::read_sats(sats)?;
            let sats_enu = io::sats_to_enu(&sat_rows, &origin);
            let mut fixes = Vec::new();
            let mut by_epoch: std::collections::BTreeMap<u64, Vec<&canyon3dma::correction::Observation>> =
                Default::default();
            for o in &corrected {
                by_epoch.entry(o.epoch.to_bits()).or_default().push(o);
            }
            for (_, group) in by_epoch {
                let group: Vec<canyon3dma::correction::Observation> =
                    group.into_iter().cloned().collect();
                match spp_solve(&group, &sats_enu) {
                    Ok(fix) => fixes.push(fix),
                    Err(e) => eprintln!("epoch {}: {e}", group[0].epoch),
                }
            }
            guard.register(out_fixes);
            io::write_fixes(out_fixes, &fixes)?;
            if let (Some(truth_path), Some(errors_path)) = (truth, out_errors) {
                let truth_rows = io::read_route(truth_path)?;
                let truth_enu = io::route_to_enu(&truth_rows, &origin);
                let series = error_series(&fixes, &truth_enu);
                guard.register(errors_path);
                io::write_errors(errors_path, &series)?;
                eprintln!("3D RMS {} m over {} epochs", series.summary_3d.rms, series.rows.len());
            }
            Ok(())
        }
        Command::Synth { out_cloud, out_truth, buildings, street_width, noise, density } => {
            let params = CanyonSceneParams {
                n_buildings: *buildings,
                street_width: street_width.unwrap_or(cfg.street_width),
                noise_sigma: *noise,
                density: *density,
                seed: cfg.seed,
                ..Default::default()
            };
            let (points, truth) = generate_canyon(&params);
            guard.register(out_cloud);
            io::write_cloud(out_cloud, &points)?;
            guard.register(out_truth);
            io::write_truth(out_truth, &truth)?;
            eprintln!("{} points over {} walls", points.len(), truth.walls.len());
            Ok(())
        }
        Command::Stats { cloud, out, k, min_slice_size, merge_angle_deg } => {
            let points = io::read_cloud(cloud)?;
            let params = segment_params(cfg, *k, *min_slice_size, *merge_angle_deg);
            let origin = FrameOrigin::new(cfg.origin);
            let (_, seg, slices) = build_map_from_cloud(&points, &params, origin, "stats")?;
            let stats = spacing_stats(&slices, &points, &seg.neighbors)
                .ok_or_else(|| anyhow!("no clustered points"))?;
            guard.register(out);
            io::write_stats(out, &stats)?;
            eprintln!(
                "mean {:.4} m, median {:.4} m, mean-of-means {:.4} m, median-of-means {:.4} m",
                stats.mean_all, stats.median_all, stats.mean_of_cluster_means, stats.median_of_cluster_means
            );
            Ok(())
        }
    }
}
