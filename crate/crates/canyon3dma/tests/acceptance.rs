//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured figures (run with `--nocapture` to see them).

use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use canyon3dma::correction::{
    correct_observations, error_series, spp_solve, CorrectionPolicy, Observation, PositionFix,
};
use canyon3dma::frames::{FrameOrigin, GeodeticPoint};
use canyon3dma::margins::{
    height_histogram, margin_distributions, reflection_height, reflection_height_parametric,
    synth_constellation, CanyonConfig, WalkerParams, WallSide,
};
use canyon3dma::planar_map::{
    build_map_from_cloud, filter_by_height, graham_scan, Facet, MapBuildParams, Plane, PlanarMap,
    Vec2,
};
use canyon3dma::raytrace::{
    classify, trace_run, Classification, DelayPolicy, ReceiverEpoch, SatEpoch,
};
use canyon3dma::segmentation::{knn_index, normal_deviation, CloudPoint};
use canyon3dma::synth::{
    generate_canyon, oracle_classify, oracle_hull, oracle_knn, sample_walls, truth_to_facets,
    CanyonSceneParams, NlosInjection, SceneTruth, TruthFacet, WallSpec,
};
use canyon3dma::Vec3;

fn test_origin() -> FrameOrigin {
    FrameOrigin::new(GeodeticPoint::new(31.24416, 121.50347, 0.0).unwrap())
}

fn map_from_truth(truth: &SceneTruth) -> PlanarMap {
    PlanarMap { origin: test_origin(), facets: truth_to_facets(truth), provenance: "truth".into() }
}

/// A1: production classification agrees with the brute-force oracle on
/// 100 seeded canyon scenes x 20 satellite geometries (grazing shell
/// excluded), and every reflection satisfies the mirror path-length
/// identity and the specular law.
#[test]
fn a1_raytrace_oracle_equivalence() {
    let start = Instant::now();
    let mut cases = 0usize;
    let mut grazing = 0usize;
    for scene_seed in 0..100u64 {
        let params = CanyonSceneParams {
            n_buildings: 4 + (scene_seed % 5) as usize,
            density: 0.1, // the sampled cloud is unused here
            seed: scene_seed,
            ..Default::default()
        };
        let (_, truth) = generate_canyon(&params);
        let map = map_from_truth(&truth);
        let street_len = truth
            .walls
            .iter()
            .flat_map(|w| w.corners.iter().map(|c| c.y))
            .fold(0.0f64, f64::max);
        let mut rng = StdRng::seed_from_u64(1000 + scene_seed);
        for sat_idx in 0..20 {
            let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let el: f64 = rng.gen_range(10f64.to_radians()..80f64.to_radians());
            // Far enough for satellite-like geometry, low enough that the
            // 1e-9 m identity budget is not consumed by f64 rounding of
            // the path norms (realistic 2.2e7 m ranges are exercised by
            // the end-to-end and throughput criteria).
            let range: f64 = rng.gen_range(2.0e5..9.0e5);
            let s = Vec3::new(
                range * el.cos() * az.sin(),
                range * el.cos() * az.cos(),
                range * el.sin(),
            );
            let r = Vec3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(0.0..street_len.max(1.0)),
                rng.gen_range(1.0..3.0),
            );
            let verdict = oracle_classify(&s, &r, &truth, 1e-6);
            if verdict.grazing {
                grazing += 1;
                continue;
            }
            let path = classify("T", sat_idx as f64, &s, &r, &map, DelayPolicy::Min);
            assert_eq!(
                path.classification, verdict.classification,
                "scene {scene_seed} sat {sat_idx}: production vs oracle"
            );
            if path.classification == Classification::Nlos {
                assert!(
                    (path.applied_delay - verdict.applied_delay).abs() < 1e-9,
                    "delay mismatch: {} vs {}",
                    path.applied_delay,
                    verdict.applied_delay
                );
            }
            for refl in path.reflections.iter().filter(|x| !x.occluded) {
                let oracle_delay = verdict
                    .reflections
                    .iter()
                    .find(|(f, _, occ)| *f == refl.facet && !occ)
                    .map(|(_, d, _)| *d)
                    .unwrap_or_else(|| {
                        panic!(
                            "scene {scene_seed} sat {sat_idx}: oracle missing facet {}",
                            refl.facet
                        )
                    });
                assert!((refl.delay - oracle_delay).abs() < 1e-9);

                // Mirror path-length identity, asserted through its two
                // constituents: equidistance of R and R' from Q', and Q'
                // sitting on the S -> R' line. Both are numerically stable
                // where the direct sum of two long path norms is not, and
                // together they bound |(|Q'S| + |RQ'|) - |SR'|| by the
                // same tolerance.
                let to_receiver = r - refl.point;
                let to_mirror = refl.mirror - refl.point;
                assert!((to_receiver.norm() - to_mirror.norm()).abs() < 1e-9);
                let image_line = refl.mirror - s;
                let off_line = to_mirror.cross(&image_line).norm() / image_line.norm();
                assert!(off_line < 1e-9, "Q' {off_line:.2e} m off the image line");

                // Specular law at the reflection point.
                let n = map.facets[refl.facet as usize].plane.normal;
                let incoming = (refl.point - s).normalize();
                let outgoing = (r - refl.point).normalize();
                let ai = incoming.cross(&n).norm().atan2(incoming.dot(&n).abs());
                let ao = outgoing.cross(&n).norm().atan2(outgoing.dot(&n).abs());
                assert!((ai - ao).abs() < 1e-9);
            }
            cases += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "A1 took {elapsed:.1} s, budget 120 s");
    println!(
        "[PASS] A1 ray-trace oracle equivalence: {cases} non-grazing cases agree \
         ({grazing} grazing excluded), {elapsed:.1} s"
    );
}

/// A2: closed-form reflection height equals the parametric-line oracle to
/// 1e-9 m over 1e4 random geometries in under 5 s.
#[test]
fn a2_height_formula_equivalence() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    let mut checked = 0usize;
    while checked < 10_000 {
        let width: f64 = rng.gen_range(10.0..80.0);
        let cfg = CanyonConfig::new(
            width,
            Vec3::new(
                rng.gen_range(-0.45 * width..0.45 * width),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(0.0..4.0),
            ),
            if rng.gen_bool(0.5) { WallSide::Plus } else { WallSide::Minus },
        );
        let sat = Vec3::new(
            rng.gen_range(-2e7..2e7),
            rng.gen_range(-2e7..2e7),
            rng.gen_range(1e6..2.2e7),
        );
        match (reflection_height(&sat, &cfg), reflection_height_parametric(&sat, &cfg)) {
            (Some(a), Some(b)) => {
                assert!((a - b).abs() < 1e-9, "height {a} vs line oracle {b}");
                checked += 1;
            }
            (None, None) => {}
            _ => panic!("formula and oracle disagree on definedness"),
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "A2 took {elapsed:.2} s, budget 5 s");
    println!("[PASS] A2 height formula: {checked} geometries within 1e-9 m, {elapsed:.2} s");
}

/// A3: Walker-24/6/55 sweep at the reference location, 30 deg mask, 40 m
/// street: the [10, 60] m reflection-height band holds 0.63 +- 0.15 of
/// the positive-height samples.
#[test]
fn a3_height_band_fraction() {
    let start = Instant::now();
    let constellation = synth_constellation(&WalkerParams::default(), &test_origin());
    let cfg = CanyonConfig::new(40.0, Vec3::new(0.0, 0.0, 2.0), WallSide::Plus);
    let sim = height_histogram(&constellation, &cfg, (10.0, 60.0));
    let elapsed = start.elapsed().as_secs_f64();
    assert!(sim.samples > 1000, "too few reflection samples: {}", sim.samples);
    assert!(
        (sim.fraction_in_band - 0.63).abs() <= 0.15,
        "band fraction {:.3} outside 0.63 +- 0.15",
        sim.fraction_in_band
    );
    assert!(elapsed < 30.0, "A3 took {elapsed:.1} s, budget 30 s");
    println!(
        "[PASS] A3 height band: {:.1}% of {} samples in [10, 60] m (target 63% +- 15%), {elapsed:.1} s",
        100.0 * sim.fraction_in_band,
        sim.samples
    );
}

/// A4: with l = 1.0723 m, at least 90% of oracle translation margins lie
/// within +-1.5 m and at least 90% of oracle tilt margins within +-5 deg;
/// verbatim formula agreement is logged, not gated.
#[test]
fn a4_margin_distributions() {
    let params = WalkerParams { epochs: 240, ..Default::default() };
    let constellation = synth_constellation(&params, &test_origin());
    let cfg = CanyonConfig::new(40.0, Vec3::new(0.0, 0.0, 2.0), WallSide::Plus);
    let dist = margin_distributions(&constellation, &cfg, 1.0723);
    assert!(!dist.translation.is_empty());
    assert!(
        dist.translation_band_fraction >= 0.90,
        "translation fraction {:.3} below 0.90",
        dist.translation_band_fraction
    );
    assert!(
        dist.tilt_band_fraction >= 0.90,
        "tilt fraction {:.3} below 0.90",
        dist.tilt_band_fraction
    );
    let diff_stats = |rows: &[canyon3dma::margins::MarginRow]| {
        let mut diffs: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.formula.map(|f| (f - (r.outward + r.inward)).abs()))
            .collect();
        diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if diffs.is_empty() { (0.0, 0.0) } else { (diffs[diffs.len() / 2], diffs[diffs.len() - 1]) }
    };
    let (tr_med, tr_max) = diff_stats(&dist.translation);
    let (ti_med, ti_max) = diff_stats(&dist.tilt);
    println!(
        "[INFO] A4 formula-vs-oracle |diff|: translation median {tr_med:.3} m (max {tr_max:.3}), \
         tilt median {:.3} deg (max {:.3})",
        ti_med.to_degrees(),
        ti_max.to_degrees()
    );
    println!(
        "[PASS] A4 margins: {:.1}% translation within +-1.5 m, {:.1}% tilt within +-5 deg \
         (targets >= 90%)",
        100.0 * dist.translation_band_fraction,
        100.0 * dist.tilt_band_fraction
    );
}

/// A5: the 6-plane synthetic scene at sigma = 0.05 m and 50 pts/m2
/// segments into exactly 6 facets with normals within 2 deg and plane
/// offsets within 0.1 m of truth; Graham scan and KNN match brute-force
/// oracles on 1000 random instances each.
#[test]
fn a5_segmentation_recovery() {
    let params = CanyonSceneParams {
        n_buildings: 6,
        noise_sigma: 0.05,
        density: 50.0,
        seed: 42,
        building_length: (18.0, 24.0),
        building_height: (25.0, 40.0),
        ..Default::default()
    };
    let (points, truth) = generate_canyon(&params);
    let (map, _, _) =
        build_map_from_cloud(&points, &MapBuildParams::default(), test_origin(), "a5").unwrap();
    assert_eq!(map.facets.len(), 6, "expected exactly 6 facets");
    for facet in &map.facets {
        let (wall, angle) = truth
            .walls
            .iter()
            .map(|w| (w, normal_deviation(&facet.plane.normal, &w.normal)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        assert!(
            angle.to_degrees() < 2.0,
            "facet {} normal off by {:.2} deg",
            facet.id,
            angle.to_degrees()
        );
        let offset = facet.plane.signed_distance(&wall.anchor).abs();
        assert!(offset < 0.1, "facet {} offset {:.3} m", facet.id, offset);
    }

    // Graham scan vs the O(n^3) hull oracle.
    let mut rng = StdRng::seed_from_u64(55);
    for _ in 0..1000 {
        let n = rng.gen_range(3..=100);
        let pts: Vec<Vec2> = (0..n)
            .map(|_| Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
            .collect();
        let expected = oracle_hull(&pts);
        let mut got = graham_scan(&pts).expect("random sets are non-collinear");
        got.sort_unstable();
        assert_eq!(got, expected, "hull vertex sets differ on {n} points");
    }

    // KNN vs the exhaustive oracle.
    for _ in 0..1000 {
        let n = rng.gen_range(12..=120);
        let k = rng.gen_range(4..=11.min(n - 1));
        let positions: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let cloud: Vec<CloudPoint> = positions
            .iter()
            .enumerate()
            .map(|(i, p)| CloudPoint { id: i as u32, position: *p })
            .collect();
        let lists = knn_index(&cloud, k).unwrap();
        let expected = oracle_knn(&positions, k);
        for (i, want) in expected.iter().enumerate() {
            assert_eq!(lists.neighbors(i), &want[..], "knn differs at point {i}");
        }
    }
    println!(
        "[PASS] A5 segmentation recovery: 6/6 facets within 2 deg / 0.1 m; \
         hull and knn match oracles on 1000 instances each"
    );
}

/// The A6 scenario: a 600-epoch drive between two long walls with 10
/// satellites, 4 of which arrive only via a wall reflection; pseudoranges
/// carry the oracle reflection delays.
struct Scenario {
    points: Vec<CloudPoint>,
    truth: SceneTruth,
    sats: Vec<SatEpoch>,
    route: Vec<ReceiverEpoch>,
    observations: Vec<Observation>,
}

const A6_BIAS: f64 = 35.7;
const A6_NLOS_PRNS: [&str; 4] = ["N01", "N02", "N03", "N04"];

fn build_nlos_scenario() -> Scenario {
    let walls = vec![
        WallSpec { base_center: Vec3::new(20.0, 0.0, 0.0), yaw: 0.0, length: 240.0, height: 35.0 },
        WallSpec { base_center: Vec3::new(-20.0, 0.0, 0.0), yaw: 0.0, length: 240.0, height: 60.0 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (points, labels) = sample_walls(&walls, 6.0, 0.05, &mut rng);
    let mut truth = SceneTruth {
        walls: walls.iter().map(TruthFacet::from_wall).collect(),
        labels,
        schedule: Vec::new(),
    };

    // Fixed directions: 4 low satellites east of the street (blocked by
    // the +x wall, reflected by the -x wall) and 6 clear ones.
    let directions: Vec<(&str, f64, f64)> = vec![
        ("N01", 70.0, 44.0),
        ("N02", 90.0, 48.0),
        ("N03", 110.0, 52.0),
        ("N04", 85.0, 55.0),
        ("L05", 0.0, 40.0),
        ("L06", 180.0, 45.0),
        ("L07", 20.0, 75.0),
        ("L08", 200.0, 78.0),
        ("L09", 340.0, 80.0),
        ("L10", 160.0, 70.0),
    ];
    let position_of = |az_deg: f64, el_deg: f64| {
        let (az, el) = (az_deg.to_radians(), el_deg.to_radians());
        2.2e7 * Vec3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin())
    };

    let mut sats = Vec::new();
    let mut route = Vec::new();
    let mut observations = Vec::new();
    for k in 0..600usize {
        let epoch = k as f64;
        let receiver = Vec3::new(0.0, -30.0 + 0.1 * k as f64, 2.0);
        route.push(ReceiverEpoch { epoch, position: receiver });
        for (prn, az, el) in &directions {
            let s = position_of(*az, *el);
            sats.push(SatEpoch { prn: prn.to_string(), epoch, position: s });
            let verdict = oracle_classify(&s, &receiver, &truth, 1e-6);
            let range = (s - receiver).norm();
            match verdict.classification {
                Classification::Nlos => {
                    assert!(
                        A6_NLOS_PRNS.contains(prn),
                        "unexpected NLOS satellite {prn} at epoch {epoch}"
                    );
                    let (facet, delay, _) = *verdict
                        .reflections
                        .iter()
                        .filter(|x| !x.2)
                        .min_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap())
                        .unwrap();
                    truth.schedule.push(NlosInjection {
                        epoch,
                        prn: prn.to_string(),
                        facet,
                        delay,
                    });
                    observations.push(Observation {
                        epoch,
                        prn: prn.to_string(),
                        pseudorange: range + A6_BIAS + delay,
                    });
                }
                Classification::Los | Classification::LosPlusNlos => {
                    assert!(
                        !A6_NLOS_PRNS.contains(prn),
                        "intended NLOS satellite {prn} came out {:?} at epoch {epoch}",
                        verdict.classification
                    );
                    observations.push(Observation {
                        epoch,
                        prn: prn.to_string(),
                        pseudorange: range + A6_BIAS,
                    });
                }
                Classification::Blocked => {
                    panic!("satellite {prn} fully blocked at epoch {epoch}")
                }
            }
        }
    }
    // Every epoch must carry all four injections, with delays in 5-30 m.
    assert_eq!(truth.schedule.len(), 4 * 600);
    for inj in &truth.schedule {
        assert!(
            inj.delay > 5.0 && inj.delay < 30.0,
            "injected delay {} outside 5-30 m",
            inj.delay
        );
    }
    Scenario { points, truth, sats, route, observations }
}

fn solve_all(observations: &[Observation], sats: &[SatEpoch]) -> Vec<PositionFix> {
    let mut by_epoch: std::collections::BTreeMap<u64, Vec<Observation>> = Default::default();
    for o in observations {
        by_epoch.entry(o.epoch.to_bits()).or_default().push(o.clone());
    }
    by_epoch
        .into_values()
        .map(|group| spp_solve(&group, sats).expect("enough satellites"))
        .collect()
}

/// A6: with injected NLOS delays of 5-30 m on 4 of 10 satellites over 600
/// epochs, exact corrections restore the fix to <= 1e-3 m and the
/// production pipeline cuts the 3D RMS to at most 0.2x uncorrected.
#[test]
fn a6_end_to_end_correction() {
    let start = Instant::now();
    let scenario = build_nlos_scenario();

    // Uncorrected baseline.
    let uncorrected = solve_all(&scenario.observations, &scenario.sats);
    let uncorrected_rms = error_series(&uncorrected, &scenario.route).summary_3d.rms;

    // Exact corrections straight from the injection schedule.
    let schedule: std::collections::HashMap<(u64, &str), f64> = scenario
        .truth
        .schedule
        .iter()
        .map(|inj| ((inj.epoch.to_bits(), inj.prn.as_str()), inj.delay))
        .collect();
    let exact: Vec<Observation> = scenario
        .observations
        .iter()
        .map(|o| {
            let delay = schedule.get(&(o.epoch.to_bits(), o.prn.as_str())).copied().unwrap_or(0.0);
            Observation { pseudorange: o.pseudorange - delay, ..o.clone() }
        })
        .collect();
    let exact_fixes = solve_all(&exact, &scenario.sats);
    let exact_rms = error_series(&exact_fixes, &scenario.route).summary_3d.rms;
    assert!(exact_rms <= 1e-3, "exact-correction RMS {exact_rms} m above 1e-3");

    // Production pipeline: segment the noisy cloud, trace, correct, solve.
    let (map, _, _) = build_map_from_cloud(
        &scenario.points,
        &MapBuildParams::default(),
        test_origin(),
        "a6",
    )
    .unwrap();
    assert_eq!(map.facets.len(), 2, "scenario should segment into its two walls");
    let run = trace_run(&scenario.sats, &scenario.route, &map, DelayPolicy::Min);
    assert_eq!(run.skipped, 0);
    let (corrected, report) =
        correct_observations(&scenario.observations, &run.rows, CorrectionPolicy::NlosOnly);
    assert_eq!(report.corrected, 4 * 600, "every injected row should be corrected");
    assert_eq!(report.dropped_blocked, 0);
    let corrected_fixes = solve_all(&corrected, &scenario.sats);
    let corrected_rms = error_series(&corrected_fixes, &scenario.route).summary_3d.rms;
    assert!(
        corrected_rms <= 0.2 * uncorrected_rms,
        "corrected RMS {corrected_rms:.3} m vs uncorrected {uncorrected_rms:.3} m"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "A6 took {elapsed:.1} s, budget 60 s");
    println!(
        "[PASS] A6 end-to-end: uncorrected RMS {uncorrected_rms:.3} m -> corrected {corrected_rms:.6} m \
         (ratio {:.4}), exact-correction RMS {exact_rms:.2e} m, {elapsed:.1} s",
        corrected_rms / uncorrected_rms
    );
}

fn throughput_map() -> PlanarMap {
    // 500 rectangular facets along a 4 km street: 100 in the [10, 60] m
    // band, 400 outside it (low strips and high panels).
    let mut facets = Vec::new();
    for i in 0..500u32 {
        let side = if i % 2 == 0 { 20.0 } else { -20.0 };
        let y0 = (i / 2) as f64 * 16.0;
        let (z0, z1) = match i % 10 {
            0 | 1 => (12.0, 48.0),                // in band: 100 facets
            2..=6 => (62.0, 95.0),    // high, out of band: 250
            _ => (0.5, 9.0),                      // low, out of band: 150
        };
        let normal = if side > 0.0 { -Vec3::x() } else { Vec3::x() };
        let boundary = vec![
            Vec3::new(side, y0, z0),
            Vec3::new(side, y0 + 16.0, z0),
            Vec3::new(side, y0 + 16.0, z1),
            Vec3::new(side, y0, z1),
        ];
        let winding =
            (boundary[1] - boundary[0]).cross(&(boundary[2] - boundary[0])).dot(&normal);
        let boundary =
            if winding < 0.0 { boundary.into_iter().rev().collect() } else { boundary };
        let anchor = Vec3::new(side, y0 + 8.0, 0.5 * (z0 + z1));
        facets.push(Facet::new(
            i,
            Plane { normal, tau: -normal.dot(&anchor), anchor },
            boundary,
            i,
        ));
    }
    PlanarMap { origin: test_origin(), facets, provenance: "throughput".into() }
}

/// A7: 500-facet map x 32 satellites x 1200 epochs classifies at >= 30
/// epochs/s on a single worker; the [10, 60] m height filter (2/3 of the
/// facets out of band) gives >= 3x throughput with bit-identical in-band
/// facet contributions.
#[test]
fn a7_throughput_and_height_filter() {
    let map = throughput_map();
    let filtered = filter_by_height(&map, 10.0, 60.0);
    assert_eq!(filtered.facets.len(), 100);

    let mut rng = StdRng::seed_from_u64(77);
    let mut sats = Vec::new();
    let mut route = Vec::new();
    let directions: Vec<(f64, f64)> = (0..32)
        .map(|_| {
            (
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(15f64.to_radians()..85f64.to_radians()),
            )
        })
        .collect();
    for k in 0..1200usize {
        let epoch = k as f64;
        route.push(ReceiverEpoch {
            epoch,
            position: Vec3::new(0.0, 1800.0 + 0.25 * k as f64, 2.0),
        });
        for (i, (az, el)) in directions.iter().enumerate() {
            sats.push(SatEpoch {
                prn: format!("S{i:02}"),
                epoch,
                position: 2.2e7
                    * Vec3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin()),
            });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    // Best of two runs per map to keep the ratio out of scheduler noise.
    let (full, full_s, kept, kept_s) = pool.install(|| {
        let time_one = |m: &PlanarMap| {
            let t = Instant::now();
            let run = trace_run(&sats, &route, m, DelayPolicy::Min);
            (run, t.elapsed().as_secs_f64())
        };
        let (full, f1) = time_one(&map);
        let (_, f2) = time_one(&map);
        let (kept, k1) = time_one(&filtered);
        let (_, k2) = time_one(&filtered);
        (full, f1.min(f2), kept, k1.min(k2))
    });

    let epochs_per_s = 1200.0 / full_s;
    assert!(epochs_per_s >= 30.0, "throughput {epochs_per_s:.1} epochs/s below 30");
    let speedup = full_s / kept_s;
    assert!(speedup >= 3.0, "height filter speedup {speedup:.2}x below 3x");

    // In-band facet contributions must be bit-identical between runs.
    let in_band: std::collections::HashSet<u32> =
        filtered.facets.iter().map(|f| f.id).collect();
    for (a, b) in full.rows.iter().zip(&kept.rows) {
        assert_eq!(a.prn, b.prn);
        assert_eq!(a.epoch, b.epoch);
        let blocked_in_band: Vec<u32> =
            a.blocking.iter().copied().filter(|f| in_band.contains(f)).collect();
        assert_eq!(blocked_in_band, b.blocking);
        let refl_in_band: Vec<(u32, u64)> = a
            .reflections
            .iter()
            .filter(|x| in_band.contains(&x.facet))
            .map(|x| (x.facet, x.delay.to_bits()))
            .collect();
        let refl_kept: Vec<(u32, u64)> =
            b.reflections.iter().map(|x| (x.facet, x.delay.to_bits())).collect();
        assert_eq!(refl_in_band, refl_kept);
    }
    println!(
        "[PASS] A7 throughput: {epochs_per_s:.0} epochs/s full map (>= 30), \
         filter speedup {speedup:.1}x (>= 3x), in-band contributions bit-identical"
    );
}

/// A8: identical seeds with different worker counts produce byte-identical
/// output files through the CLI (synth -> segment -> trace).
#[test]
fn a8_determinism_across_workers() {
    let bin = env!("CARGO_BIN_EXE_canyon3dma");
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let run = |args: &[&str]| {
        let output = std::process::Command::new(bin)
            .args(args)
            .output()
            .expect("spawn canyon3dma");
        assert!(
            output.status.success(),
            "canyon3dma {args:?} failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    };

    // Two synth runs with the same seed must agree byte for byte.
    for tag in ["a", "b"] {
        run(&[
            "synth",
            "--seed",
            "9",
            "--buildings",
            "4",
            "--density",
            "8",
            "--noise",
            "0.03",
            "--out-cloud",
            path(&format!("cloud_{tag}.ply")).to_str().unwrap(),
            "--out-truth",
            path(&format!("truth_{tag}.json")).to_str().unwrap(),
        ]);
    }
    let cloud_a = std::fs::read(path("cloud_a.ply")).unwrap();
    assert_eq!(cloud_a, std::fs::read(path("cloud_b.ply")).unwrap());

    // Satellites and a short route, written through the e-frame interface.
    let origin = test_origin();
    let mut sat_rows = Vec::new();
    let mut route_rows = Vec::new();
    let mut rng = StdRng::seed_from_u64(88);
    for k in 0..40usize {
        let epoch = k as f64;
        route_rows.push(canyon3dma::io::RouteRow {
            epoch,
            ecef: canyon3dma::frames::enu_to_ecef(Vec3::new(0.0, 10.0 + k as f64, 2.0), &origin),
        });
        for i in 0..8 {
            let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let el: f64 = rng.gen_range(0.4..1.4);
            let enu =
                2.2e7 * Vec3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
            sat_rows.push(canyon3dma::io::SatRow {
                epoch,
                prn: format!("G{i:02}"),
                ecef: canyon3dma::frames::enu_to_ecef(enu, &origin),
            });
        }
    }
    canyon3dma::io::write_sats(&path("sats.csv"), &sat_rows).unwrap();
    canyon3dma::io::write_route(&path("route.csv"), &route_rows).unwrap();

    for workers in ["1", "4"] {
        run(&[
            "segment",
            "--workers",
            workers,
            "--cloud",
            path("cloud_a.ply").to_str().unwrap(),
            "--out",
            path(&format!("map_w{workers}.json")).to_str().unwrap(),
            "--min-slice-size",
            "150",
        ]);
        run(&[
            "trace",
            "--workers",
            workers,
            "--map",
            path(&format!("map_w{workers}.json")).to_str().unwrap(),
            "--sats",
            path("sats.csv").to_str().unwrap(),
            "--route",
            path("route.csv").to_str().unwrap(),
            "--out",
            path(&format!("trace_w{workers}.csv")).to_str().unwrap(),
        ]);
    }
    let map1 = std::fs::read(path("map_w1.json")).unwrap();
    let map4 = std::fs::read(path("map_w4.json")).unwrap();
    assert_eq!(map1, map4, "maps differ across worker counts");
    let trace1 = std::fs::read(path("trace_w1.csv")).unwrap();
    let trace4 = std::fs::read(path("trace_w4.csv")).unwrap();
    assert_eq!(trace1, trace4, "traces differ across worker counts");
    assert!(!trace1.is_empty());
    println!(
        "[PASS] A8 determinism: synth/segment/trace outputs byte-identical across seeds and 1 vs 4 workers"
    );
}
