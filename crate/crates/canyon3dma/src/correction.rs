//! Pseudorange correction from traced reflection delays and single-epoch
//! least-squares positioning.

use nalgebra::{DMatrix, DVector, Vector4};
use std::collections::HashMap;
use thiserror::Error;

use crate::frames::Vec3;
use crate::raytrace::{Classification, RayPath, ReceiverEpoch, SatEpoch};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("need at least 4 matched satellites, got {0}")]
    TooFewSatellites(usize),
}

/// One pseudorange measurement.
#[derive(Debug, Clone)]
pub struct Observation {
    pub epoch: f64,
    pub prn: String,
    pub pseudorange: f64,
}

/// Single-epoch least-squares fix.
#[derive(Debug, Clone)]
pub struct PositionFix {
    pub epoch: f64,
    pub position: Vec3,
    pub clock_bias: f64,
    pub used_satellites: usize,
    pub converged: bool,
}

/// How LOS+NLOS superpositions are corrected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrectionPolicy {
    /// Correct NLOS rows only; the receiver is presumed locked to the
    /// direct path when one exists.
    #[default]
    NlosOnly,
    /// Additionally subtract the shortest usable reflection delay from
    /// LOS+NLOS rows.
    AllReflections,
}

/// Bookkeeping from a correction pass.
#[derive(Debug, Default, Clone, Copy)]
pub struct CorrectionReport {
    pub corrected: usize,
    pub dropped_blocked: usize,
    pub unmatched: usize,
}

/// Applies traced delays to pseudoranges: NLOS rows are shortened by the
/// applied delay, blocked rows are dropped, LOS rows pass through.
/// Observations without a matching trace row pass through unchanged.
pub fn correct_observations(
    observations: &[Observation],
    paths: &[RayPath],
    policy: CorrectionPolicy,
) -> (Vec<Observation>, CorrectionReport) {
    let index: HashMap<(u64, &str), &RayPath> =
        paths.iter().map(|p| ((p.epoch.to_bits(), p.prn.as_str()), p)).collect();
    let mut out = Vec::with_capacity(observations.len());
    let mut report = CorrectionReport::default();
    for obs in observations {
        match index.get(&(obs.epoch.to_bits(), obs.prn.as_str())) {
            None => {
                report.unmatched += 1;
                out.push(obs.clone());
            }
            Some(path) => match path.classification {
                Classification::Blocked => report.dropped_blocked += 1,
                Classification::Nlos => {
                    report.corrected += 1;
                    out.push(Observation {
                        pseudorange: obs.pseudorange - path.applied_delay,
                        ..obs.clone()
                    });
                }
                Classification::LosPlusNlos if policy == CorrectionPolicy::AllReflections => {
                    let delay = path
                        .reflections
                        .iter()
                        .filter(|r| !r.occluded)
                        .map(|r| (r.delay, r.facet))
                        .min_by(|a, b| a.partial_cmp(b).unwrap())
                        .map(|(d, _)| d)
                        .unwrap_or(0.0);
                    report.corrected += 1;
                    out.push(Observation { pseudorange: obs.pseudorange - delay, ..obs.clone() });
                }
                _ => out.push(obs.clone()),
            },
        }
    }
    (out, report)
}

/// Gauss-Newton single point positioning on pseudorange residuals
/// rho_i - (||S_i - X|| + b). Rank-deficient geometry is flagged, not
/// fatal.
pub fn spp_solve(
    observations: &[Observation],
    sats: &[SatEpoch],
) -> Result<PositionFix, SolveError> {
    let positions: HashMap<(u64, &str), Vec3> = sats
        .iter()
        .map(|s| ((s.epoch.to_bits(), s.prn.as_str()), s.position))
        .collect();
    let matched: Vec<(Vec3, f64)> = observations
        .iter()
        .filter_map(|o| {
            positions
                .get(&(o.epoch.to_bits(), o.prn.as_str()))
                .map(|&p| (p, o.pseudorange))
        })
        .collect();
    if matched.len() < 4 {
        return Err(SolveError::TooFewSatellites(matched.len()));
    }
    let epoch = observations.first().map(|o| o.epoch).unwrap_or(0.0);

    let mut state = Vector4::<f64>::zeros();
    let mut converged = false;
    for _ in 0..20 {
        let position = Vec3::new(state.x, state.y, state.z);
        let mut jacobian = DMatrix::<f64>::zeros(matched.len(), 4);
        let mut residuals = DVector::<f64>::zeros(matched.len());
        for (i, (sat, rho)) in matched.iter().enumerate() {
            let range = (sat - position).norm();
            let unit = (sat - position) / range;
            residuals[i] = rho - (range + state.w);
            jacobian[(i, 0)] = -unit.x;
            jacobian[(i, 1)] = -unit.y;
            jacobian[(i, 2)] = -unit.z;
            jacobian[(i, 3)] = 1.0;
        }
        let svd = jacobian.svd(true, true);
        if svd.rank(1e-8) < 4 {
            break;
        }
        let Ok(delta) = svd.solve(&residuals, 1e-12) else { break };
        state += Vector4::new(delta[0], delta[1], delta[2], delta[3]);
        if delta.fixed_rows::<3>(0).norm() < 1e-4 {
            converged = true;
            break;
        }
    }
    Ok(PositionFix {
        epoch,
        position: Vec3::new(state.x, state.y, state.z),
        clock_bias: state.w,
        used_satellites: matched.len(),
        converged,
    })
}

/// Per-epoch position error against the truth route.
#[derive(Debug, Clone)]
pub struct ErrorRow {
    pub epoch: f64,
    pub east: f64,
    pub north: f64,
    pub up: f64,
    pub horizontal: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ErrorSummary {
    pub mean: f64,
    pub rms: f64,
    pub max: f64,
}

/// Error table plus summaries of the 3D error norm.
#[derive(Debug, Clone)]
pub struct ErrorSeries {
    pub rows: Vec<ErrorRow>,
    pub summary_3d: ErrorSummary,
    pub summary_horizontal: ErrorSummary,
    pub skipped: usize,
}

fn summarize(values: impl Iterator<Item = f64> + Clone) -> ErrorSummary {
    let n = values.clone().count();
    if n == 0 {
        return ErrorSummary::default();
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let rms = (values.clone().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let max = values.fold(0.0f64, f64::max);
    ErrorSummary { mean, rms, max }
}

/// Differences fixes against the truth route, epoch by epoch. Fixes with
/// no truth epoch are skipped and counted.
pub fn error_series(fixes: &[PositionFix], truth: &[ReceiverEpoch]) -> ErrorSeries {
    let lookup: HashMap<u64, Vec3> =
        truth.iter().map(|r| (r.epoch.to_bits(), r.position)).collect();
    let mut rows = Vec::with_capacity(fixes.len());
    let mut skipped = 0;
    for fix in fixes {
        let Some(&reference) = lookup.get(&fix.epoch.to_bits()) else {
            skipped += 1;
            continue;
        };
        let d = fix.position - reference;
        rows.push(ErrorRow {
            epoch: fix.epoch,
            east: d.x,
            north: d.y,
            up: d.z,
            horizontal: (d.x * d.x + d.y * d.y).sqrt(),
            total: d.norm(),
        });
    }
    ErrorSeries {
        summary_3d: summarize(rows.iter().map(|r| r.total)),
        summary_horizontal: summarize(rows.iter().map(|r| r.horizontal)),
        rows,
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raytrace::Reflection;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn path(prn: &str, class: Classification, delay: f64) -> RayPath {
        RayPath {
            prn: prn.into(),
            epoch: 0.0,
            classification: class,
            blocking: vec![],
            reflections: if delay > 0.0 {
                vec![Reflection {
                    facet: 0,
                    mirror: Vec3::zeros(),
                    point: Vec3::zeros(),
                    delay,
                    occluded: false,
                }]
            } else {
                vec![]
            },
            applied_delay: if class == Classification::Nlos { delay } else { 0.0 },
        }
    }

    fn obs(prn: &str, rho: f64) -> Observation {
        Observation { epoch: 0.0, prn: prn.into(), pseudorange: rho }
    }

    #[test]
    fn correction_per_classification() {
        let paths = vec![
            path("G01", Classification::Los, 0.0),
            path("G02", Classification::Nlos, 16.568_542_494_923_804),
            path("G03", Classification::Blocked, 0.0),
            path("G04", Classification::LosPlusNlos, 5.0),
        ];
        let observations = vec![
            obs("G01", 2.0e7),
            obs("G02", 2.0e7),
            obs("G03", 2.0e7),
            obs("G04", 2.0e7),
            obs("G99", 2.0e7),
        ];
        let (corrected, report) =
            correct_observations(&observations, &paths, CorrectionPolicy::NlosOnly);
        assert_eq!(corrected.len(), 4); // blocked dropped
        assert_eq!(report.dropped_blocked, 1);
        assert_eq!(report.unmatched, 1);
        assert_eq!(report.corrected, 1);
        let g2 = corrected.iter().find(|o| o.prn == "G02").unwrap();
        assert_abs_diff_eq!(g2.pseudorange, 2.0e7 - 16.568_542_494_923_804, epsilon = 1e-9);
        // LOS and LOS+NLOS untouched under the default policy.
        for prn in ["G01", "G04", "G99"] {
            let o = corrected.iter().find(|o| o.prn == prn).unwrap();
            assert_eq!(o.pseudorange, 2.0e7);
        }
    }

    #[test]
    fn corrections_never_increase_pseudoranges() {
        let paths = vec![path("G02", Classification::Nlos, 7.25)];
        let observations = vec![obs("G02", 2.0e7)];
        let (corrected, _) =
            correct_observations(&observations, &paths, CorrectionPolicy::NlosOnly);
        assert!(corrected[0].pseudorange <= 2.0e7);
    }

    fn synth_sats(rng: &mut StdRng, n: usize) -> Vec<SatEpoch> {
        (0..n)
            .map(|i| {
                let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let el: f64 = rng.gen_range(0.3..1.4);
                let r = 2.2e7;
                SatEpoch {
                    prn: format!("G{:02}", i + 1),
                    epoch: 0.0,
                    position: Vec3::new(
                        r * el.cos() * az.sin(),
                        r * el.cos() * az.cos(),
                        r * el.sin(),
                    ),
                }
            })
            .collect()
    }

    fn forward_obs(sats: &[SatEpoch], truth: Vec3, bias: f64) -> Vec<Observation> {
        sats.iter()
            .map(|s| Observation {
                epoch: 0.0,
                prn: s.prn.clone(),
                pseudorange: (s.position - truth).norm() + bias,
            })
            .collect()
    }

    #[test]
    fn recovers_noise_free_position_and_bias() {
        let mut rng = StdRng::seed_from_u64(30);
        for _ in 0..20 {
            let sats = synth_sats(&mut rng, 8);
            let truth = Vec3::new(
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(0.0..30.0),
            );
            let bias = rng.gen_range(-1e3..1e3);
            let fix = spp_solve(&forward_obs(&sats, truth, bias), &sats).unwrap();
            assert!(fix.converged);
            assert!((fix.position - truth).norm() < 1e-3);
            assert!((fix.clock_bias - bias).abs() < 1e-3);
        }
    }

    #[test]
    fn common_mode_offset_absorbed_by_clock() {
        let mut rng = StdRng::seed_from_u64(31);
        let sats = synth_sats(&mut rng, 8);
        let truth = Vec3::new(10.0, -5.0, 2.0);
        let base = forward_obs(&sats, truth, 100.0);
        let shifted: Vec<Observation> = base
            .iter()
            .map(|o| Observation { pseudorange: o.pseudorange + 10.0, ..o.clone() })
            .collect();
        let fix_a = spp_solve(&base, &sats).unwrap();
        let fix_b = spp_solve(&shifted, &sats).unwrap();
        assert!((fix_a.position - fix_b.position).norm() < 1e-3);
        assert_abs_diff_eq!(fix_b.clock_bias - fix_a.clock_bias, 10.0, epsilon = 1e-3);
    }

    #[test]
    fn translation_equivariance() {
        let mut rng = StdRng::seed_from_u64(32);
        let sats = synth_sats(&mut rng, 10);
        let truth = Vec3::new(3.0, 4.0, 5.0);
        let shift = Vec3::new(250.0, -80.0, 40.0);
        let moved: Vec<SatEpoch> = sats
            .iter()
            .map(|s| SatEpoch { position: s.position + shift, ..s.clone() })
            .collect();
        let fix_a = spp_solve(&forward_obs(&sats, truth, 50.0), &sats).unwrap();
        let fix_b = spp_solve(&forward_obs(&moved, truth + shift, 50.0), &moved).unwrap();
        assert!((fix_b.position - (fix_a.position + shift)).norm() < 1e-3);
    }

    #[test]
    fn rank_deficient_geometry_flagged() {
        // All satellites at the same position: rank 1 normal matrix.
        let sats: Vec<SatEpoch> = (0..6)
            .map(|i| SatEpoch {
                prn: format!("G{:02}", i + 1),
                epoch: 0.0,
                position: Vec3::new(1e7, 1e7, 1e7),
            })
            .collect();
        let observations: Vec<Observation> =
            sats.iter().map(|s| obs(&s.prn, (s.position).norm())).collect();
        let fix = spp_solve(&observations, &sats).unwrap();
        assert!(!fix.converged);
    }

    #[test]
    fn too_few_satellites_is_an_error() {
        let mut rng = StdRng::seed_from_u64(33);
        let sats = synth_sats(&mut rng, 3);
        let observations = forward_obs(&sats, Vec3::zeros(), 0.0);
        assert!(matches!(
            spp_solve(&observations, &sats),
            Err(SolveError::TooFewSatellites(3))
        ));
    }

    #[test]
    fn error_series_zero_and_constant_offset() {
        let truth: Vec<ReceiverEpoch> = (0..10)
            .map(|i| ReceiverEpoch {
                epoch: i as f64,
                position: Vec3::new(i as f64, 2.0 * i as f64, 1.0),
            })
            .collect();
        let exact: Vec<PositionFix> = truth
            .iter()
            .map(|r| PositionFix {
                epoch: r.epoch,
                position: r.position,
                clock_bias: 0.0,
                used_satellites: 8,
                converged: true,
            })
            .collect();
        let series = error_series(&exact, &truth);
        assert_eq!(series.rows.len(), 10);
        assert_eq!(series.summary_3d.rms, 0.0);
        assert_eq!(series.summary_3d.max, 0.0);

        let offset: Vec<PositionFix> = exact
            .iter()
            .map(|f| PositionFix { position: f.position + Vec3::x(), ..f.clone() })
            .collect();
        let series = error_series(&offset, &truth);
        for row in &series.rows {
            assert_abs_diff_eq!(row.horizontal, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row.east, 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(series.summary_3d.rms, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(series.summary_horizontal.mean, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_truth_epochs_skipped() {
        let truth = vec![ReceiverEpoch { epoch: 0.0, position: Vec3::zeros() }];
        let fixes = vec![
            PositionFix {
                epoch: 0.0,
                position: Vec3::zeros(),
                clock_bias: 0.0,
                used_satellites: 5,
                converged: true,
            },
            PositionFix {
                epoch: 7.0,
                position: Vec3::zeros(),
                clock_bias: 0.0,
                used_satellites: 5,
                converged: true,
            },
        ];
        let series = error_series(&fixes, &truth);
        assert_eq!(series.rows.len(), 1);
        assert_eq!(series.skipped, 1);
    }
}
