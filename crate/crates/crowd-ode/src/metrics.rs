use crate::dataset::GenSpec;
use crate::error::{Error, Result};
use crate::forcefield::ForceField;
use crate::orca::{self, OrcaParams};
use crate::scene::Scene;
use crate::sfm::{SfmDerivative, SfmParams};
use crate::solver::{IntegratorConfig, Method};
use crate::state::CrowdState;
use crate::trajectory::{self, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fraction of the crowd that has exited by time `t`.
pub fn ice_rate(exit_times: &[Option<f64>], t: f64) -> f64 {
    if exit_times.is_empty() {
        return 0.0;
    }
    let out = exit_times
        .iter()
        .filter(|e| matches!(e, Some(te) if *te <= t))
        .count();
    out as f64 / exit_times.len() as f64
}

/// Time the last agent leaves, if everyone does.
pub fn evacuation_time(exit_times: &[Option<f64>]) -> Option<f64> {
    let mut worst = f64::NEG_INFINITY;
    for e in exit_times {
        match e {
            Some(t) => worst = worst.max(*t),
            None => return None,
        }
    }
    if worst.is_finite() {
        Some(worst)
    } else {
        None
    }
}

/// 1-Wasserstein distance between two empirical distributions of possibly
/// different sizes, via the quantile-function integral.
pub fn wasserstein1(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Report(
            "distance requires non-empty samples".into(),
        ));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(|p, q| p.partial_cmp(q).unwrap());
    b.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (a.len(), b.len());

    let mut total = 0.0;
    let mut q_prev = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        let q_i = (i + 1) as f64 / n as f64;
        let q_j = (j + 1) as f64 / m as f64;
        let q = q_i.min(q_j);
        total += (q - q_prev) * (a[i] - b[j]).abs();
        q_prev = q;
        if q_i <= q {
            i += 1;
        }
        if q_j <= q {
            j += 1;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Equal-width histogram; `range` lets callers share edges across samples.
pub fn histogram(values: &[f64], n_bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::Report("histogram needs at least one bin".into()));
    }
    let (lo, hi) = match range {
        Some(r) => r,
        None => values.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        ),
    };
    if values.is_empty() || !(hi >= lo) {
        return Err(Error::Report("histogram over empty range".into()));
    }
    let mut counts = vec![0usize; n_bins];
    let width = (hi - lo) / n_bins as f64;
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let idx = if width == 0.0 {
            0
        } else {
            (((v - lo) / width) as usize).min(n_bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(Histogram { lo, hi, counts })
}

/// Valley test for two separated modes: some bin must drop below half of a
/// substantial peak on each side (peaks at least 20% of the tallest bin).
pub fn is_bimodal(counts: &[usize]) -> bool {
    let n = counts.len();
    if n < 3 {
        return false;
    }
    let c_max = *counts.iter().max().unwrap();
    if c_max == 0 {
        return false;
    }
    let floor = 0.2 * c_max as f64;
    let mut prefix = vec![0usize; n];
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        prefix[i] = best;
        best = best.max(c);
    }
    let mut suffix = vec![0usize; n];
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().rev() {
        suffix[i] = best;
        best = best.max(c);
    }
    for j in 1..n - 1 {
        let (l, r) = (prefix[j], suffix[j]);
        if l as f64 >= floor
            && r as f64 >= floor
            && (counts[j] as f64) < 0.5 * l.min(r) as f64
        {
            return true;
        }
    }
    false
}

/// Spacing of the exit-rate curve samples, s.
pub const ICE_GRID_STEP: f64 = 0.5;

/// Exit-rate curve on a fixed grid from 0 to `t_max`.
pub fn ice_curve(exit_times: &[Option<f64>], t_max: f64) -> Vec<(f64, f64)> {
    let n = (t_max / ICE_GRID_STEP).floor() as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 * ICE_GRID_STEP;
            (t, ice_rate(exit_times, t))
        })
        .collect()
}

/// A simulator that can produce an evacuation trajectory.
pub enum SimModel<'a> {
    Sfm(&'a SfmParams),
    Orca(&'a OrcaParams),
    Learned {
        field: &'a ForceField,
        theta: &'a [f64],
        /// Integrator step for the learned dynamics, s.
        step: f64,
    },
}

impl SimModel<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            SimModel::Sfm(_) => "sfm",
            SimModel::Orca(_) => "orca",
            SimModel::Learned { .. } => "learned",
        }
    }

    pub fn step(&self) -> f64 {
        match self {
            SimModel::Sfm(p) => p.step,
            SimModel::Orca(p) => p.step,
            SimModel::Learned { step, .. } => *step,
        }
    }

    pub fn rollout(
        &self,
        scene: &Scene,
        z0: &crate::state::CrowdState,
        t_max: f64,
        record_every: usize,
    ) -> Result<Trajectory> {
        match self {
            SimModel::Sfm(params) => {
                let f = SfmDerivative::new(scene, params);
                let cfg = IntegratorConfig::new(Method::Rk4, params.step)?;
                trajectory::rollout(z0, &f, scene, t_max, cfg, record_every)
            }
            SimModel::Orca(params) => {
                orca::orca_rollout(z0, scene, params, t_max, record_every)
            }
            SimModel::Learned { field, theta, step } => {
                let f = field.derivative(theta, scene)?;
                let cfg = IntegratorConfig::new(Method::Rk4, *step)?;
                trajectory::rollout(z0, &f, scene, t_max, cfg, record_every)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub n_runs: usize,
    pub n_agents: usize,
    pub t_max: f64,
    /// Per-run evacuation time; None when someone never left.
    pub evacuation_times: Vec<Option<f64>>,
    /// Exit times pooled over all runs and agents.
    pub pooled_exit_times: Vec<Option<f64>>,
    /// (time, fraction exited) on the fixed grid, pooled over runs.
    pub ice: Vec<(f64, f64)>,
    pub mean_evacuation_time: Option<f64>,
    /// Fraction of runs where the whole crowd got out.
    pub completion_rate: f64,
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub trajectories: Vec<Trajectory>,
}

/// Runs `gen.n_runs` independent simulations (per-run seed = seed + run) and
/// aggregates exit statistics.
pub fn monte_carlo_eval(
    scene: &Scene,
    model: &SimModel,
    gen: &GenSpec,
) -> Result<EvalOutcome> {
    let trajectories: Vec<Trajectory> = (0..gen.n_runs)
        .into_par_iter()
        .map(|run| {
            let z0 = scene.sample_initial_state(
                gen.n_agents,
                gen.spawn_mode,
                gen.min_separation,
                gen.seed.wrapping_add(run as u64),
            )?;
            model.rollout(scene, &z0, gen.t_max, gen.record_every)
        })
        .collect::<Result<_>>()?;

    let report = summarize(model.label(), gen, &trajectories);
    Ok(EvalOutcome {
        report,
        trajectories,
    })
}

fn summarize(label: &str, gen: &GenSpec, trajectories: &[Trajectory]) -> EvalReport {
    let evacuation_times: Vec<Option<f64>> = trajectories
        .iter()
        .map(|t| evacuation_time(&t.exit_times))
        .collect();
    let pooled: Vec<Option<f64>> = trajectories
        .iter()
        .flat_map(|t| t.exit_times.iter().copied())
        .collect();
    let finished: Vec<f64> = evacuation_times.iter().flatten().copied().collect();
    EvalReport {
        model: label.to_string(),
        n_runs: trajectories.len(),
        n_agents: gen.n_agents,
        t_max: gen.t_max,
        ice: ice_curve(&pooled, gen.t_max),
        mean_evacuation_time: if finished.is_empty() {
            None
        } else {
            Some(finished.iter().sum::<f64>() / finished.len() as f64)
        },
        completion_rate: if evacuation_times.is_empty() {
            0.0
        } else {
            finished.len() as f64 / evacuation_times.len() as f64
        },
        evacuation_times,
        pooled_exit_times: pooled,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelComparison {
    pub model_a: String,
    pub model_b: String,
    /// Largest exit-rate difference over the shared time grid.
    pub max_ice_gap: f64,
    /// Transport distance between evacuation-time samples (finished runs).
    pub w1_evacuation: Option<f64>,
    /// Mean displacement between paired runs at shared snapshot times, m.
    pub paired_ade: Option<f64>,
    pub bimodal_a: Option<bool>,
    pub bimodal_b: Option<bool>,
}

/// Compares two evaluations run with the same seeds (run i pairs with run i).
pub fn compare_models(a: &EvalOutcome, b: &EvalOutcome) -> Result<ModelComparison> {
    let ra = &a.report;
    let rb = &b.report;
    if ra.t_max != rb.t_max {
        return Err(Error::Report(format!(
            "time horizons differ: {} vs {}",
            ra.t_max, rb.t_max
        )));
    }
    let max_ice_gap = ra
        .ice
        .iter()
        .zip(&rb.ice)
        .map(|((_, fa), (_, fb))| (fa - fb).abs())
        .fold(0.0, f64::max);

    let ta: Vec<f64> = ra.evacuation_times.iter().flatten().copied().collect();
    let tb: Vec<f64> = rb.evacuation_times.iter().flatten().copied().collect();
    let w1_evacuation = if ta.is_empty() || tb.is_empty() {
        None
    } else {
        Some(wasserstein1(&ta, &tb)?)
    };

    let (bimodal_a, bimodal_b) = if ta.is_empty() || tb.is_empty() {
        (None, None)
    } else {
        // Shared edges so the two histograms are comparable. Bin count
        // follows the sample count; at 20 bins a 30-sample histogram is
        // sparse enough that the valley test fires on noise.
        let n_bins = ((ta.len().min(tb.len()) as f64).sqrt().round() as usize)
            .clamp(3, HISTOGRAM_BINS);
        let lo = ta.iter().chain(&tb).fold(f64::INFINITY, |m, &v| m.min(v));
        let hi = ta
            .iter()
            .chain(&tb)
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let ha = histogram(&ta, n_bins, Some((lo, hi)))?;
        let hb = histogram(&tb, n_bins, Some((lo, hi)))?;
        (Some(is_bimodal(&ha.counts)), Some(is_bimodal(&hb.counts)))
    };

    let mut ade_sum = 0.0;
    let mut ade_count = 0usize;
    for (traj_a, traj_b) in a.trajectories.iter().zip(&b.trajectories) {
        for snap_a in &traj_a.snapshots {
            // Match snapshots by time; recording grids may differ.
            let found = traj_b
                .snapshots
                .binary_search_by(|s| s.time.partial_cmp(&snap_a.time).unwrap());
            let snap_b = match found {
                Ok(i) => &traj_b.snapshots[i],
                Err(_) => continue,
            };
            if snap_a.positions.len() != snap_b.positions.len() {
                return Err(Error::Report(
                    "paired runs disagree on agent count".into(),
                ));
            }
            for i in 0..snap_a.positions.len() {
                if snap_a.exited[i] || snap_b.exited[i] {
                    continue;
                }
                ade_sum += (snap_a.positions[i] - snap_b.positions[i]).norm();
                ade_count += 1;
            }
        }
    }
    let paired_ade = if ade_count > 0 {
        Some(ade_sum / ade_count as f64)
    } else {
        None
    };

    Ok(ModelComparison {
        model_a: ra.model.clone(),
        model_b: rb.model.clone(),
        max_ice_gap,
        w1_evacuation,
        paired_ade,
        bimodal_a,
        bimodal_b,
    })
}

/// Short-horizon forecast accuracy against reference trajectories, paired
/// with a constant-velocity baseline started from the same states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionAde {
    pub model_ade: f64,
    pub baseline_ade: f64,
    pub horizon: f64,
    pub n_points: usize,
}

/// Anchors forecast windows along each reference trajectory (every
/// `anchor_stride` records, while no agent has exited yet), rolls `model`
/// forward for `horizon` seconds from the recorded state, and accumulates
/// mean position error over all compared (time, agent) points. Agents that
/// have exited in the reference by a compare time are skipped there; the
/// baseline propagates each agent at its anchor velocity.
pub fn prediction_ade(
    scene: &Scene,
    refs: &[Trajectory],
    model: &SimModel,
    horizon: f64,
    anchor_stride: usize,
) -> Result<PredictionAde> {
    if horizon <= 0.0 || anchor_stride == 0 {
        return Err(Error::InvalidConfig(
            "prediction horizon must be > 0 and anchor_stride >= 1".into(),
        ));
    }
    let mut model_sum = 0.0;
    let mut base_sum = 0.0;
    let mut n_points = 0usize;

    for traj in refs {
        if traj.snapshots.len() < 2 {
            continue;
        }
        let interval = traj.snapshots[1].time - traj.snapshots[0].time;
        let n_fwd = (horizon / interval).round() as usize;
        if n_fwd == 0 || (n_fwd as f64 * interval - horizon).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "horizon {horizon} is not a multiple of the record interval {interval}"
            )));
        }
        let steps_per_record = interval / model.step();
        let record_every = steps_per_record.round() as usize;
        if record_every == 0 || (steps_per_record - record_every as f64).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "record interval {interval} is not a multiple of the model step {}",
                model.step()
            )));
        }

        for anchor in (0..traj.snapshots.len()).step_by(anchor_stride) {
            if anchor + n_fwd >= traj.snapshots.len() {
                break;
            }
            let start = &traj.snapshots[anchor];
            if start.exited.iter().any(|&e| e) {
                break;
            }
            let z0 = CrowdState::new(
                start.positions.clone(),
                start.velocities.clone(),
                start.time,
            )?;
            let pred = model.rollout(scene, &z0, horizon, record_every)?;
            for k in 1..=n_fwd {
                let truth = &traj.snapshots[anchor + k];
                // The forecast can end early once every agent has exited;
                // positions are frozen from then on.
                let guess = pred
                    .snapshots
                    .get(k)
                    .unwrap_or_else(|| pred.snapshots.last().unwrap());
                let dt = truth.time - start.time;
                for i in 0..truth.positions.len() {
                    if truth.exited[i] {
                        continue;
                    }
                    let drift = start.positions[i] + start.velocities[i] * dt;
                    model_sum += (guess.positions[i] - truth.positions[i]).norm();
                    base_sum += (drift - truth.positions[i]).norm();
                    n_points += 1;
                }
            }
        }
    }

    if n_points == 0 {
        return Err(Error::Report(
            "no usable forecast windows in the reference trajectories".into(),
        ));
    }
    Ok(PredictionAde {
        model_ade: model_sum / n_points as f64,
        baseline_ade: base_sum / n_points as f64,
        horizon,
        n_points,
    })
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(value).map_err(|e| Error::Report(e.to_string()))?;
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Exit-rate curves as CSV, one column per report.
pub fn save_ice_csv(reports: &[&EvalReport], path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Report("nothing to export".into()));
    }
    let mut out = String::from("time_s");
    for r in reports {
        out.push(',');
        out.push_str(&r.model);
    }
    out.push('\n');
    let n = reports[0].ice.len();
    if reports.iter().any(|r| r.ice.len() != n) {
        return Err(Error::Report("exit-rate grids differ in length".into()));
    }
    for k in 0..n {
        out.push_str(&format!("{:.3}", reports[0].ice[k].0));
        for r in reports {
            out.push_str(&format!(",{:.6}", r.ice[k].1));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Per-run evacuation times as CSV.
pub fn save_evacuation_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("run,evacuation_time_s\n");
    for (run, t) in report.evacuation_times.iter().enumerate() {
        match t {
            Some(t) => out.push_str(&format!("{run},{t:.6}\n")),
            None => out.push_str(&format!("{run},\n")),
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ExitWall, SpawnMode};

    #[test]
    fn exit_rate_counts_only_exited() {
        let times = [Some(1.0), Some(2.0), None, Some(4.0)];
        assert_eq!(ice_rate(&times, 0.5), 0.0);
        assert_eq!(ice_rate(&times, 2.0), 0.5);
        assert_eq!(ice_rate(&times, 100.0), 0.75);
        assert_eq!(ice_rate(&[], 1.0), 0.0);
    }

    #[test]
    fn evacuation_time_requires_everyone_out() {
        assert_eq!(evacuation_time(&[Some(1.0), Some(3.0)]), Some(3.0));
        assert_eq!(evacuation_time(&[Some(1.0), None]), None);
        assert_eq!(evacuation_time(&[]), None);
    }

    #[test]
    fn transport_distance_matches_sorted_mean_for_equal_sizes() {
        let a = [3.0, 1.0, 2.0];
        let b = [0.5, 2.5, 9.0];
        let want = {
            let mut sa: Vec<f64> = a.to_vec();
            let mut sb: Vec<f64> = b.to_vec();
            sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
            sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
            sa.iter()
                .zip(&sb)
                .map(|(x, y): (&f64, &f64)| (x - y).abs())
                .sum::<f64>()
                / 3.0
        };
        let got = wasserstein1(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn transport_distance_translation_and_identity() {
        let a = [1.0, 4.0, 2.0, 8.0];
        assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 1.5).collect();
        let d = wasserstein1(&a, &b).unwrap();
        assert!((d - 1.5).abs() < 1e-12);
    }

    #[test]
    fn transport_distance_handles_unequal_sizes() {
        // Quantile functions: a is 0 on (0, 1/2], 1 on (1/2, 1]; b is 0.5
        // everywhere, so the gap is 0.5 throughout.
        let d = wasserstein1(&[0.0, 1.0], &[0.5]).unwrap();
        assert!((d - 0.5).abs() < 1e-12, "{d}");
        // Against a brute pairing on the common refinement of sizes 2 and 3.
        let d = wasserstein1(&[0.0, 6.0], &[0.0, 3.0, 6.0]).unwrap();
        // Levels: (0,1/3]:|0-0|, (1/3,1/2]:|0-3|, (1/2,2/3]:|6-3|, (2/3,1]:|6-6|.
        let want = (0.5 - 1.0 / 3.0) * 3.0 + (2.0 / 3.0 - 0.5) * 3.0;
        assert!((d - want).abs() < 1e-12, "{d} vs {want}");
    }

    #[test]
    fn histogram_counts_and_edges() {
        let h = histogram(&[0.0, 0.04, 0.5, 0.97, 1.0], HISTOGRAM_BINS, Some((0.0, 1.0)))
            .unwrap();
        assert_eq!(h.counts.len(), 20);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.counts[19], 2);
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
    }

    #[test]
    fn valley_detection_requires_two_substantial_peaks() {
        assert!(is_bimodal(&[5, 1, 6]));
        assert!(is_bimodal(&[0, 8, 3, 1, 2, 9, 0]));
        assert!(!is_bimodal(&[5, 4, 3, 2, 1]));
        assert!(!is_bimodal(&[1, 2, 5, 2, 1]));
        // Second bump too small relative to the main peak.
        assert!(!is_bimodal(&[10, 0, 1]));
        assert!(!is_bimodal(&[3, 3]));
        assert!(!is_bimodal(&[0, 0, 0]));
    }

    #[test]
    fn exit_rate_curve_is_monotone() {
        let times = [Some(0.3), Some(2.0), Some(5.1), None];
        let curve = ice_curve(&times, 10.0);
        assert_eq!(curve.len(), 21);
        assert_eq!(curve[0].0, 0.0);
        for w in curve.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        assert_eq!(curve.last().unwrap().1, 0.75);
    }

    fn scene() -> Scene {
        Scene::square(10.0, 1.0, ExitWall::Right).unwrap()
    }

    fn quick_gen(n_runs: usize, seed: u64) -> GenSpec {
        GenSpec {
            n_agents: 3,
            n_runs,
            seed,
            t_max: 30.0,
            record_every: 10,
            spawn_mode: SpawnMode::Uniform,
            min_separation: 0.7,
        }
    }

    #[test]
    fn evaluation_pairs_runs_by_seed() {
        let sc = scene();
        let params = OrcaParams::default();
        let gen = quick_gen(3, 9);
        let a = monte_carlo_eval(&sc, &SimModel::Orca(&params), &gen).unwrap();
        let b = monte_carlo_eval(&sc, &SimModel::Orca(&params), &gen).unwrap();

        assert_eq!(a.report.n_runs, 3);
        assert_eq!(a.report.evacuation_times, b.report.evacuation_times);

        let cmp = compare_models(&a, &b).unwrap();
        assert_eq!(cmp.max_ice_gap, 0.0);
        assert_eq!(cmp.w1_evacuation, Some(0.0));
        assert_eq!(cmp.paired_ade, Some(0.0));
    }

    #[test]
    fn different_models_show_nonzero_gap() {
        let sc = scene();
        let orca_p = OrcaParams::default();
        let sfm_p = SfmParams::default();
        let gen = quick_gen(2, 4);
        let a = monte_carlo_eval(&sc, &SimModel::Orca(&orca_p), &gen).unwrap();
        let b = monte_carlo_eval(&sc, &SimModel::Sfm(&sfm_p), &gen).unwrap();
        let cmp = compare_models(&a, &b).unwrap();
        assert!(cmp.paired_ade.unwrap_or(0.0) > 0.0);
        assert!(a.report.completion_rate > 0.0);
    }

    #[test]
    fn report_files_are_written() {
        let sc = scene();
        let params = OrcaParams::default();
        let gen = quick_gen(2, 1);
        let out = monte_carlo_eval(&sc, &SimModel::Orca(&params), &gen).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let jp = dir.path().join("report.json");
        save_json(&out.report, &jp).unwrap();
        let body = std::fs::read_to_string(&jp).unwrap();
        assert!(body.contains("\"model\": \"orca\""));

        let ip = dir.path().join("ice.csv");
        save_ice_csv(&[&out.report], &ip).unwrap();
        let csv = std::fs::read_to_string(&ip).unwrap();
        assert!(csv.starts_with("time_s,orca\n"));
        assert_eq!(csv.lines().count(), out.report.ice.len() + 1);

        let ep = dir.path().join("evac.csv");
        save_evacuation_csv(&out.report, &ep).unwrap();
        assert_eq!(
            std::fs::read_to_string(&ep).unwrap().lines().count(),
            out.report.n_runs + 1
        );
    }
}
