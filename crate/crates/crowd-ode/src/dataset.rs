use crate::error::{Error, Result};
use crate::scene::SpawnMode;
use crate::state::CrowdState;
use crate::trajectory::{self, Trajectory};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Knobs for ground-truth data generation.
#[derive(Debug, Clone, Copy)]
pub struct GenSpec {
    pub n_agents: usize,
    pub n_runs: usize,
    pub seed: u64,
    pub t_max: f64,
    pub record_every: usize,
    pub spawn_mode: SpawnMode,
    pub min_separation: f64,
}

/// One training sample: crowd states at a window's start and end.
#[derive(Debug, Clone)]
pub struct WindowPair {
    pub z0: CrowdState,
    pub z1: CrowdState,
    pub dt_window: f64,
}

/// Slides windows of `window_steps` recorded intervals over the trajectory.
/// A window is dropped when any agent is flagged exited at its end record
/// (flags are monotone, so this covers the whole window) or when the records
/// are not uniformly spaced (the off-grid final snapshot of a truncated run).
pub fn slice_windows(traj: &Trajectory, window_steps: usize, stride: usize) -> Vec<WindowPair> {
    assert!(stride >= 1, "stride must be >= 1");
    assert!(window_steps >= 1, "window_steps must be >= 1");
    let snaps = &traj.snapshots;
    let mut out = Vec::new();
    if snaps.len() <= window_steps {
        return out;
    }
    let nominal = window_steps as f64 * traj.record_interval;
    let mut start = 0;
    while start + window_steps < snaps.len() {
        let end = start + window_steps;
        let span = snaps[end].time - snaps[start].time;
        if (span - nominal).abs() <= 1e-9 && !snaps[end].exited.iter().any(|&e| e) {
            let z0 = CrowdState {
                positions: snaps[start].positions.clone(),
                velocities: snaps[start].velocities.clone(),
                time: 0.0,
            };
            let z1 = CrowdState {
                positions: snaps[end].positions.clone(),
                velocities: snaps[end].velocities.clone(),
                time: span,
            };
            out.push(WindowPair {
                z0,
                z1,
                dt_window: span,
            });
        }
        start += stride;
    }
    out
}

pub const MANIFEST_FORMAT: &str = "crowd-ode-manifest-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Trajectory file path relative to the manifest.
    pub file: String,
    pub seed: u64,
    pub n_agents: usize,
    pub n_records: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    /// Which simulator produced the data ("sfm" or "orca").
    pub source: String,
    pub seed: u64,
    pub config_digest: String,
    pub n_agents: usize,
    pub record_interval: f64,
    pub files: Vec<ManifestEntry>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Manifest(format!("serialization: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    if m.format != MANIFEST_FORMAT {
        return Err(Error::Manifest(format!(
            "{}: unknown format tag {:?}",
            path.display(),
            m.format
        )));
    }
    Ok(m)
}

/// Loads every trajectory listed in the manifest, checking that they agree
/// on agent count and recording interval.
pub fn load_trajectories(manifest_path: &Path) -> Result<(Vec<Trajectory>, Manifest)> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut trajs = Vec::with_capacity(manifest.files.len());
    for entry in &manifest.files {
        let path: PathBuf = base.join(&entry.file);
        let (traj, _meta) = trajectory::load(&path)?;
        if traj.n_agents() != manifest.n_agents {
            return Err(Error::Manifest(format!(
                "{}: agent count {} does not match manifest ({})",
                path.display(),
                traj.n_agents(),
                manifest.n_agents
            )));
        }
        if (traj.record_interval - manifest.record_interval).abs() > 1e-12 {
            return Err(Error::Manifest(format!(
                "{}: record interval {} does not match manifest ({})",
                path.display(),
                traj.record_interval,
                manifest.record_interval
            )));
        }
        trajs.push(traj);
    }
    Ok((trajs, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Snapshot;
    use crate::vec2::Vec2;

    fn synthetic_traj(n_records: usize, exit_at: Option<usize>) -> Trajectory {
        let dt = 0.01;
        let snapshots: Vec<Snapshot> = (0..n_records)
            .map(|k| {
                let exited = exit_at.map_or(false, |e| k >= e);
                Snapshot {
                    step_index: k as u64,
                    time: k as f64 * dt,
                    positions: vec![Vec2::new(k as f64, 0.0), Vec2::new(0.0, k as f64)],
                    velocities: vec![Vec2::new(1.0, 0.0); 2],
                    exited: vec![exited, false],
                }
            })
            .collect();
        Trajectory {
            snapshots,
            exit_times: vec![exit_at.map(|e| e as f64 * dt), None],
            exit_steps: vec![exit_at.map(|e| e as u64), None],
            record_interval: dt,
        }
    }

    #[test]
    fn non_overlapping_windows_count() {
        let traj = synthetic_traj(11, None);
        let w = slice_windows(&traj, 5, 5);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].z0.positions[0].x, 0.0);
        assert_eq!(w[0].z1.positions[0].x, 5.0);
        assert_eq!(w[1].z0.positions[0].x, 5.0);
        assert_eq!(w[1].z1.positions[0].x, 10.0);
        assert!((w[0].dt_window - 0.05).abs() < 1e-12);
    }

    #[test]
    fn stride_one_window_count() {
        let traj = synthetic_traj(11, None);
        assert_eq!(slice_windows(&traj, 5, 1).len(), 6);
    }

    #[test]
    fn windows_touching_exit_are_dropped() {
        // Agent 0 flagged exited from record 7 onward.
        let traj = synthetic_traj(11, Some(7));
        let w = slice_windows(&traj, 5, 1);
        // Only starts 0 and 1 end before record 7.
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].z0.positions[0].x, 0.0);
        assert_eq!(w[1].z0.positions[0].x, 1.0);
    }

    #[test]
    fn off_grid_tail_record_is_skipped() {
        let mut traj = synthetic_traj(11, None);
        // Simulate a truncated run: last snapshot off the uniform grid.
        traj.snapshots[10].time = traj.snapshots[9].time + 0.004;
        let w = slice_windows(&traj, 5, 5);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn short_trajectory_yields_no_windows() {
        let traj = synthetic_traj(5, None);
        assert!(slice_windows(&traj, 5, 1).is_empty());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = Manifest {
            format: MANIFEST_FORMAT.into(),
            source: "sfm".into(),
            seed: 7,
            config_digest: "abc".into(),
            n_agents: 5,
            record_interval: 0.01,
            files: vec![ManifestEntry {
                file: "run000.csv".into(),
                seed: 7,
                n_agents: 5,
                n_records: 100,
            }],
        };
        write_manifest(&path, &m).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.files.len(), 1);
        assert_eq!(back.files[0].file, "run000.csv");
    }

    #[test]
    fn corrupt_manifest_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, "{ not json").unwrap();
        let err = read_manifest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("manifest.json"), "{msg}");
    }
}
