use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::solver::{self, IntegratorConfig};
use crate::state::{CrowdState, DerivativeFn};
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Crowd state at one recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step_index: u64,
    pub time: f64,
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub exited: Vec<bool>,
}

/// Recorded rollout: snapshots every `record_every` steps plus per-agent
/// exit bookkeeping (times are linearly interpolated inside the crossing
/// step; `None` means the agent never left).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub exit_times: Vec<Option<f64>>,
    pub exit_steps: Vec<Option<u64>>,
    /// Seconds between consecutive snapshots.
    pub record_interval: f64,
}

impl Trajectory {
    pub fn n_agents(&self) -> usize {
        self.exit_times.len()
    }

    pub fn all_exited(&self) -> bool {
        self.exit_times.iter().all(|t| t.is_some())
    }
}

/// Sidecar metadata stored next to each trajectory file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub format: String,
    pub model: String,
    pub seed: u64,
    pub n_agents: usize,
    pub record_interval: f64,
    pub step_size: f64,
    pub scene: Scene,
    /// Model parameters as free-form JSON (simulator table or checkpoint digest).
    pub params: serde_json::Value,
    pub exit_times: Vec<Option<f64>>,
    pub exit_steps: Vec<Option<u64>>,
}

pub const TRAJECTORY_FORMAT: &str = "crowd-ode-trajectory-v1";

/// Tracks which agents have left the room during a rollout and freezes them:
/// position held at the first outside point, velocity zeroed, excluded from
/// all interactions via the frozen mask.
pub struct ExitTracker {
    pub frozen: Vec<bool>,
    pub exit_times: Vec<Option<f64>>,
    pub exit_steps: Vec<Option<u64>>,
}

impl ExitTracker {
    /// Scans the initial state; agents already outside get exit time 0.
    pub fn new(scene: &Scene, z0: &mut CrowdState) -> Self {
        let n = z0.len();
        let mut t = ExitTracker {
            frozen: vec![false; n],
            exit_times: vec![None; n],
            exit_steps: vec![None; n],
        };
        for i in 0..n {
            if scene.has_exited(z0.positions[i]) {
                t.frozen[i] = true;
                t.exit_times[i] = Some(0.0);
                t.exit_steps[i] = Some(0);
                z0.velocities[i] = Vec2::default();
            }
        }
        t
    }

    pub fn all_frozen(&self) -> bool {
        self.frozen.iter().all(|&f| f)
    }

    /// Detects boundary crossings between `old` and the stepped state `new`
    /// (the step covers [t_old, t_old + h], landing on step index `k_new`),
    /// freezing any agent that ended up outside.
    pub fn apply_crossings(
        &mut self,
        scene: &Scene,
        old: &CrowdState,
        new: &mut CrowdState,
        t_old: f64,
        h: f64,
        k_new: u64,
    ) {
        for i in 0..new.len() {
            if self.frozen[i] || !scene.has_exited(new.positions[i]) {
                continue;
            }
            let alpha = crossing_fraction(scene, old.positions[i], new.positions[i]);
            self.frozen[i] = true;
            self.exit_times[i] = Some(t_old + alpha * h);
            self.exit_steps[i] = Some(k_new);
            new.velocities[i] = Vec2::default();
        }
    }
}

/// Fraction along p -> q at which the segment first leaves the square.
fn crossing_fraction(scene: &Scene, p: Vec2, q: Vec2) -> f64 {
    let hs = scene.side_length;
    let mut alpha = f64::INFINITY;
    if q.x > hs && p.x <= hs {
        alpha = alpha.min((hs - p.x) / (q.x - p.x));
    }
    if q.x < 0.0 && p.x >= 0.0 {
        alpha = alpha.min(p.x / (p.x - q.x));
    }
    if q.y > hs && p.y <= hs {
        alpha = alpha.min((hs - p.y) / (q.y - p.y));
    }
    if q.y < 0.0 && p.y >= 0.0 {
        alpha = alpha.min(p.y / (p.y - q.y));
    }
    if alpha.is_finite() {
        alpha.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn snapshot_of(k: u64, state: &CrowdState, tracker: &ExitTracker) -> Snapshot {
    Snapshot {
        step_index: k,
        time: state.time,
        positions: state.positions.clone(),
        velocities: state.velocities.clone(),
        exited: tracker.frozen.clone(),
    }
}

/// Steps the system until `t_max` or until every agent has exited,
/// recording at multiples of `record_every` steps.
pub fn rollout(
    z0: &CrowdState,
    f: &dyn DerivativeFn,
    scene: &Scene,
    t_max: f64,
    cfg: IntegratorConfig,
    record_every: usize,
) -> Result<Trajectory> {
    if record_every == 0 {
        return Err(Error::InvalidConfig("record_every must be >= 1".into()));
    }
    let h = cfg.step_size;
    let n_steps = (t_max / h + 1e-9).floor() as u64;
    let t0 = z0.time;

    let mut z = z0.clone();
    let mut tracker = ExitTracker::new(scene, &mut z);
    let mut snapshots = Vec::new();

    let mut k: u64 = 0;
    loop {
        let done = k == n_steps || tracker.all_frozen();
        if k % record_every as u64 == 0 || done {
            snapshots.push(snapshot_of(k, &z, &tracker));
        }
        if done {
            break;
        }
        let old = z;
        z = solver::step(f, &old, &tracker.frozen, cfg.method, h)?;
        z.time = t0 + (k + 1) as f64 * h;
        if !z.is_finite() || z.max_abs() > solver::BLOWUP_LIMIT {
            return Err(Error::NumericalBlowup {
                time: z.time,
                what: "rollout state non-finite or beyond limit".into(),
            });
        }
        tracker.apply_crossings(scene, &old, &mut z, old.time, h, k + 1);
        k += 1;
    }

    Ok(Trajectory {
        snapshots,
        exit_times: tracker.exit_times,
        exit_steps: tracker.exit_steps,
        record_interval: record_every as f64 * h,
    })
}

const HEADER: &str = "step_index,time_s,agent_id,pos_x_m,pos_y_m,vel_x_mps,vel_y_mps,exited_flag";

/// Writes the trajectory table and its `.meta.json` sidecar.
pub fn save(traj: &Trajectory, meta: &TrajectoryMeta, csv_path: &Path) -> Result<()> {
    let file = std::fs::File::create(csv_path)
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(csv_path.display().to_string(), e);
    writeln!(w, "{HEADER}").map_err(io_err)?;
    for snap in &traj.snapshots {
        for a in 0..snap.positions.len() {
            writeln!(
                w,
                "{},{:.9},{},{:.9},{:.9},{:.9},{:.9},{}",
                snap.step_index,
                snap.time,
                a,
                snap.positions[a].x,
                snap.positions[a].y,
                snap.velocities[a].x,
                snap.velocities[a].y,
                u8::from(snap.exited[a]),
            )
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;

    let meta_path = meta_path_for(csv_path);
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::TrajectoryFormat(format!("meta serialization: {e}")))?;
    std::fs::write(&meta_path, json).map_err(|e| Error::io(meta_path.display().to_string(), e))
}

pub fn meta_path_for(csv_path: &Path) -> std::path::PathBuf {
    let mut os = csv_path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

/// Reads a trajectory table and its sidecar back into memory.
pub fn load(csv_path: &Path) -> Result<(Trajectory, TrajectoryMeta)> {
    let meta_path = meta_path_for(csv_path);
    let meta_text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let meta: TrajectoryMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::TrajectoryFormat(format!("{}: {e}", meta_path.display())))?;

    let file =
        std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let bad = |line_no: usize, what: &str| {
        Error::TrajectoryFormat(format!("{}:{}: {what}", csv_path.display(), line_no + 1))
    };

    match lines.next() {
        Some((_, Ok(h))) if h == HEADER => {}
        Some((i, Ok(_))) => return Err(bad(i, "unexpected header")),
        Some((i, Err(_))) => return Err(bad(i, "unreadable header")),
        None => return Err(bad(0, "empty file")),
    }

    let mut snapshots: Vec<Snapshot> = Vec::new();
    for (line_no, line) in lines {
        let line = line.map_err(|e| Error::io(csv_path.display().to_string(), e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(bad(line_no, "expected 8 columns"));
        }
        let step: u64 = fields[0].parse().map_err(|_| bad(line_no, "bad step_index"))?;
        let time: f64 = fields[1].parse().map_err(|_| bad(line_no, "bad time_s"))?;
        let agent: usize = fields[2].parse().map_err(|_| bad(line_no, "bad agent_id"))?;
        let mut nums = [0.0f64; 4];
        for (slot, field) in nums.iter_mut().zip(&fields[3..7]) {
            *slot = field.parse().map_err(|_| bad(line_no, "bad float column"))?;
        }
        let exited = match fields[7] {
            "0" => false,
            "1" => true,
            _ => return Err(bad(line_no, "bad exited_flag")),
        };

        if snapshots.last().map(|s| s.step_index) != Some(step) {
            snapshots.push(Snapshot {
                step_index: step,
                time,
                positions: Vec::new(),
                velocities: Vec::new(),
                exited: Vec::new(),
            });
        }
        let snap = snapshots.last_mut().unwrap();
        if agent != snap.positions.len() {
            return Err(bad(line_no, "agent rows out of order"));
        }
        snap.positions.push(Vec2::new(nums[0], nums[1]));
        snap.velocities.push(Vec2::new(nums[2], nums[3]));
        snap.exited.push(exited);
    }
    if snapshots.is_empty() {
        return Err(Error::TrajectoryFormat(format!(
            "{}: no data rows",
            csv_path.display()
        )));
    }
    let n = snapshots[0].positions.len();
    if snapshots.iter().any(|s| s.positions.len() != n) || meta.n_agents != n {
        return Err(Error::TrajectoryFormat(format!(
            "{}: inconsistent agent count",
            csv_path.display()
        )));
    }

    Ok((
        Trajectory {
            snapshots,
            exit_times: meta.exit_times.clone(),
            exit_steps: meta.exit_steps.clone(),
            record_interval: meta.record_interval,
        },
        meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ExitWall;
    use crate::solver::Method;

    fn scene() -> Scene {
        Scene::square(10.0, 1.0, ExitWall::Right).unwrap()
    }

    /// Free flight: dx/dt = v, dv/dt = 0.
    fn free_flight(
        state: &CrowdState,
        frozen: &[bool],
        dx: &mut [Vec2],
        _dv: &mut [Vec2],
    ) -> Result<()> {
        for i in 0..state.len() {
            if !frozen[i] {
                dx[i] = state.velocities[i];
            }
        }
        Ok(())
    }

    #[test]
    fn agent_outside_at_start_yields_length_one() {
        let sc = scene();
        let z0 = CrowdState::new(vec![Vec2::new(11.0, 5.0)], vec![Vec2::new(1.0, 0.0)], 0.0)
            .unwrap();
        let cfg = IntegratorConfig::new(Method::Rk4, 0.01).unwrap();
        let traj = rollout(&z0, &free_flight, &sc, 5.0, cfg, 10).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.exit_times[0], Some(0.0));
        assert_eq!(traj.snapshots[0].velocities[0], Vec2::default());
    }

    #[test]
    fn exit_time_matches_kinematics() {
        let sc = scene();
        // 5 m from the exit, heading straight at it at 1 m/s.
        let z0 = CrowdState::new(vec![Vec2::new(5.0, 5.0)], vec![Vec2::new(1.0, 0.0)], 0.0)
            .unwrap();
        let cfg = IntegratorConfig::new(Method::Rk4, 0.01).unwrap();
        let traj = rollout(&z0, &free_flight, &sc, 20.0, cfg, 10).unwrap();
        let t = traj.exit_times[0].expect("agent should exit");
        assert!((t - 5.0).abs() <= 0.01 + 1e-9, "exit time {t}");
        // Frozen at the first outside point, just past the wall.
        let last = traj.snapshots.last().unwrap();
        assert!(last.exited[0]);
        assert!(last.positions[0].x > 10.0 && last.positions[0].x < 10.02);
    }

    #[test]
    fn unexited_agents_marked_none() {
        let sc = scene();
        let z0 = CrowdState::new(vec![Vec2::new(5.0, 5.0)], vec![Vec2::new(0.0, 0.0)], 0.0)
            .unwrap();
        let cfg = IntegratorConfig::new(Method::Rk4, 0.01).unwrap();
        let traj = rollout(&z0, &free_flight, &sc, 1.0, cfg, 10).unwrap();
        assert_eq!(traj.exit_times[0], None);
        assert_eq!(traj.snapshots.len(), 11);
        assert!((traj.snapshots.last().unwrap().time - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolated_exit_time_is_sub_step() {
        let sc = scene();
        // Crosses x = 10 at t = 0.25 with h = 0.1: inside the third step.
        let z0 = CrowdState::new(vec![Vec2::new(9.5, 5.0)], vec![Vec2::new(2.0, 0.0)], 0.0)
            .unwrap();
        let cfg = IntegratorConfig::new(Method::Euler, 0.1).unwrap();
        let traj = rollout(&z0, &free_flight, &sc, 2.0, cfg, 1).unwrap();
        let t = traj.exit_times[0].unwrap();
        assert!((t - 0.25).abs() < 1e-9, "exit time {t}");
        assert_eq!(traj.exit_steps[0], Some(3));
    }

    #[test]
    fn file_round_trip_preserves_structure() {
        let sc = scene();
        let z0 = CrowdState::new(
            vec![Vec2::new(5.0, 5.0), Vec2::new(3.0, 4.0)],
            vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 0.5)],
            0.0,
        )
        .unwrap();
        let cfg = IntegratorConfig::new(Method::Rk4, 0.01).unwrap();
        let traj = rollout(&z0, &free_flight, &sc, 2.0, cfg, 10).unwrap();
        let meta = TrajectoryMeta {
            format: TRAJECTORY_FORMAT.into(),
            model: "free-flight".into(),
            seed: 9,
            n_agents: 2,
            record_interval: traj.record_interval,
            step_size: 0.01,
            scene: sc.clone(),
            params: serde_json::json!({}),
            exit_times: traj.exit_times.clone(),
            exit_steps: traj.exit_steps.clone(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        save(&traj, &meta, &path).unwrap();
        let (back, meta_back) = load(&path).unwrap();
        assert_eq!(back.snapshots.len(), traj.snapshots.len());
        assert_eq!(back.exit_times, traj.exit_times);
        assert_eq!(meta_back.model, "free-flight");
        for (a, b) in traj.snapshots.iter().zip(&back.snapshots) {
            assert_eq!(a.step_index, b.step_index);
            for i in 0..2 {
                assert!((a.positions[i] - b.positions[i]).norm() < 1e-8);
                assert!((a.velocities[i] - b.velocities[i]).norm() < 1e-8);
                assert_eq!(a.exited[i], b.exited[i]);
            }
        }
    }

    #[test]
    fn same_rollout_serializes_byte_identically() {
        let sc = scene();
        let z0 = sc
            .sample_initial_state(3, crate::scene::SpawnMode::Uniform, 0.7, 5)
            .unwrap();
        let cfg = IntegratorConfig::new(Method::Rk4, 0.01).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for name in ["a.csv", "b.csv"] {
            let traj = rollout(&z0, &free_flight, &sc, 1.0, cfg, 5).unwrap();
            let meta = TrajectoryMeta {
                format: TRAJECTORY_FORMAT.into(),
                model: "free-flight".into(),
                seed: 5,
                n_agents: 3,
                record_interval: traj.record_interval,
                step_size: 0.01,
                scene: sc.clone(),
                params: serde_json::json!({}),
                exit_times: traj.exit_times.clone(),
                exit_steps: traj.exit_steps.clone(),
            };
            let path = dir.path().join(name);
            save(&traj, &meta, &path).unwrap();
            bytes.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
    }
}
