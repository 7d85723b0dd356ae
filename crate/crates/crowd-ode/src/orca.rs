use crate::dataset::GenSpec;
use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::state::CrowdState;
use crate::trajectory::{ExitTracker, Snapshot, Trajectory};
use crate::vec2::Vec2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrcaParams {
    /// Agent radius r, m.
    pub radius: f64,
    /// Preferred speed v^p, m/s; also the speed cap.
    pub preferred_speed: f64,
    /// Collision horizon tau against other agents, s.
    pub time_horizon: f64,
    /// Simulation step, s.
    pub step: f64,
    /// At most this many nearest agents constrain the velocity.
    pub max_neighbors: usize,
    /// Agents beyond this distance are ignored, m.
    pub neighbor_dist: f64,
    /// Collision horizon against walls, s.
    pub wall_time_horizon: f64,
}

impl Default for OrcaParams {
    fn default() -> Self {
        OrcaParams {
            radius: 0.3,
            preferred_speed: 1.0,
            time_horizon: 0.05,
            step: 0.01,
            max_neighbors: 10,
            neighbor_dist: 2.5,
            wall_time_horizon: 0.05,
        }
    }
}

impl OrcaParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("orca.radius", self.radius),
            ("orca.preferred_speed", self.preferred_speed),
            ("orca.time_horizon", self.time_horizon),
            ("orca.step", self.step),
            ("orca.neighbor_dist", self.neighbor_dist),
            ("orca.wall_time_horizon", self.wall_time_horizon),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_neighbors == 0 {
            return Err(Error::InvalidConfig(
                "orca.max_neighbors must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Velocity-space constraint: velocities v with (v - point) . normal >= 0
/// are permitted. The normal is unit length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub point: Vec2,
    pub normal: Vec2,
}

impl HalfPlane {
    pub fn permits(&self, v: Vec2, tol: f64) -> bool {
        (v - self.point).dot(self.normal) >= -tol
    }

    pub fn violation(&self, v: Vec2) -> f64 {
        -(v - self.point).dot(self.normal)
    }
}

/// Internal line form used by the incremental LP: the feasible side of
/// `(point, dir)` is the left of `dir`, i.e. dir.cross(point - v) <= 0.
#[derive(Debug, Clone, Copy)]
struct LpLine {
    point: Vec2,
    dir: Vec2,
}

impl From<&HalfPlane> for LpLine {
    fn from(hp: &HalfPlane) -> Self {
        LpLine {
            point: hp.point,
            dir: Vec2::new(hp.normal.y, -hp.normal.x),
        }
    }
}

const LP_EPSILON: f64 = 1e-10;

/// Builds the ORCA constraints for one agent: a reciprocal half-plane per
/// selected neighbor (nearest first) and a responsibility-1 half-plane per
/// wall within reach.
pub fn orca_halfplanes(
    agent: usize,
    state: &CrowdState,
    scene: &Scene,
    p: &OrcaParams,
    frozen: &[bool],
) -> Result<Vec<HalfPlane>> {
    let n = state.len();
    if agent >= n {
        return Err(Error::IndexOutOfRange {
            index: agent,
            len: n,
        });
    }
    let x_i = state.positions[agent];
    let v_i = state.velocities[agent];

    let mut near: Vec<(f64, usize)> = Vec::new();
    let range_sq = p.neighbor_dist * p.neighbor_dist;
    for j in 0..n {
        if j == agent || frozen[j] {
            continue;
        }
        let d_sq = (state.positions[j] - x_i).norm_sq();
        if d_sq < range_sq {
            near.push((d_sq, j));
        }
    }
    near.sort_by(|a, b| a.partial_cmp(b).unwrap());
    near.truncate(p.max_neighbors);

    let combined_r = 2.0 * p.radius;
    let combined_r_sq = combined_r * combined_r;
    let mut planes = Vec::with_capacity(near.len() + scene.walls.len());

    for &(d_sq, j) in &near {
        if d_sq < 1e-18 {
            return Err(Error::DegenerateGeometry(format!(
                "agents {agent} and {j} coincide"
            )));
        }
        let rel_pos = state.positions[j] - x_i;
        let rel_vel = v_i - state.velocities[j];

        let (dir, u) = if d_sq > combined_r_sq {
            let inv_tau = 1.0 / p.time_horizon;
            // Vector from the truncated cone's cutoff-circle center to the
            // relative velocity.
            let w = rel_vel - rel_pos * inv_tau;
            let w_len_sq = w.norm_sq();
            let dot1 = w.dot(rel_pos);
            if dot1 < 0.0 && dot1 * dot1 > combined_r_sq * w_len_sq {
                // Closest point is on the cutoff circle.
                let w_len = w_len_sq.sqrt();
                let unit_w = w / w_len;
                (
                    Vec2::new(unit_w.y, -unit_w.x),
                    unit_w * (combined_r * inv_tau - w_len),
                )
            } else {
                // Closest point is on one of the cone legs.
                let leg = (d_sq - combined_r_sq).sqrt();
                let dir = if rel_pos.cross(w) > 0.0 {
                    Vec2::new(
                        rel_pos.x * leg - rel_pos.y * combined_r,
                        rel_pos.x * combined_r + rel_pos.y * leg,
                    ) / d_sq
                } else {
                    -Vec2::new(
                        rel_pos.x * leg + rel_pos.y * combined_r,
                        -rel_pos.x * combined_r + rel_pos.y * leg,
                    ) / d_sq
                };
                let dot2 = rel_vel.dot(dir);
                (dir, dir * dot2 - rel_vel)
            }
        } else {
            // Already overlapping: push apart over a single time step.
            let inv_dt = 1.0 / p.step;
            let w = rel_vel - rel_pos * inv_dt;
            let w_len = w.norm();
            let unit_w = w / w_len;
            (
                Vec2::new(unit_w.y, -unit_w.x),
                unit_w * (combined_r * inv_dt - w_len),
            )
        };
        // Reciprocity: each agent of the pair takes half the correction.
        let point = v_i + u * 0.5;
        planes.push(HalfPlane {
            point,
            normal: dir.perp(),
        });
    }

    let v_max = p.preferred_speed;
    for (w_idx, wall) in scene.walls.iter().enumerate() {
        let q = wall.nearest_point(x_i);
        let d_vec = x_i - q;
        let d = d_vec.norm();
        if d < 1e-9 {
            return Err(Error::DegenerateGeometry(format!(
                "agent {agent} sits on wall {w_idx}"
            )));
        }
        let clearance = d - p.radius;
        if clearance >= v_max * p.wall_time_horizon {
            continue;
        }
        let n_w = d_vec / d;
        // Approach speed toward the wall is capped at clearance/horizon;
        // when already penetrating, separate within one step.
        let bound = if clearance > 0.0 {
            -clearance / p.wall_time_horizon
        } else {
            -clearance / p.step
        };
        planes.push(HalfPlane {
            point: n_w * bound,
            normal: n_w,
        });
    }

    Ok(planes)
}

fn lp1(lines: &[LpLine], fix: usize, v_max: f64, opt_v: Vec2, dir_opt: bool) -> Option<Vec2> {
    let le = lines[fix];
    let dot = le.point.dot(le.dir);
    let disc = dot * dot + v_max * v_max - le.point.norm_sq();
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let mut t_left = -dot - sq;
    let mut t_right = -dot + sq;

    for lj in &lines[..fix] {
        let denom = le.dir.cross(lj.dir);
        let numer = lj.dir.cross(le.point - lj.point);
        if denom.abs() <= LP_EPSILON {
            if numer < 0.0 {
                return None;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = if dir_opt {
        if opt_v.dot(le.dir) > 0.0 {
            t_right
        } else {
            t_left
        }
    } else {
        le.dir.dot(opt_v - le.point).clamp(t_left, t_right)
    };
    Some(le.point + le.dir * t)
}

/// Returns the optimum and the index of the first unsatisfiable constraint
/// (lines.len() when all are satisfied).
fn lp2(lines: &[LpLine], v_max: f64, opt_v: Vec2, dir_opt: bool) -> (Vec2, usize) {
    let mut result = if dir_opt {
        opt_v * v_max
    } else if opt_v.norm_sq() > v_max * v_max {
        opt_v / opt_v.norm() * v_max
    } else {
        opt_v
    };
    for i in 0..lines.len() {
        if lines[i].dir.cross(lines[i].point - result) > 0.0 {
            match lp1(lines, i, v_max, opt_v, dir_opt) {
                Some(r) => result = r,
                None => return (result, i),
            }
        }
    }
    (result, lines.len())
}

/// Infeasible fallback: minimize the maximum constraint violation by
/// walking the constraints from the first failure on (3D-lifted LP with
/// every constraint soft).
fn lp3(lines: &[LpLine], begin: usize, v_max: f64, result: &mut Vec2) {
    let mut distance = 0.0;
    for i in begin..lines.len() {
        if lines[i].dir.cross(lines[i].point - *result) > distance {
            let mut proj: Vec<LpLine> = Vec::with_capacity(i);
            for j in 0..i {
                let det = lines[i].dir.cross(lines[j].dir);
                let point = if det.abs() <= LP_EPSILON {
                    if lines[i].dir.dot(lines[j].dir) > 0.0 {
                        continue;
                    }
                    (lines[i].point + lines[j].point) * 0.5
                } else {
                    lines[i].point
                        + lines[i].dir * (lines[j].dir.cross(lines[i].point - lines[j].point) / det)
                };
                let dir = match (lines[j].dir - lines[i].dir).try_normalize(0.0) {
                    Some(d) => d,
                    None => continue,
                };
                proj.push(LpLine { point, dir });
            }
            let temp = *result;
            let opt = Vec2::new(-lines[i].dir.y, lines[i].dir.x);
            let (r, fail) = lp2(&proj, v_max, opt, true);
            if fail < proj.len() {
                *result = temp;
            } else {
                *result = r;
            }
            distance = lines[i].dir.cross(lines[i].point - *result);
        }
    }
}

/// Velocity in the half-plane intersection (capped at |v| <= v_max) closest
/// to `v_pref`; falls back to the least-violating velocity when empty.
pub fn solve_velocity_lp(halfplanes: &[HalfPlane], v_pref: Vec2, v_max: f64) -> Vec2 {
    let lines: Vec<LpLine> = halfplanes.iter().map(LpLine::from).collect();
    let (mut result, fail) = lp2(&lines, v_max, v_pref, false);
    if fail < lines.len() {
        lp3(&lines, fail, v_max, &mut result);
    }
    result
}

/// Collision-free velocities for every agent from one shared state snapshot.
pub fn select_velocities(
    state: &CrowdState,
    scene: &Scene,
    p: &OrcaParams,
    frozen: &[bool],
) -> Result<Vec<Vec2>> {
    (0..state.len())
        .map(|i| {
            if frozen[i] {
                return Ok(Vec2::default());
            }
            let v_pref = (scene.exit_center - state.positions[i])
                .try_normalize(1e-12)
                .map(|e| e * p.preferred_speed)
                .unwrap_or_default();
            let planes = orca_halfplanes(i, state, scene, p, frozen)?;
            Ok(solve_velocity_lp(&planes, v_pref, p.preferred_speed))
        })
        .collect()
}

/// One synchronous ORCA step: every agent picks its velocity from the same
/// pre-step snapshot, then all positions update together.
pub fn orca_step(
    state: &CrowdState,
    scene: &Scene,
    p: &OrcaParams,
    frozen: &[bool],
) -> Result<CrowdState> {
    let vs = select_velocities(state, scene, p, frozen)?;
    let mut out = state.clone();
    for i in 0..state.len() {
        if frozen[i] {
            continue;
        }
        out.positions[i] += vs[i] * p.step;
        out.velocities[i] = vs[i];
    }
    out.time = state.time + p.step;
    Ok(out)
}

/// Discrete-time rollout with the shared exit handling. Recorded velocities
/// are the per-step selections, i.e. forward differences (x_{k+1} - x_k)/dt;
/// the terminal record reuses the last selected velocities.
pub fn orca_rollout(
    z0: &CrowdState,
    scene: &Scene,
    p: &OrcaParams,
    t_max: f64,
    record_every: usize,
) -> Result<Trajectory> {
    if record_every == 0 {
        return Err(Error::InvalidConfig("record_every must be >= 1".into()));
    }
    let h = p.step;
    let n_steps = (t_max / h + 1e-9).floor() as u64;
    let t0 = z0.time;

    let mut z = z0.clone();
    let mut tracker = ExitTracker::new(scene, &mut z);
    let mut snapshots: Vec<Snapshot> = Vec::new();

    let mut k: u64 = 0;
    loop {
        let done = k == n_steps || tracker.all_frozen();
        let due = k % record_every as u64 == 0 || done;
        if done {
            if due {
                snapshots.push(Snapshot {
                    step_index: k,
                    time: z.time,
                    positions: z.positions.clone(),
                    velocities: z.velocities.clone(),
                    exited: tracker.frozen.clone(),
                });
            }
            break;
        }
        let vs = select_velocities(&z, scene, p, &tracker.frozen)?;
        if due {
            snapshots.push(Snapshot {
                step_index: k,
                time: z.time,
                positions: z.positions.clone(),
                velocities: vs.clone(),
                exited: tracker.frozen.clone(),
            });
        }
        let old = z.clone();
        for i in 0..z.len() {
            if tracker.frozen[i] {
                continue;
            }
            z.positions[i] += vs[i] * h;
            z.velocities[i] = vs[i];
        }
        z.time = t0 + (k + 1) as f64 * h;
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

/// Runs `gen.n_runs` independent ORCA rollouts with per-run seeds.
pub fn generate_dataset(
    scene: &Scene,
    params: &OrcaParams,
    gen: &GenSpec,
) -> Result<Vec<Trajectory>> {
    (0..gen.n_runs)
        .into_par_iter()
        .map(|run| {
            let z0 = scene.sample_initial_state(
                gen.n_agents,
                gen.spawn_mode,
                gen.min_separation,
                gen.seed.wrapping_add(run as u64),
            )?;
            orca_rollout(&z0, scene, params, gen.t_max, gen.record_every)
        })
        .collect()
}
