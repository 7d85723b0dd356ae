use crate::dataset::GenSpec;
use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::solver::IntegratorConfig;
use crate::state::{CrowdState, DerivativeFn};
use crate::trajectory::{self, Trajectory};
use crate::vec2::Vec2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Helbing-Farkas-Vicsek social force parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfmParams {
    /// Pedestrian mass m, kg.
    pub mass: f64,
    /// Desired speed v^p, m/s.
    pub desired_speed: f64,
    /// Acceleration (relaxation) time tau, s.
    pub accel_time: f64,
    /// Body radius r, m.
    pub radius: f64,
    /// Repulsion strength A, N.
    pub strength: f64,
    /// Repulsion range B, m.
    pub range: f64,
    /// Body compression coefficient k, kg/s^2.
    pub body_k: f64,
    /// Sliding friction coefficient kappa, kg/(m*s).
    pub friction_kappa: f64,
    /// Simulation step, s.
    pub step: f64,
}

impl Default for SfmParams {
    fn default() -> Self {
        SfmParams {
            mass: 80.0,
            desired_speed: 1.0,
            accel_time: 0.5,
            radius: 0.3,
            strength: 2000.0,
            range: 0.08,
            body_k: 1.2e5,
            friction_kappa: 2.4e5,
            step: 0.001,
        }
    }
}

impl SfmParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sfm.mass", self.mass),
            ("sfm.desired_speed", self.desired_speed),
            ("sfm.accel_time", self.accel_time),
            ("sfm.radius", self.radius),
            ("sfm.strength", self.strength),
            ("sfm.range", self.range),
            ("sfm.body_k", self.body_k),
            ("sfm.friction_kappa", self.friction_kappa),
            ("sfm.step", self.step),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn g(u: f64) -> f64 {
    u.max(0.0)
}

pub struct SfmDerivative<'a> {
    pub scene: &'a Scene,
    pub params: &'a SfmParams,
}

impl<'a> SfmDerivative<'a> {
    pub fn new(scene: &'a Scene, params: &'a SfmParams) -> Self {
        SfmDerivative { scene, params }
    }
}

impl DerivativeFn for SfmDerivative<'_> {
    fn eval(
        &self,
        state: &CrowdState,
        frozen: &[bool],
        dx: &mut [Vec2],
        dv: &mut [Vec2],
    ) -> Result<()> {
        let p = self.params;
        let n = state.len();
        for i in 0..n {
            if frozen[i] {
                continue;
            }
            let x_i = state.positions[i];
            let v_i = state.velocities[i];

            let to_exit = self.scene.exit_center - x_i;
            let e_i = to_exit.try_normalize(1e-12).unwrap_or_default();
            let mut f = (e_i * p.desired_speed - v_i) * (p.mass / p.accel_time);

            for j in 0..n {
                if j == i || frozen[j] {
                    continue;
                }
                let d_vec = x_i - state.positions[j];
                let d = d_vec.norm();
                if d < 1e-9 {
                    return Err(Error::DegenerateGeometry(format!(
                        "agents {i} and {j} coincide at t = {}",
                        state.time
                    )));
                }
                let n_ij = d_vec / d;
                let t_ij = n_ij.perp();
                let overlap = 2.0 * p.radius - d;
                let repulse = p.strength * (overlap / p.range).exp() + p.body_k * g(overlap);
                let dv_tang = (state.velocities[j] - v_i).dot(t_ij);
                f += n_ij * repulse + t_ij * (p.friction_kappa * g(overlap) * dv_tang);
            }

            for wall in &self.scene.walls {
                let q = wall.nearest_point(x_i);
                let d_vec = x_i - q;
                let d = d_vec.norm();
                if d < 1e-9 {
                    return Err(Error::DegenerateGeometry(format!(
                        "agent {i} sits on a wall at t = {}",
                        state.time
                    )));
                }
                let n_iw = d_vec / d;
                let t_iw = n_iw.perp();
                let overlap = p.radius - d;
                let repulse = p.strength * (overlap / p.range).exp() + p.body_k * g(overlap);
                let friction = p.friction_kappa * g(overlap) * v_i.dot(t_iw);
                f += n_iw * repulse - t_iw * friction;
            }

            dx[i] = v_i;
            dv[i] = f / p.mass;
        }
        Ok(())
    }
}

/// Runs `gen.n_runs` independent rollouts with per-run seeds `seed + run`.
pub fn generate_dataset(
    scene: &Scene,
    params: &SfmParams,
    gen: &GenSpec,
    cfg: IntegratorConfig,
) -> Result<Vec<Trajectory>> {
    let deriv = SfmDerivative::new(scene, params);
    (0..gen.n_runs)
        .into_par_iter()
        .map(|run| {
            let z0 = scene.sample_initial_state(
                gen.n_agents,
                gen.spawn_mode,
                gen.min_separation,
                gen.seed.wrapping_add(run as u64),
            )?;
            trajectory::rollout(&z0, &deriv, scene, gen.t_max, cfg, gen.record_every)
        })
        .collect()
}
