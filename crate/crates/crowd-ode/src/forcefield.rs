use crate::error::{Error, Result};
use crate::mlp::{MlpSpec, MlpTape};
use crate::scene::Scene;
use crate::state::{CrowdState, DerivativeFn};
use crate::vec2::Vec2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::path::Path;

/// Learned crowd force field. The acceleration of an agent is the sum of
/// three network outputs: a motion term from its own (normalized) position
/// and velocity, a pairwise term per k-nearest neighbor from the relative
/// position, and an obstacle term per wall from the offset to the nearest
/// wall point. Unit mass, so force and acceleration coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceField {
    pub motion: MlpSpec,
    pub pair: MlpSpec,
    pub obstacle: MlpSpec,
    /// How many nearest non-frozen neighbors feed the pair term.
    pub k_neighbors: usize,
    /// When set, the pair network also receives the relative velocity.
    pub pair_velocity_input: bool,
    /// Absolute positions are divided by this before entering the motion
    /// network, m.
    pub pos_scale: f64,
    /// Velocities are divided by this, m/s.
    pub vel_scale: f64,
    /// Relative offsets (to neighbors and walls) are divided by this, m.
    /// Short-range repulsion has features a few centimeters wide; feeding
    /// offsets at room scale flattens them below what training resolves.
    pub interaction_scale: f64,
}

impl ForceField {
    pub fn new(
        hidden: &[usize],
        k_neighbors: usize,
        pair_velocity_input: bool,
        pos_scale: f64,
        vel_scale: f64,
        interaction_scale: f64,
    ) -> Result<Self> {
        if !(pos_scale > 0.0) || !(vel_scale > 0.0) || !(interaction_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "normalization scales must be positive".into(),
            ));
        }
        let layers = |n_in: usize| -> Vec<usize> {
            let mut v = Vec::with_capacity(hidden.len() + 2);
            v.push(n_in);
            v.extend_from_slice(hidden);
            v.push(2);
            v
        };
        let pair_in = if pair_velocity_input { 4 } else { 2 };
        Ok(ForceField {
            motion: MlpSpec::new(&layers(4))?,
            pair: MlpSpec::new(&layers(pair_in))?,
            obstacle: MlpSpec::new(&layers(2))?,
            k_neighbors,
            pair_velocity_input,
            pos_scale,
            vel_scale,
            interaction_scale,
        })
    }

    pub fn n_params(&self) -> usize {
        self.motion.n_params() + self.pair.n_params() + self.obstacle.n_params()
    }

    /// Flat layout: motion block, pair block, obstacle block.
    pub fn theta_ranges(&self) -> (Range<usize>, Range<usize>, Range<usize>) {
        let m = self.motion.n_params();
        let p = self.pair.n_params();
        let o = self.obstacle.n_params();
        (0..m, m..m + p, m + p..m + p + o)
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = self.motion.init_params(&mut rng);
        theta.extend(self.pair.init_params(&mut rng));
        theta.extend(self.obstacle.init_params(&mut rng));
        theta
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "force field expects {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        Ok(())
    }

    /// Indices of up to `k_neighbors` nearest other agents, frozen agents
    /// excluded, ordered by (distance, index).
    pub fn knn_indices(&self, positions: &[Vec2], frozen: &[bool], agent: usize) -> Vec<usize> {
        let mut near: Vec<(f64, usize)> = (0..positions.len())
            .filter(|&j| j != agent && !frozen[j])
            .map(|j| ((positions[j] - positions[agent]).norm_sq(), j))
            .collect();
        near.sort_by(|a, b| a.partial_cmp(b).unwrap());
        near.truncate(self.k_neighbors);
        near.into_iter().map(|(_, j)| j).collect()
    }

    pub fn derivative<'a>(
        &'a self,
        theta: &'a [f64],
        scene: &'a Scene,
    ) -> Result<LearnedDerivative<'a>> {
        self.check_theta(theta)?;
        Ok(LearnedDerivative {
            field: self,
            theta,
            scene,
        })
    }

    fn motion_input(&self, x: Vec2, v: Vec2, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(&[
            x.x / self.pos_scale,
            x.y / self.pos_scale,
            v.x / self.vel_scale,
            v.y / self.vel_scale,
        ]);
    }

    fn pair_input(&self, rel_x: Vec2, rel_v: Vec2, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(&[
            rel_x.x / self.interaction_scale,
            rel_x.y / self.interaction_scale,
        ]);
        if self.pair_velocity_input {
            buf.extend_from_slice(&[rel_v.x / self.vel_scale, rel_v.y / self.vel_scale]);
        }
    }

    /// Total force on one agent given the neighbor selection.
    fn force_on_agent(
        &self,
        theta: &[f64],
        scene: &Scene,
        state: &CrowdState,
        frozen: &[bool],
        agent: usize,
        input: &mut Vec<f64>,
        tape: &mut MlpTape,
    ) -> Result<Vec2> {
        let (rm, rp, ro) = self.theta_ranges();
        let x = state.positions[agent];
        let v = state.velocities[agent];
        let mut f = Vec2::default();

        self.motion_input(x, v, input);
        self.motion.forward(&theta[rm], input, tape)?;
        f += Vec2::new(tape.output()[0], tape.output()[1]);

        for j in self.knn_indices(&state.positions, frozen, agent) {
            self.pair_input(
                state.positions[j] - x,
                state.velocities[j] - v,
                input,
            );
            self.pair.forward(&theta[rp.clone()], input, tape)?;
            f += Vec2::new(tape.output()[0], tape.output()[1]);
        }

        for wall in &scene.walls {
            let q = wall.nearest_point(x);
            input.clear();
            input.extend_from_slice(&[
                (q.x - x.x) / self.interaction_scale,
                (q.y - x.y) / self.interaction_scale,
            ]);
            self.obstacle.forward(&theta[ro.clone()], input, tape)?;
            f += Vec2::new(tape.output()[0], tape.output()[1]);
        }
        Ok(f)
    }

    /// Vector-Jacobian product of the state derivative (dx, dv) = F(z).
    ///
    /// Given cotangents on dx and dv, accumulates the pullback on the state
    /// into (grad_x, grad_v) and on the parameters into grad_theta. All
    /// three buffers are accumulated into, not overwritten. Neighbor
    /// selection is treated as locally constant.
    #[allow(clippy::too_many_arguments)]
    pub fn derivative_vjp(
        &self,
        theta: &[f64],
        scene: &Scene,
        state: &CrowdState,
        frozen: &[bool],
        cot_dx: &[Vec2],
        cot_dv: &[Vec2],
        grad_x: &mut [Vec2],
        grad_v: &mut [Vec2],
        grad_theta: &mut [f64],
    ) -> Result<()> {
        self.check_theta(theta)?;
        let n = state.len();
        if [cot_dx.len(), cot_dv.len(), grad_x.len(), grad_v.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::ShapeMismatch(
                "cotangent buffers do not match the agent count".into(),
            ));
        }
        let (rm, rp, ro) = self.theta_ranges();
        let mut input: Vec<f64> = Vec::new();
        let mut tape = MlpTape::default();
        let mut g_in = vec![0.0; 4];

        for a in 0..n {
            if frozen[a] {
                continue;
            }
            // dx_a = v_a.
            grad_v[a] += cot_dx[a];

            let cot = [cot_dv[a].x, cot_dv[a].y];
            if cot[0] == 0.0 && cot[1] == 0.0 {
                continue;
            }
            let x = state.positions[a];
            let v = state.velocities[a];

            self.motion_input(x, v, &mut input);
            self.motion.forward(&theta[rm.clone()], &input, &mut tape)?;
            g_in.resize(4, 0.0);
            self.motion.backward(
                &theta[rm.clone()],
                &tape,
                &cot,
                &mut grad_theta[rm.clone()],
                &mut g_in,
            )?;
            grad_x[a] += Vec2::new(g_in[0], g_in[1]) / self.pos_scale;
            grad_v[a] += Vec2::new(g_in[2], g_in[3]) / self.vel_scale;

            for j in self.knn_indices(&state.positions, frozen, a) {
                self.pair_input(
                    state.positions[j] - x,
                    state.velocities[j] - v,
                    &mut input,
                );
                self.pair.forward(&theta[rp.clone()], &input, &mut tape)?;
                g_in.resize(input.len(), 0.0);
                self.pair.backward(
                    &theta[rp.clone()],
                    &tape,
                    &cot,
                    &mut grad_theta[rp.clone()],
                    &mut g_in,
                )?;
                let gx = Vec2::new(g_in[0], g_in[1]) / self.interaction_scale;
                grad_x[j] += gx;
                grad_x[a] -= gx;
                if self.pair_velocity_input {
                    let gv = Vec2::new(g_in[2], g_in[3]) / self.vel_scale;
                    grad_v[j] += gv;
                    grad_v[a] -= gv;
                }
            }

            for wall in &scene.walls {
                let q = wall.nearest_point(x);
                input.clear();
                input.extend_from_slice(&[
                    (q.x - x.x) / self.interaction_scale,
                    (q.y - x.y) / self.interaction_scale,
                ]);
                self.obstacle.forward(&theta[ro.clone()], &input, &mut tape)?;
                g_in.resize(2, 0.0);
                self.obstacle.backward(
                    &theta[ro.clone()],
                    &tape,
                    &cot,
                    &mut grad_theta[ro.clone()],
                    &mut g_in,
                )?;
                let g = Vec2::new(g_in[0], g_in[1]);
                // Input is (q(x) - x)/s. On the segment interior the nearest
                // point moves as dq/dx = e e^T (e the unit direction), so the
                // pullback is (e (e.g) - g)/s; at a clamped endpoint q is
                // constant and only -g/s remains.
                let t = wall.nearest_t(x);
                let pull = if t > 0.0 && t < 1.0 {
                    let e = (wall.b - wall.a)
                        .try_normalize(1e-12)
                        .ok_or_else(|| {
                            Error::DegenerateGeometry("zero-length wall".into())
                        })?;
                    (e * e.dot(g) - g) / self.interaction_scale
                } else {
                    -g / self.interaction_scale
                };
                grad_x[a] += pull;
            }
        }
        Ok(())
    }
}

/// `DerivativeFn` adapter: unit mass, dx/dt = v, dv/dt = learned force.
pub struct LearnedDerivative<'a> {
    pub field: &'a ForceField,
    pub theta: &'a [f64],
    pub scene: &'a Scene,
}

impl DerivativeFn for LearnedDerivative<'_> {
    fn eval(
        &self,
        state: &CrowdState,
        frozen: &[bool],
        dx: &mut [Vec2],
        dv: &mut [Vec2],
    ) -> Result<()> {
        let mut input: Vec<f64> = Vec::new();
        let mut tape = MlpTape::default();
        for a in 0..state.len() {
            if frozen[a] {
                continue;
            }
            dx[a] = state.velocities[a];
            dv[a] = self.field.force_on_agent(
                self.theta,
                self.scene,
                state,
                frozen,
                a,
                &mut input,
                &mut tape,
            )?;
        }
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "crowd-ode-forcefield-v1";

/// On-disk snapshot of a force field and its parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub field: ForceField,
    pub theta: Vec<f64>,
    /// Digest of the run configuration this was trained under.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    /// Label of the data source the field was fitted to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

impl Checkpoint {
    pub fn new(field: ForceField, theta: Vec<f64>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            field,
            theta,
            config_digest: None,
            source: None,
            epochs: None,
            final_loss: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        if self.theta.len() != self.field.n_params() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, field needs {}",
                self.theta.len(),
                self.field.n_params()
            )));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Checkpoint(
                "checkpoint contains non-finite parameters".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&body).map_err(|e| {
            Error::Checkpoint(format!("{}: {e}", path.display()))
        })?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}
