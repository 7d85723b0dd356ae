use crate::dataset::WindowPair;
use crate::error::{Error, Result};
use crate::forcefield::ForceField;
use crate::scene::Scene;
use crate::solver::BLOWUP_LIMIT;
use crate::state::{CrowdState, DerivativeFn};
use crate::vec2::Vec2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the parameter gradient of a rollout loss is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Reverse pass through the stored integrator stages (exact gradient of
    /// the discrete rollout).
    Backprop,
    /// Continuous adjoint: the costate is integrated backward with the same
    /// solver, so the result agrees with backprop up to discretization.
    Adjoint,
}

impl Default for GradientMode {
    fn default() -> Self {
        GradientMode::Backprop
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Base seed; epoch e shuffles with seed + e.
    pub seed: u64,
    /// Integrator step used inside each training window, s.
    pub solver_step: f64,
    pub gradient_mode: GradientMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 2e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            solver_step: 0.01,
            gradient_mode: GradientMode::Backprop,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "train.epochs and train.batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.solver_step > 0.0) {
            return Err(Error::InvalidConfig(
                "train.learning_rate and train.solver_step must be positive".into(),
            ));
        }
        for (name, b) in [
            ("train.adam_beta1", self.adam_beta1),
            ("train.adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// Mean absolute difference over all position and velocity coordinates.
pub fn l1_loss(pred: &CrowdState, target: &CrowdState) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "loss over {} vs {} agents",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        let dp = pred.positions[i] - target.positions[i];
        let dv = pred.velocities[i] - target.velocities[i];
        total += dp.x.abs() + dp.y.abs() + dv.x.abs() + dv.y.abs();
    }
    Ok(total / (4.0 * n as f64))
}

/// d l1 / d pred: the sign pattern scaled by the averaging factor, with
/// sign(0) = 0.
fn l1_gradient(pred: &CrowdState, target: &CrowdState) -> (Vec<Vec2>, Vec<Vec2>) {
    let n = pred.len();
    let scale = 1.0 / (4.0 * n as f64);
    let sgn = |d: f64| {
        if d == 0.0 {
            0.0
        } else {
            d.signum()
        }
    };
    let gx = (0..n)
        .map(|i| {
            let d = pred.positions[i] - target.positions[i];
            Vec2::new(sgn(d.x), sgn(d.y)) * scale
        })
        .collect();
    let gv = (0..n)
        .map(|i| {
            let d = pred.velocities[i] - target.velocities[i];
            Vec2::new(sgn(d.x), sgn(d.y)) * scale
        })
        .collect();
    (gx, gv)
}

fn check_window(pair: &WindowPair, h: f64) -> Result<usize> {
    let span = pair.dt_window;
    if !(span > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "window span must be positive, got {span}"
        )));
    }
    let n_steps = (span / h + 0.5).floor() as usize;
    if n_steps == 0 || (n_steps as f64 * h - span).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "window span {span} is not a whole number of solver steps {h}"
        )));
    }
    Ok(n_steps)
}

fn check_state(z: &CrowdState) -> Result<()> {
    if !z.is_finite() || z.max_abs() > BLOWUP_LIMIT {
        return Err(Error::NumericalBlowup {
            time: z.time,
            what: "training rollout left the trusted range".into(),
        });
    }
    Ok(())
}

struct StageTape {
    /// Pre-step state and the three later stage states, per step.
    stages: Vec<[CrowdState; 4]>,
    z_end: CrowdState,
}

fn eval_derivative(
    f: &dyn DerivativeFn,
    z: &CrowdState,
    dx: &mut Vec<Vec2>,
    dv: &mut Vec<Vec2>,
    frozen: &[bool],
) -> Result<()> {
    dx.clear();
    dx.resize(z.len(), Vec2::default());
    dv.clear();
    dv.resize(z.len(), Vec2::default());
    f.eval(z, frozen, dx, dv)
}

fn advanced(z: &CrowdState, dx: &[Vec2], dv: &[Vec2], h: f64) -> CrowdState {
    let mut out = z.clone();
    for i in 0..z.len() {
        out.positions[i] += dx[i] * h;
        out.velocities[i] += dv[i] * h;
    }
    out.time = z.time + h;
    out
}

/// Forward rollout storing every integrator stage. The step arithmetic
/// mirrors the production solver so the transported state is identical.
fn rollout_with_tape(
    field: &ForceField,
    theta: &[f64],
    scene: &Scene,
    z0: &CrowdState,
    n_steps: usize,
    h: f64,
) -> Result<StageTape> {
    let f = field.derivative(theta, scene)?;
    let frozen = vec![false; z0.len()];
    let mut stages = Vec::with_capacity(n_steps);
    let mut z = z0.clone();
    let (mut dx, mut dv) = (Vec::new(), Vec::new());
    let mut k_x = vec![vec![Vec2::default(); z0.len()]; 4];
    let mut k_v = vec![vec![Vec2::default(); z0.len()]; 4];

    for _ in 0..n_steps {
        eval_derivative(&f, &z, &mut dx, &mut dv, &frozen)?;
        (k_x[0], k_v[0]) = (dx.clone(), dv.clone());
        let z2 = advanced(&z, &k_x[0], &k_v[0], h / 2.0);
        eval_derivative(&f, &z2, &mut dx, &mut dv, &frozen)?;
        (k_x[1], k_v[1]) = (dx.clone(), dv.clone());
        let z3 = advanced(&z, &k_x[1], &k_v[1], h / 2.0);
        eval_derivative(&f, &z3, &mut dx, &mut dv, &frozen)?;
        (k_x[2], k_v[2]) = (dx.clone(), dv.clone());
        let z4 = advanced(&z, &k_x[2], &k_v[2], h);
        eval_derivative(&f, &z4, &mut dx, &mut dv, &frozen)?;
        (k_x[3], k_v[3]) = (dx.clone(), dv.clone());

        let mut out = z.clone();
        let w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
        for i in 0..z.len() {
            for s in 0..4 {
                out.positions[i] += k_x[s][i] * w[s];
                out.velocities[i] += k_v[s][i] * w[s];
            }
        }
        out.time = z.time + h;
        check_state(&out)?;
        stages.push([z, z2, z3, z4]);
        z = out;
    }
    Ok(StageTape { stages, z_end: z })
}

fn axpy(dst: &mut [Vec2], a: f64, src: &[Vec2]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s * a;
    }
}

/// Loss of one training window and its parameter gradient.
///
/// Backprop differentiates the discrete rollout exactly; adjoint integrates
/// the costate backward through the same solver. Both treat the window's
/// start state as given.
pub fn loss_gradient(
    field: &ForceField,
    theta: &[f64],
    scene: &Scene,
    pair: &WindowPair,
    solver_step: f64,
    mode: GradientMode,
) -> Result<(f64, Vec<f64>)> {
    let n_steps = check_window(pair, solver_step)?;
    if pair.z0.len() != pair.z1.len() {
        return Err(Error::ShapeMismatch(
            "window endpoints disagree on agent count".into(),
        ));
    }
    let tape = rollout_with_tape(field, theta, scene, &pair.z0, n_steps, solver_step)?;
    let loss = l1_loss(&tape.z_end, &pair.z1)?;
    let (mut a_x, mut a_v) = l1_gradient(&tape.z_end, &pair.z1);
    let mut grad = vec![0.0; theta.len()];

    match mode {
        GradientMode::Backprop => {
            backward_through_stages(field, theta, scene, &tape, solver_step, &mut a_x, &mut a_v, &mut grad)?;
        }
        GradientMode::Adjoint => {
            adjoint_backward(
                field,
                theta,
                scene,
                &tape.z_end,
                n_steps,
                solver_step,
                &mut a_x,
                &mut a_v,
                &mut grad,
            )?;
        }
    }
    Ok((loss, grad))
}

/// Reverse pass over the stored stages. On entry (a_x, a_v) hold the loss
/// cotangent at the final state; on exit they hold it at the start state.
#[allow(clippy::too_many_arguments)]
fn backward_through_stages(
    field: &ForceField,
    theta: &[f64],
    scene: &Scene,
    tape: &StageTape,
    h: f64,
    a_x: &mut Vec<Vec2>,
    a_v: &mut Vec<Vec2>,
    grad: &mut [f64],
) -> Result<()> {
    let n = tape.z_end.len();
    let frozen = vec![false; n];
    let zero = vec![Vec2::default(); n];
    // Stage cotangent weights for z' = z + h/6 k1 + h/3 k2 + h/3 k3 + h/6 k4
    // with z2 = z + h/2 k1, z3 = z + h/2 k2, z4 = z + h k3.
    for step in tape.stages.iter().rev() {
        let [z1, z2, z3, z4] = step;
        let mut cot_x = zero.clone();
        let mut cot_v = zero.clone();
        let mut gz_x = zero.clone();
        let mut gz_v = zero.clone();
        let mut sum_x = zero.clone();
        let mut sum_v = zero.clone();

        // k4 enters only the output sum.
        axpy(&mut cot_x, h / 6.0, a_x);
        axpy(&mut cot_v, h / 6.0, a_v);
        field.derivative_vjp(theta, scene, z4, &frozen, &cot_x, &cot_v, &mut gz_x, &mut gz_v, grad)?;
        axpy(&mut sum_x, 1.0, &gz_x);
        axpy(&mut sum_v, 1.0, &gz_v);

        // k3 enters the output sum and z4.
        cot_x = zero.clone();
        cot_v = zero.clone();
        axpy(&mut cot_x, h / 3.0, a_x);
        axpy(&mut cot_v, h / 3.0, a_v);
        axpy(&mut cot_x, h, &gz_x);
        axpy(&mut cot_v, h, &gz_v);
        gz_x = zero.clone();
        gz_v = zero.clone();
        field.derivative_vjp(theta, scene, z3, &frozen, &cot_x, &cot_v, &mut gz_x, &mut gz_v, grad)?;
        axpy(&mut sum_x, 1.0, &gz_x);
        axpy(&mut sum_v, 1.0, &gz_v);

        // k2 enters the output sum and z3.
        cot_x = zero.clone();
        cot_v = zero.clone();
        axpy(&mut cot_x, h / 3.0, a_x);
        axpy(&mut cot_v, h / 3.0, a_v);
        axpy(&mut cot_x, h / 2.0, &gz_x);
        axpy(&mut cot_v, h / 2.0, &gz_v);
        gz_x = zero.clone();
        gz_v = zero.clone();
        field.derivative_vjp(theta, scene, z2, &frozen, &cot_x, &cot_v, &mut gz_x, &mut gz_v, grad)?;
        axpy(&mut sum_x, 1.0, &gz_x);
        axpy(&mut sum_v, 1.0, &gz_v);

        // k1 enters the output sum and z2.
        cot_x = zero.clone();
        cot_v = zero.clone();
        axpy(&mut cot_x, h / 6.0, a_x);
        axpy(&mut cot_v, h / 6.0, a_v);
        axpy(&mut cot_x, h / 2.0, &gz_x);
        axpy(&mut cot_v, h / 2.0, &gz_v);
        gz_x = zero.clone();
        gz_v = zero.clone();
        field.derivative_vjp(theta, scene, z1, &frozen, &cot_x, &cot_v, &mut gz_x, &mut gz_v, grad)?;
        axpy(&mut sum_x, 1.0, &gz_x);
        axpy(&mut sum_v, 1.0, &gz_v);

        // d z'/d z is the identity plus all stage paths.
        axpy(a_x, 1.0, &sum_x);
        axpy(a_v, 1.0, &sum_v);
    }
    Ok(())
}

/// Continuous adjoint: integrates (z, a, g) backward from the window end
/// with the same fixed-step scheme. a picks up -J^T a, g picks up the
/// parameter pullback.
#[allow(clippy::too_many_arguments)]
fn adjoint_backward(
    field: &ForceField,
    theta: &[f64],
    scene: &Scene,
    z_end: &CrowdState,
    n_steps: usize,
    h: f64,
    a_x: &mut Vec<Vec2>,
    a_v: &mut Vec<Vec2>,
    grad: &mut [f64],
) -> Result<()> {
    let n = z_end.len();
    let frozen = vec![false; n];
    let f = field.derivative(theta, scene)?;

    struct Aug {
        z: CrowdState,
        a_x: Vec<Vec2>,
        a_v: Vec<Vec2>,
    }
    struct AugDeriv {
        dz_x: Vec<Vec2>,
        dz_v: Vec<Vec2>,
        da_x: Vec<Vec2>,
        da_v: Vec<Vec2>,
        dg: Vec<f64>,
    }

    // Derivative in the reversed time s = t_end - t: the state runs
    // backward while the costate accumulates +J^T a and +dF/dtheta^T a.
    let eval_aug = |aug: &Aug| -> Result<AugDeriv> {
        let mut dx = vec![Vec2::default(); n];
        let mut dv = vec![Vec2::default(); n];
        f.eval(&aug.z, &frozen, &mut dx, &mut dv)?;
        let mut da_x = vec![Vec2::default(); n];
        let mut da_v = vec![Vec2::default(); n];
        let mut dg = vec![0.0; theta.len()];
        field.derivative_vjp(
            theta, scene, &aug.z, &frozen, &aug.a_x, &aug.a_v, &mut da_x, &mut da_v, &mut dg,
        )?;
        for i in 0..n {
            dx[i] = -dx[i];
            dv[i] = -dv[i];
        }
        Ok(AugDeriv {
            dz_x: dx,
            dz_v: dv,
            da_x,
            da_v,
            dg,
        })
    };

    let advance = |aug: &Aug, d: &AugDeriv, c: f64| -> Aug {
        let mut z = aug.z.clone();
        let mut ax = aug.a_x.clone();
        let mut av = aug.a_v.clone();
        for i in 0..n {
            z.positions[i] += d.dz_x[i] * c;
            z.velocities[i] += d.dz_v[i] * c;
            ax[i] += d.da_x[i] * c;
            av[i] += d.da_v[i] * c;
        }
        z.time = aug.z.time - c;
        Aug { z, a_x: ax, a_v: av }
    };

    let mut aug = Aug {
        z: z_end.clone(),
        a_x: a_x.clone(),
        a_v: a_v.clone(),
    };
    for _ in 0..n_steps {
        let d1 = eval_aug(&aug)?;
        let s2 = advance(&aug, &d1, h / 2.0);
        let d2 = eval_aug(&s2)?;
        let s3 = advance(&aug, &d2, h / 2.0);
        let d3 = eval_aug(&s3)?;
        let s4 = advance(&aug, &d3, h);
        let d4 = eval_aug(&s4)?;

        let w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
        let parts = [&d1, &d2, &d3, &d4];
        for i in 0..n {
            for (s, d) in parts.iter().enumerate() {
                aug.z.positions[i] += d.dz_x[i] * w[s];
                aug.z.velocities[i] += d.dz_v[i] * w[s];
                aug.a_x[i] += d.da_x[i] * w[s];
                aug.a_v[i] += d.da_v[i] * w[s];
            }
        }
        for (s, d) in parts.iter().enumerate() {
            for (g, dg) in grad.iter_mut().zip(&d.dg) {
                *g += dg * w[s];
            }
        }
        aug.z.time -= h;
        check_state(&aug.z)?;
        if aug.a_x.iter().chain(&aug.a_v).any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup {
                time: aug.z.time,
                what: "costate became non-finite".into(),
            });
        }
    }
    *a_x = aug.a_x;
    *a_v = aug.a_v;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub n_samples: usize,
    pub n_skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn update(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let b1 = cfg.adam_beta1;
        let b2 = cfg.adam_beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for p in 0..theta.len() {
            self.m[p] = b1 * self.m[p] + (1.0 - b1) * grad[p];
            self.v[p] = b2 * self.v[p] + (1.0 - b2) * grad[p] * grad[p];
            let m_hat = self.m[p] / bc1;
            let v_hat = self.v[p] / bc2;
            theta[p] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Fits the force field to the window set. Samples whose rollout blows up
/// are skipped; an epoch in which every sample blows up aborts training.
pub fn train(
    field: &ForceField,
    theta0: Vec<f64>,
    scene: &Scene,
    windows: &[WindowPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::InvalidConfig(
            "training requires at least one window".into(),
        ));
    }
    let mut theta = theta0;
    if theta.len() != field.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "initial parameters hold {}, field needs {}",
            theta.len(),
            field.n_params()
        )));
    }
    let mut adam = Adam::new(theta.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..windows.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut n_ok = 0usize;
        let mut n_skipped = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            // Parallel map, sequential index-ordered reduction: the sum is
            // independent of thread count.
            let results: Vec<Option<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&w| {
                    match loss_gradient(
                        field,
                        &theta,
                        scene,
                        &windows[w],
                        cfg.solver_step,
                        cfg.gradient_mode,
                    ) {
                        Ok((loss, grad))
                            if loss.is_finite() && grad.iter().all(|g| g.is_finite()) =>
                        {
                            Some((loss, grad))
                        }
                        Ok(_) => None,
                        Err(Error::NumericalBlowup { .. }) => None,
                        Err(e) => return Err(e),
                    }
                    .map_or(Ok(None), |v| Ok(Some(v)))
                })
                .collect::<Result<_>>()?;

            let mut grad = vec![0.0; theta.len()];
            let mut batch_ok = 0usize;
            for r in results {
                match r {
                    Some((loss, g)) => {
                        epoch_loss += loss;
                        batch_ok += 1;
                        for (acc, gi) in grad.iter_mut().zip(&g) {
                            *acc += gi;
                        }
                    }
                    None => n_skipped += 1,
                }
            }
            if batch_ok == 0 {
                continue;
            }
            n_ok += batch_ok;
            let inv = 1.0 / batch_ok as f64;
            for g in &mut grad {
                *g *= inv;
            }
            adam.update(&mut theta, &grad, cfg);
        }

        if n_ok == 0 {
            return Err(Error::TrainingDiverged { epoch });
        }
        let stats = EpochStats {
            epoch,
            mean_loss: epoch_loss / n_ok as f64,
            n_samples: n_ok,
            n_skipped,
        };
        on_epoch(&stats);
        history.push(stats);
    }

    Ok(TrainOutcome { theta, history })
}
