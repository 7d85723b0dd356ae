use crate::error::{Error, Result};
use crate::state::{CrowdState, DerivativeFn};
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};

/// Any state coordinate exceeding this magnitude aborts integration.
pub const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Euler,
    Rk4,
}

impl Default for Method {
    fn default() -> Self {
        Method::Rk4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Step size in seconds.
    pub step_size: f64,
}

impl IntegratorConfig {
    pub fn new(method: Method, step_size: f64) -> Result<Self> {
        if step_size <= 0.0 || !step_size.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "step_size must be positive, got {step_size}"
            )));
        }
        Ok(IntegratorConfig { method, step_size })
    }
}

fn eval_into(
    f: &dyn DerivativeFn,
    state: &CrowdState,
    frozen: &[bool],
    dx: &mut [Vec2],
    dv: &mut [Vec2],
) -> Result<()> {
    dx.fill(Vec2::default());
    dv.fill(Vec2::default());
    f.eval(state, frozen, dx, dv)
}

fn advanced(state: &CrowdState, frozen: &[bool], dx: &[Vec2], dv: &[Vec2], h: f64) -> CrowdState {
    let mut out = state.clone();
    for i in 0..state.len() {
        if frozen[i] {
            continue;
        }
        out.positions[i] += dx[i] * h;
        out.velocities[i] += dv[i] * h;
    }
    out.time = state.time + h;
    out
}

/// One explicit integration step of size `h`; frozen agents do not move.
pub fn step(
    f: &dyn DerivativeFn,
    state: &CrowdState,
    frozen: &[bool],
    method: Method,
    h: f64,
) -> Result<CrowdState> {
    let n = state.len();
    match method {
        Method::Euler => {
            let mut dx = vec![Vec2::default(); n];
            let mut dv = vec![Vec2::default(); n];
            eval_into(f, state, frozen, &mut dx, &mut dv)?;
            Ok(advanced(state, frozen, &dx, &dv, h))
        }
        Method::Rk4 => {
            let mut k_x = vec![vec![Vec2::default(); n]; 4];
            let mut k_v = vec![vec![Vec2::default(); n]; 4];
            eval_into(f, state, frozen, &mut k_x[0], &mut k_v[0])?;
            let z2 = advanced(state, frozen, &k_x[0], &k_v[0], h / 2.0);
            eval_into(f, &z2, frozen, &mut k_x[1], &mut k_v[1])?;
            let z3 = advanced(state, frozen, &k_x[1], &k_v[1], h / 2.0);
            eval_into(f, &z3, frozen, &mut k_x[2], &mut k_v[2])?;
            let z4 = advanced(state, frozen, &k_x[2], &k_v[2], h);
            eval_into(f, &z4, frozen, &mut k_x[3], &mut k_v[3])?;

            let mut out = state.clone();
            let w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
            for i in 0..n {
                if frozen[i] {
                    continue;
                }
                for s in 0..4 {
                    out.positions[i] += k_x[s][i] * w[s];
                    out.velocities[i] += k_v[s][i] * w[s];
                }
            }
            out.time = state.time + h;
            Ok(out)
        }
    }
}

fn check_finite(state: &CrowdState) -> Result<()> {
    if !state.is_finite() || state.max_abs() > BLOWUP_LIMIT {
        return Err(Error::NumericalBlowup {
            time: state.time,
            what: "state coordinate non-finite or beyond limit".into(),
        });
    }
    Ok(())
}

/// Integrates `f` from `t0` to `t1` with fixed steps. If the interval is not
/// an integer multiple of the step size (tolerance 1e-9), the final partial
/// step is shortened to land exactly on `t1`.
pub fn ode_solve(
    z0: &CrowdState,
    f: &dyn DerivativeFn,
    t0: f64,
    t1: f64,
    cfg: IntegratorConfig,
) -> Result<CrowdState> {
    if t1 < t0 {
        return Err(Error::InvalidConfig(format!(
            "t1 ({t1}) must be >= t0 ({t0})"
        )));
    }
    let h = cfg.step_size;
    let span = t1 - t0;
    let n_full = (span / h + 1e-9).floor() as u64;
    let rem = span - n_full as f64 * h;

    let frozen = vec![false; z0.len()];
    let mut z = z0.clone();
    z.time = t0;
    check_finite(&z)?;
    for k in 0..n_full {
        z = step(f, &z, &frozen, cfg.method, h)?;
        z.time = t0 + (k + 1) as f64 * h;
        check_finite(&z)?;
    }
    if rem > 1e-9 {
        z = step(f, &z, &frozen, cfg.method, rem)?;
        z.time = t1;
        check_finite(&z)?;
    }
    z.time = t1;
    Ok(z)
}
