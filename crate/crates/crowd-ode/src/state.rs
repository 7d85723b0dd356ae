use crate::error::{Error, Result};
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};

/// Positions and velocities of N agents at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdState {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    /// Simulation time in seconds.
    pub time: f64,
}

impl CrowdState {
    pub fn new(positions: Vec<Vec2>, velocities: Vec<Vec2>, time: f64) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} positions vs {} velocities",
                positions.len(),
                velocities.len()
            )));
        }
        Ok(CrowdState {
            positions,
            velocities,
            time,
        })
    }

    pub fn zeros(n: usize) -> Self {
        CrowdState {
            positions: vec![Vec2::default(); n],
            velocities: vec![Vec2::default(); n],
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|p| p.is_finite()) && self.velocities.iter().all(|v| v.is_finite())
    }

    /// Largest coordinate magnitude over positions and velocities.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for p in self.positions.iter().chain(self.velocities.iter()) {
            m = m.max(p.x.abs()).max(p.y.abs());
        }
        m
    }
}

/// Right-hand side of the crowd ODE: fills dx/dt and dv/dt for every agent.
///
/// `frozen[n]` marks agents that have left the scene; implementations must
/// write zero derivatives for them and exclude them as interaction sources.
/// The slices come pre-zeroed from the solver.
pub trait DerivativeFn: Sync {
    fn eval(
        &self,
        state: &CrowdState,
        frozen: &[bool],
        dx: &mut [Vec2],
        dv: &mut [Vec2],
    ) -> Result<()>;
}

impl<F> DerivativeFn for F
where
    F: Fn(&CrowdState, &[bool], &mut [Vec2], &mut [Vec2]) -> Result<()> + Sync,
{
    fn eval(
        &self,
        state: &CrowdState,
        frozen: &[bool],
        dx: &mut [Vec2],
        dv: &mut [Vec2],
    ) -> Result<()> {
        self(state, frozen, dx, dv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_lengths() {
        let r = CrowdState::new(vec![Vec2::new(0.0, 0.0)], vec![], 0.0);
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn max_abs_scans_both_arrays() {
        let s = CrowdState::new(
            vec![Vec2::new(1.0, -2.0)],
            vec![Vec2::new(0.5, -7.25)],
            0.0,
        )
        .unwrap();
        assert_eq!(s.max_abs(), 7.25);
    }
}
