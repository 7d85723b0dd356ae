//! Crowd evacuation toolkit: ground-truth simulators (social force model,
//! ORCA), a social-force-structured neural ODE trained on trajectory
//! windows, and Monte Carlo evacuation metrics (ICE curves, evacuation
//! times) for comparing the learned model against the simulators.

pub mod config;
pub mod dataset;
pub mod error;
pub mod forcefield;
pub mod metrics;
pub mod mlp;
pub mod orca;
pub mod preset;
pub mod scene;
pub mod sfm;
pub mod solver;
pub mod state;
pub mod train;
pub mod trajectory;
pub mod vec2;

pub use error::{Error, Result};
pub use scene::{Scene, Segment, SpawnMode};
pub use state::{CrowdState, DerivativeFn};
pub use vec2::Vec2;
