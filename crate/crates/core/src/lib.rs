//! Fusion of locally accurate but drifting odometry with noisy, drift-free
//! global sensors (GPS, magnetometer, barometer) through pose-graph
//! optimization, producing locally smooth and globally anchored 6-DoF
//! trajectories. Includes the simulation and evaluation tooling used to
//! verify the pipeline end to end.

pub mod evaluation;
pub mod factors;
pub mod geodesy;
pub mod graph;
pub mod io;
pub mod manifold;
pub mod pipeline;
pub mod simulate;
pub mod solver;

pub use evaluation::Trajectory;
pub use graph::{PoseGraph, NodeId};
pub use manifold::{Pose, UnitQuat};
