//! Passivity-based output agreement and optimal flow control on networks.
//!
//! Nodes are passive plants coupled through edge controllers that embed an
//! internal model of the disturbance exosystem. The crate covers the graph
//! algebra, the regulator equations, a static flow optimizer used as an
//! oracle, and an RK4 closed-loop simulator.

pub mod controller;
pub mod cost;
pub mod error;
pub mod exosystem;
pub mod graph;
pub mod linalg;
pub mod optimizer;
pub mod plant;
pub mod regulator;
pub mod scenario;
pub mod sim;
pub mod table;

pub use controller::{BregmanMode, ControllerKind, ControllerSpec};
pub use cost::{CostFunction, EdgeCost};
pub use error::{Error, Result};
pub use exosystem::{ExosystemKind, ExosystemSpec};
pub use graph::Graph;
pub use plant::{ConcaveDrift, PlantSpec};
pub use sim::{ClosedLoop, InitMode, RunConfig, Trajectory};
pub use scenario::Scenario;
