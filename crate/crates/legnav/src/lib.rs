//! Navigation planning for legged robots on robo-centric height maps.
//!
//! The crate covers the full pipeline: depth clouds become layered height
//! maps (`pipeline`), poses are validated through a reachability abstraction
//! (`reach`), candidate transitions get (time, energy, risk) costs (`cost`),
//! a budget-bounded lazy graph with batched validation answers path queries
//! (`planner`), and a deterministic closed-loop harness with a pure-pursuit
//! follower exercises everything end to end (`sim`, `eval`).

pub mod config;
pub mod cost;
pub mod eval;
pub mod geom;
pub mod mlp;
pub mod pipeline;
pub mod planner;
pub mod reach;
pub mod sim;
pub mod terrain;

pub use terrain::{CellIndex, HeightMap};
