//! End-to-end pixel-goal navigation at desk scale: a procedural indoor
//! simulator with oracle planners, imitation episode generation, a
//! transformer policy with tracking and temporal-distance auxiliary heads,
//! SR/SPL/DTG evaluation, and an LLM/VLM hierarchical planner for object
//! search with deterministic mock adapters.

pub mod adapters;
pub mod config;
pub mod datagen;
pub mod evaluation;
pub mod nn;
pub mod planner;
pub mod policy;
pub mod training;
pub mod util;
pub mod worldsim;
