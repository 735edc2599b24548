//! Simulation laboratory for round-limited blackboard protocols that compute
//! approximate bipartite matchings on a recursive hard distribution.

pub mod baselines;
pub mod bounds;
pub mod experiment;
pub mod format;
pub mod graph;
pub mod info;
pub mod matching;
pub mod mu;
pub mod params;
pub mod protocol;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use graph::{BipartiteGraph, Matching};
pub use mu::{InstanceBundle, MuSampler};
pub use params::ParamsTable;
pub use protocol::Protocol;

pub type Distribution = info::DiscreteDistribution<f64>;
pub type Distribution32 = info::DiscreteDistribution<f32>;
pub type Joint = info::JointTable<f64>;
pub type Joint32 = info::JointTable<f32>;
/// Exact `a + b·√c` over arbitrary-precision rationals.
pub type ExactSurd = bounds::QuadSurd<num_rational::BigRational>;
