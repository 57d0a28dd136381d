//! Temporally gated two-level policies on the FetchTheKey grid world.

pub mod analysis;
pub mod autodiff;
pub mod env;
pub mod policy;
pub mod ppo;
pub mod scalar;
pub mod trainer;

pub use scalar::Scalar;

pub type Policy64 = policy::Architecture<f64>;
pub type Policy32 = policy::Architecture<f32>;
pub type Params64 = autodiff::ParameterVector<f64>;
pub type Params32 = autodiff::ParameterVector<f32>;
pub type Graph64<'p> = autodiff::Graph<'p, f64>;
pub type Graph32<'p> = autodiff::Graph<'p, f32>;
pub type Batch64 = ppo::TrajectoryBatch<f64>;
pub type Learner64 = ppo::Learner<f64>;
pub type Learner32 = ppo::Learner<f32>;
