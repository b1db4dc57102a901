//! Actor–refiner search agents on seeded multi-hop worlds.
//!
//! * [`synthenv`]: world generation, the mock search engine, chunk utility.
//! * [`trajectory`]: tagged trajectories, prefixes, text and record formats.
//! * [`actor`]: the base softmax policy and its multi-turn rollout.
//! * [`refiner`]: discriminator, trimmer and the accept-or-repair loop.
//! * [`reward`]: exact-match outcome, utility-density process reward.
//! * [`grpo`]: group-relative clipped objective with analytic gradients.
//! * [`oracle`]: exact enumeration of small trajectory spaces and the
//!   mixture/gain identities computed over them.
//!
//! Numeric types are generic over [`Real`]; the aliases below fix `f64`.

pub mod actor;
pub mod error;
pub mod grpo;
pub mod numeric;
pub mod oracle;
pub mod refiner;
pub mod reward;
pub mod scalar;
pub mod synthenv;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Trajectory = trajectory::Trajectory<f64>;
pub type Step = trajectory::Step<f64>;
pub type ActorParams = actor::ActorParams<f64>;
pub type RefinerParams = refiner::RefinerParams<f64>;
pub type PolicyParams = grpo::PolicyParams<f64>;
pub type AugmentedTrace = refiner::AugmentedTrace<f64>;
pub type RewardBreakdown = reward::RewardBreakdown<f64>;
pub type EnumeratedSpace = oracle::EnumeratedSpace<f64>;
