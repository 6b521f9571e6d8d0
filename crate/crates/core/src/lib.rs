//! Distributed rigid-particle dynamics on a simulated message-passing
//! machine, with two interchangeable shadow synchronization strategies.
//!
//! Every rank of the simulated machine owns one box of a regular domain
//! decomposition. A particle is stored as a master on the rank containing
//! its center and as a shadow on every other rank whose box it overlaps.
//! Ranks only interact through [`transport::Transport`] exchanges.
//!
//! The entry point for most uses is [`scenario::ScenarioConfig`], which
//! builds a [`world::World`] and drives it through [`harness::run`].

pub mod dynamics;
pub mod geometry;
pub mod harness;
pub mod particle;
pub mod partition;
pub mod scenario;
pub mod store;
pub mod sync;
pub mod transport;
pub mod world;

pub use geometry::{Aabb, DomainBox, Vec3};
pub use particle::{ParticleId, ParticleState};
pub use partition::{Partition, Rank};
pub use sync::SyncStrategy;
pub use world::{ExecMode, World};

/// Any failure surfaced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Partition(#[from] partition::PartitionError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error(transparent)]
    Transport(#[from] transport::TransportError),
    #[error(transparent)]
    Sync(#[from] sync::SyncError),
    #[error(transparent)]
    Dynamics(#[from] dynamics::DynamicsError),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}
