//! Learning and executing geometric task networks on synthetic desk-scale
//! manipulation worlds.
//!
//! The pipeline: learn task-parameterized skill models from demonstrations
//! ([`skill`]), gather training plans with an exhaustive hybrid
//! task-and-motion search ([`tamp`]), compile the plans into a geometric task
//! network ([`gtn`]), then solve fresh problem instances online with
//! transition scoring and failure recovery ([`executor`]). [`world`] provides
//! the scripted environments and task suites everything runs against.

pub mod error;
pub mod executor;
pub mod gauss;
pub mod gtn;
pub mod skill;
pub mod state;
pub mod store;
pub mod tamp;
pub mod tpgmm;
pub mod tphsmm;
pub mod world;

pub use error::{Error, Result};
