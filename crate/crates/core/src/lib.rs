//! Cycle-driven simulator of a hierarchical cloudlet overlay: a Chord ring of
//! server clusters, gossip flooding inside clusters, and two load balancers.

pub mod error;
pub mod flooding;
pub mod id;
pub mod inter;
pub mod io;
pub mod intra;
pub mod load;
pub mod metrics;
pub mod overlay;
pub mod sim;

pub use error::{Error, Result};
pub use id::{IdSpace, Identifier, RingSpan};
