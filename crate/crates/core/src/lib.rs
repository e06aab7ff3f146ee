//! Carrier-relationship scene graphs (CRSG) and a fixed-policy search for
//! displaced everyday objects, evaluated in a deterministic grid world.

pub mod error;
pub mod features;
pub mod graph;
pub mod oracle;
pub mod policy;
pub mod query;
pub mod scene;
pub mod update;
pub mod world;

pub use error::{Error, Result};
