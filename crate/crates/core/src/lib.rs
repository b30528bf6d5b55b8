//! Query binning: secure selection over a relation split into an encrypted
//! sensitive part and a plaintext non-sensitive part.
//!
//! The owner groups searchable values into sensitive and non-sensitive bins
//! so that every query fetches a whole sensitive bin from the encrypted
//! store and a whole non-sensitive bin from the plaintext store. The stores
//! see only bin-level pairs, which hides which sensitive tuple shares a
//! value with which plaintext tuple.

pub mod audit;
pub mod binning;
pub mod costmodel;
pub mod crypto;
pub mod error;
pub mod executor;
pub mod io;
pub mod model;
pub mod seed;
pub mod stores;
pub mod workload;

pub use error::{QbError, Result};
pub use model::{AttributeValue, OwnerMetadata, PartitionedRelation, Row};
pub use seed::Seed;
