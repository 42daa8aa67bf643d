//! Cancer-registry data warehouse: staging, cleaning and conforming of
//! source extracts, a columnar star-schema store, OLAP queries and canned
//! clinical reports.

pub mod error;
pub mod ingest;
pub mod olap;
pub mod pipeline;
pub mod reports;
pub mod schema;
pub mod synthgen;
pub mod transform;
pub mod warehouse;

pub use error::{Error, Result};
