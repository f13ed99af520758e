//! Slice-based behavioral evaluation for machine-learning models.
//!
//! A project ingests instance metadata, runs external function plugins (models,
//! distills, transforms, metrics) through a cached parallel pipeline, and then
//! answers cross-filtered queries, per-slice metrics, regression flags across
//! model versions and behavioral unit tests.

pub mod model;
pub mod table;
pub mod pipeline;
pub mod query;
pub mod analysis;
pub mod server;
pub mod demo;
