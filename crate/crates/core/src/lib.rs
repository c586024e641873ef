//! Learned encoding advisor for columnar integer and string data.
//!
//! The crate covers the whole pipeline: six slice codecs and their scan
//! paths ([`codecs`]), a slice-organized column file ([`colstore`]),
//! synthetic training data ([`synthgen`]), slice statistics and feature
//! vectors ([`features`]), regression models ([`models`]), training
//! orchestration ([`harness`]) and per-slice encoding selection
//! ([`advisor`]).

pub mod advisor;
pub mod codecs;
pub mod colstore;
mod error;
pub mod features;
pub mod harness;
pub mod models;
pub mod synthgen;

pub use error::{Error, Result};

pub type Forest = models::ForestModel<f64>;
pub type Linear = models::LinearModel<f64>;
pub type Model = models::Model<f64>;
pub type TrainingSet = models::TrainingSet<f64>;
