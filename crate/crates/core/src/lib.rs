//! Numeric core for prototype-based personalized federated learning:
//! vectors and random streams, synthetic client data, the local head
//! model, its loss, class prototypes and Gaussian prototype noise.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

mod error;
mod scalar;

pub mod datagen;
pub mod mathcore;
pub mod model;
pub mod objective;
pub mod privacy;
pub mod prototype;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec64 = mathcore::Vector<f64>;
pub type Vec32 = mathcore::Vector<f32>;
pub type Sample64 = datagen::Sample<f64>;
pub type ClientDataset64 = datagen::ClientDataset<f64>;
pub type Backbone64 = model::BackboneSpec<f64>;
pub type HeadParams64 = model::HeadParams<f64>;
pub type HeadGrads64 = model::HeadGrads<f64>;
pub type Encoded64 = model::Encoded<f64>;
pub type PrototypeSet64 = prototype::PrototypeSet<f64>;
pub type Objective64 = objective::Objective<f64>;
