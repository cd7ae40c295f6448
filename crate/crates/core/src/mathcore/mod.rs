//! Deterministic numeric primitives shared by every other module: finite
//! vectors, seeded random streams, distance measures and distribution
//! sampling.
//!
//! All reductions run sequentially in index order so that results are
//! bit-reproducible for a fixed input.

mod distance;
mod rng;
mod sampling;
mod vector;

pub use distance::{cosine_similarity, dot, l1_distance, l2_distance, norm};
pub use rng::{stream_id, RngStream};
pub use sampling::{sample_dirichlet, sample_gaussian, standard_normal, uniform};
pub use vector::Vector;
