//! Landmark recognition on embedding vectors.
//!
//! The pipeline, end to end:
//!
//! 1. **data** — value types, embedding/metadata file codecs, a synthetic
//!    dataset generator and the four-part geographic curriculum split.
//! 2. **train** — a small embedding network (MLP trunk, embedding layer with
//!    batch normalization, linear classifier) trained with SGD-momentum on
//!    softmax cross-entropy plus a center-loss term that skips the
//!    non-landmark class, staged over the curriculum parts.
//! 3. **cluster** — hierarchical agglomerative clustering of each class's
//!    embeddings and one centroid per valid cluster.
//! 4. **index** — exact and inverted-cell top-k dot-product search over
//!    centroids, with geographic box scoping.
//! 5. **pipeline** — threshold-gated inference with reference verification
//!    and city consistency, plus the database-cleaning pass.
//! 6. **eval** / **bench** — sensitivity/specificity, mAP/mP@k, threshold
//!    calibration and the centroid-vs-full-database timing benchmark.
//!
//! Built with the `parallel` feature (default), the per-class clustering
//! jobs and batch inference fan out over rayon; without it the same code
//! runs sequentially.

pub mod cluster;
pub mod index;
pub mod train;
pub mod data;
mod error;
pub mod kv;

pub use error::{Error, Result};
