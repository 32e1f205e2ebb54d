//! Unsupervised clustered federated learning for acoustic sensor networks.
//!
//! Microphone nodes each train the bottleneck of a shared, pretrained
//! convolutional autoencoder on their own log-mel features. The server only
//! sees parameter updates; it groups nodes by the cosine similarity of those
//! updates, which separates them by the sound source that dominates their
//! recordings. Membership values then rank how representative each node is
//! of its cluster.

pub mod acoustics;
pub mod cfl;
pub mod error;
pub mod eval;
pub mod features;
pub mod membership;
pub mod nn;
pub mod vecspace;

pub use error::{Error, Result};
pub use nn::{Autoencoder, EncodedSegment, FeatureSegment};
pub use vecspace::{cosine_similarity, similarity_matrix, ParamVector, SimilarityMatrix};
