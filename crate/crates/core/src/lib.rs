//! Content-based image retrieval with neural, local and global feature
//! back-ends, plus an adversarial query generator that maximises the neural
//! feature distance of a query under an L-infinity budget.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`imagecore`]: image containers, 8-bit round trips, resize/crop, noise.
//! - [`neuralnet`]: a small differentiable CNN with generalized-mean pooling.
//! - [`pire`]: the iterative perturbation search and its finalisations.
//! - [`localfeat`]: SIFT detection/description, keypoint removal/injection,
//!   grayscale-to-color recovery.
//! - [`bovw`]: visual vocabulary, Hamming Embedding and inverted index.
//! - [`globalfeat`]: CEDD and GIST descriptors and distance ranking.
//! - [`evalmetrics`]: AP/mAP under the good/ok/junk protocol and SSIM.
//! - [`harness`]: datasets, experiment orchestration and reports.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.

pub mod bovw;
pub mod error;
pub mod evalmetrics;
pub mod globalfeat;
pub mod harness;
pub mod imagecore;
pub mod localfeat;
pub mod neuralnet;
pub mod par;
pub mod pire;

pub use error::{Error, Result};
