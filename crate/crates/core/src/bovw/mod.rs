//! Bag-of-visual-words retrieval with Hamming Embedding.

mod codebook;
mod he;
mod index;

pub use codebook::{train_codebook, Codebook, KMeansReport, DEFAULT_K, DEFAULT_MAX_ITERS};
pub use he::{hamming, he_signature, train_he, HeParams, HE_BITS};
pub(crate) use index::sift_descriptors;
pub use index::{
    index_descriptors, index_images, load_index, query_bovw, query_descriptors, save_index, InvertedIndex,
    DEFAULT_HE_THRESHOLD,
};
