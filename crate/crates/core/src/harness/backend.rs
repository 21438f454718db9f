use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{derive_seed, Backend, ExperimentConfig};
use crate::bovw::{index_descriptors, query_descriptors, train_codebook, train_he, InvertedIndex};
use crate::bovw::sift_descriptors;
use crate::evalmetrics::{Ranked, RankedList};
use crate::globalfeat::{rank_by_global, GlobalKind, GlobalVector};
use crate::imagecore::Image;
use crate::localfeat::SiftParams;
use crate::neuralnet::{init_network, load_weights, Differentiable, NetworkWeights, WorkingSize};
use crate::{par, Error, Result};

const STREAM_CODEBOOK: u64 = 11;
const STREAM_HE: u64 = 12;
const STREAM_SAMPLE: u64 = 13;

/// The network every neural ranking and every PIRE attack runs through.
pub fn load_network(cfg: &ExperimentConfig) -> Result<NetworkWeights> {
    match (&cfg.network.weights_header, &cfg.network.weights_blob) {
        (Some(h), Some(b)) => load_weights(h, b),
        _ => init_network(&cfg.network.spec, cfg.network.spec.seed),
    }
}

pub fn neural_features(net: &NetworkWeights, side: usize, img: &Image) -> Result<Vec<f64>> {
    let (h, w) = img.dims();
    WorkingSize::new(net, side).features(img.data(), h, w)
}

/// A searchable collection for one back-end.
#[derive(Debug, Clone)]
pub enum Retriever {
    Neural {
        net: NetworkWeights,
        side: usize,
        features: Vec<(String, Vec<f64>)>,
    },
    Bovw {
        index: InvertedIndex,
        he_threshold: u32,
    },
    Global {
        kind: GlobalKind,
        vectors: Vec<(String, GlobalVector)>,
    },
}

impl Retriever {
    /// Extracts and indexes `collection` for the back-end named in `cfg`.
    pub fn build(cfg: &ExperimentConfig, net: &NetworkWeights, collection: &[(String, Image)]) -> Result<Self> {
        if collection.is_empty() {
            return Err(Error::Data("empty collection".into()));
        }
        match cfg.backend {
            Backend::Neural => {
                let side = cfg.network.working_side;
                let features = par::try_map(collection, |(id, img)| {
                    Ok::<_, Error>((id.clone(), neural_features(net, side, img)?))
                })?;
                Ok(Retriever::Neural { net: net.clone(), side, features })
            }
            Backend::Bovw => build_bovw(cfg, collection),
            Backend::Cedd | Backend::Gist => {
                let kind = if cfg.backend == Backend::Cedd { GlobalKind::Cedd } else { GlobalKind::Gist };
                let vectors = par::try_map(collection, |(id, img)| Ok::<_, Error>((id.clone(), kind.extract(img)?)))?;
                Ok(Retriever::Global { kind, vectors })
            }
        }
    }

    pub fn rank(&self, query: &Image) -> Result<RankedList> {
        match self {
            Retriever::Neural { net, side, features } => {
                let q = neural_features(net, *side, query)?;
                let entries = features
                    .iter()
                    .map(|(id, f)| {
                        let d: f64 = q.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
                        Ranked { id: id.clone(), score: -d }
                    })
                    .collect();
                RankedList::by_score(entries)
            }
            Retriever::Bovw { index, he_threshold } => {
                query_descriptors(&query_sift(query, &index.sift)?, index, *he_threshold)
            }
            Retriever::Global { kind, vectors } => rank_by_global(&kind.extract(query)?, vectors, kind.default_metric()),
        }
    }
}

/// Queries too small for the scale space contribute no descriptors.
fn query_sift(img: &Image, sift: &SiftParams) -> Result<Vec<Vec<f32>>> {
    match sift_descriptors(img, sift) {
        Err(Error::UndersizedInput(_)) => Ok(Vec::new()),
        other => other,
    }
}

fn build_bovw(cfg: &ExperimentConfig, collection: &[(String, Image)]) -> Result<Retriever> {
    let b = &cfg.bovw;
    let entries = par::try_map(collection, |(id, img)| Ok::<_, Error>((id.clone(), sift_descriptors(img, &b.sift)?)))?;
    let all: Vec<&Vec<f32>> = entries.iter().flat_map(|(_, d)| d).collect();
    if all.len() < b.k {
        return Err(Error::Data(format!(
            "collection yields {} descriptors, fewer than k = {}",
            all.len(),
            b.k
        )));
    }
    let training: Vec<Vec<f32>> = if all.len() > b.max_training_descriptors {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SAMPLE, 0));
        let mut picked = sample(&mut rng, all.len(), b.max_training_descriptors).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| all[i].clone()).collect()
    } else {
        all.into_iter().cloned().collect()
    };
    let (codebook, _) = train_codebook(&training, b.k, derive_seed(cfg.seed, STREAM_CODEBOOK, 0), b.max_iters)?;
    let he = train_he(&training, &codebook, derive_seed(cfg.seed, STREAM_HE, 0))?;
    let index = index_descriptors(&entries, &codebook, &he, &b.sift)?;
    Ok(Retriever::Bovw { index, he_threshold: b.he_threshold })
}
