//! A small convolutional feature extractor with generalized-mean pooling.
//!
//! Weights are drawn once from a seeded generator and never trained. The
//! network exposes its forward pass and an exact reverse-mode gradient with
//! respect to the input, which is all the perturbation search needs.

mod grad;
mod layers;
mod persist;

pub use grad::{
    finite_diff_gradient, grad_distance_wrt_perturbation, loss_and_gradient, perturbation_loss,
    Differentiable, IdentityExtractor, WorkingSize,
};
pub use persist::{load_weights, save_weights, WeightsHeader};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imagecore::Image;
use crate::{Error, Result};

/// Floor applied to activations before the generalized-mean power.
pub const GEM_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    GemPool {
        p: f64,
    },
    L2Normalize,
}

/// Architecture plus the seed its weights are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    /// Subtracted from every input sample before the first layer.
    #[serde(default = "default_input_offset")]
    pub input_offset: f64,
    pub layers: Vec<Layer>,
    #[serde(default)]
    pub seed: u64,
}

fn default_input_offset() -> f64 {
    0.5
}

impl Default for NetworkSpec {
    /// Three stride-2 3x3 convolutions (3→16→32→64) with ReLU, GeM(p=3)
    /// and L2 normalisation.
    fn default() -> Self {
        let conv = |out_channels| Layer::Conv {
            out_channels,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        Self {
            input_channels: 3,
            input_offset: default_input_offset(),
            layers: vec![
                conv(16),
                Layer::Relu,
                conv(32),
                Layer::Relu,
                conv(64),
                Layer::Relu,
                Layer::GemPool { p: 3.0 },
                Layer::L2Normalize,
            ],
            seed: 0,
        }
    }
}

impl NetworkSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.input_offset.is_finite() {
            return Err(Error::InvalidSpec("input_offset must be finite".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::InvalidSpec("input_channels must be positive".into()));
        }
        let n = self.layers.len();
        if n < 2
            || !matches!(self.layers[n - 2], Layer::GemPool { .. })
            || self.layers[n - 1] != Layer::L2Normalize
        {
            return Err(Error::InvalidSpec(
                "layer list must end with gem_pool followed by l2_normalize".into(),
            ));
        }
        for (i, layer) in self.layers[..n - 2].iter().enumerate() {
            match *layer {
                Layer::Conv {
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: conv parameters must be positive"
                        )));
                    }
                }
                Layer::Relu => {}
                Layer::GemPool { .. } | Layer::L2Normalize => {
                    return Err(Error::InvalidSpec(format!(
                        "layer {i}: pooling/normalisation only allowed at the end"
                    )));
                }
            }
        }
        match self.layers[n - 2] {
            Layer::GemPool { p } if p.is_finite() && p > 0.0 => Ok(()),
            _ => Err(Error::InvalidSpec("gem_pool exponent must be finite and > 0".into())),
        }
    }

    /// Number of channels entering the pooling stage (the feature dimension).
    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .fold(self.input_channels, |c, l| match l {
                Layer::Conv { out_channels, .. } => *out_channels,
                _ => c,
            })
    }

    /// Spatial size after every conv layer, or an error when any collapses.
    pub fn output_shape(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let mut hw = (height, width);
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Conv {
                kernel,
                stride,
                padding,
                ..
            } = *layer
            {
                let step = |d: usize| (d + 2 * padding).checked_sub(kernel).map(|r| r / stride + 1);
                match (step(hw.0), step(hw.1)) {
                    (Some(h), Some(w)) => hw = (h, w),
                    _ => {
                        return Err(Error::UndersizedInput(format!(
                            "{height}x{width} input collapses at layer {i}"
                        )))
                    }
                }
            }
        }
        Ok(hw)
    }

    /// Smallest square input accepted by the network.
    pub fn min_input_size(&self) -> usize {
        (1..).find(|&s| self.output_shape(s, s).is_ok()).unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvWeights {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvWeights {
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Immutable network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub spec: NetworkSpec,
    /// One entry per conv layer, in layer order.
    pub convs: Vec<ConvWeights>,
}

impl NetworkWeights {
    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn gem_p(&self) -> f64 {
        match self.spec.layers[self.spec.layers.len() - 2] {
            Layer::GemPool { p } => p,
            _ => unreachable!("validated spec"),
        }
    }
}

/// Unit-norm global descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Kaiming-uniform initialisation: kernel entries in `±sqrt(6 / fan_in)`,
/// biases in `±1 / sqrt(fan_in)`, sampled as `f32` from ChaCha8 so the
/// 32-bit weight blob is lossless.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<NetworkWeights> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut convs = Vec::new();
    let mut channels = spec.input_channels;
    for layer in &spec.layers {
        if let Layer::Conv {
            out_channels,
            kernel,
            stride,
            padding,
        } = *layer
        {
            let fan_in = channels * kernel * kernel;
            let bound = kaiming_bound(fan_in) as f32;
            let bias_bound = (1.0 / (fan_in as f64).sqrt()) as f32;
            let weight = (0..out_channels * fan_in)
                .map(|_| f64::from(rng.random_range(-bound..bound)))
                .collect();
            let bias = (0..out_channels)
                .map(|_| f64::from(rng.random_range(-bias_bound..bias_bound)))
                .collect();
            convs.push(ConvWeights {
                in_channels: channels,
                out_channels,
                kernel,
                stride,
                padding,
                weight,
                bias,
            });
            channels = out_channels;
        }
    }
    let mut spec = spec.clone();
    spec.seed = seed;
    Ok(NetworkWeights { spec, convs })
}

pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Feature vector of an image.
pub fn forward(weights: &NetworkWeights, img: &Image) -> Result<FeatureVector> {
    let (h, w) = img.dims();
    Ok(FeatureVector(weights.forward_raw(img.data(), h, w)?))
}

/// Features for many images, in input order.
pub fn forward_batch(weights: &NetworkWeights, images: &[Image]) -> Result<Vec<FeatureVector>> {
    crate::par::try_map(images, |img| forward(weights, img))
}

pub fn feature_distance_sq(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    distance_sq(a.as_slice(), b.as_slice())
}

pub(crate) fn distance_sq(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::mismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> NetworkSpec {
        NetworkSpec {
            input_channels: 3,
            input_offset: 0.5,
            layers: vec![
                Layer::Conv { out_channels: 8, kernel: 3, stride: 1, padding: 1 },
                Layer::Relu,
                Layer::GemPool { p: 3.0 },
                Layer::L2Normalize,
            ],
            seed: 0,
        }
    }

    fn noise_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, (0..h * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_network(&NetworkSpec::default(), 5).unwrap();
        let b = init_network(&NetworkSpec::default(), 5).unwrap();
        assert_eq!(a, b);
        let c = init_network(&NetworkSpec::default(), 6).unwrap();
        assert_ne!(a.convs[0].weight, c.convs[0].weight);
    }

    #[test]
    fn kaiming_bound_for_3x3_rgb() {
        assert!((kaiming_bound(27) - 0.4714).abs() < 1e-4);
        let w = init_network(&small_spec(), 1).unwrap();
        let bound = kaiming_bound(w.convs[0].fan_in());
        assert!(w.convs[0].weight.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn spec_without_final_normalize_rejected() {
        let mut spec = small_spec();
        spec.layers.pop();
        assert!(matches!(init_network(&spec, 0), Err(Error::InvalidSpec(_))));
        let mut spec = small_spec();
        spec.layers.insert(0, Layer::L2Normalize);
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.layers[2] = Layer::GemPool { p: 0.0 };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = NetworkSpec::default().with_seed(9);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"gem_pool\""));
        let back: NetworkSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn output_is_unit_norm() {
        let w = init_network(&NetworkSpec::default(), 3).unwrap();
        for s in 0..5 {
            let f = forward(&w, &noise_image(32, 24, s)).unwrap();
            assert_eq!(f.dim(), 64);
            assert!((f.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_image_is_well_defined() {
        let w = init_network(&NetworkSpec::default(), 3).unwrap();
        let f = forward(&w, &Image::filled(16, 16, [0.0; 3]).unwrap()).unwrap();
        assert!(f.0.iter().all(|v| v.is_finite()));
        assert!((f.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn undersized_input_rejected() {
        let spec = NetworkSpec {
            input_channels: 3,
            input_offset: 0.5,
            layers: vec![
                Layer::Conv { out_channels: 4, kernel: 5, stride: 1, padding: 0 },
                Layer::GemPool { p: 3.0 },
                Layer::L2Normalize,
            ],
            seed: 0,
        };
        let w = init_network(&spec, 0).unwrap();
        assert_eq!(spec.min_input_size(), 5);
        assert!(matches!(
            forward(&w, &Image::filled(4, 8, [0.5; 3]).unwrap()),
            Err(Error::UndersizedInput(_))
        ));
        assert!(forward(&w, &Image::filled(5, 5, [0.5; 3]).unwrap()).is_ok());
    }

    #[test]
    fn distance_properties() {
        let e1 = FeatureVector(vec![1.0, 0.0]);
        let e2 = FeatureVector(vec![0.0, 1.0]);
        assert_eq!(feature_distance_sq(&e1, &e1).unwrap(), 0.0);
        assert_eq!(feature_distance_sq(&e1, &e2).unwrap(), 2.0);
        let neg = FeatureVector(vec![-1.0, 0.0]);
        assert_eq!(feature_distance_sq(&e1, &neg).unwrap(), 4.0);
        assert!(feature_distance_sq(&e1, &FeatureVector(vec![1.0])).is_err());
    }

    #[test]
    fn different_seeds_give_different_features() {
        let img = noise_image(32, 32, 1);
        let a = forward(&init_network(&NetworkSpec::default(), 1).unwrap(), &img).unwrap();
        let b = forward(&init_network(&NetworkSpec::default(), 2).unwrap(), &img).unwrap();
        assert!(feature_distance_sq(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let w = init_network(&NetworkSpec::default(), 4).unwrap();
        let img = noise_image(40, 40, 2);
        assert_eq!(forward(&w, &img).unwrap(), forward(&w, &img).unwrap());
    }
}
