use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bovw::{DEFAULT_HE_THRESHOLD, DEFAULT_K, DEFAULT_MAX_ITERS};
use crate::localfeat::SiftParams;
use crate::neuralnet::NetworkSpec;
use crate::pire::{AdamParams, FinalizeMode, PireConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Neural,
    Bovw,
    Cedd,
    Gist,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Neural => "neural",
            Backend::Bovw => "bovw",
            Backend::Cedd => "cedd",
            Backend::Gist => "gist",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Bb,
    Wi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attack {
    None,
    Pire,
    PireRefined,
    Ls,
    Inject,
    LsInject,
    Gaussian,
}

impl Attack {
    pub fn name(self) -> &'static str {
        match self {
            Attack::None => "none",
            Attack::Pire => "pire",
            Attack::PireRefined => "pire_refined",
            Attack::Ls => "ls",
            Attack::Inject => "inject",
            Attack::LsInject => "ls_inject",
            Attack::Gaussian => "gaussian",
        }
    }

    pub fn is_pire(self) -> bool {
        matches!(self, Attack::Pire | Attack::PireRefined)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transform {
    #[default]
    None,
    /// Rescale both sides by `percent`.
    Resize { percent: f64 },
    /// Keep a centred crop holding `percent` of the area.
    Crop { percent: f64 },
}

impl Transform {
    pub fn label(&self) -> String {
        match self {
            Transform::None => "none".into(),
            Transform::Resize { percent } => format!("resize{percent}"),
            Transform::Crop { percent } => format!("crop{percent}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PireSettings {
    pub iterations: usize,
    pub epsilon: f64,
    #[serde(flatten)]
    pub adam: AdamParams,
}

impl Default for PireSettings {
    fn default() -> Self {
        let d = PireConfig::default();
        Self { iterations: d.iterations, epsilon: d.epsilon, adam: d.adam }
    }
}

impl PireSettings {
    pub fn to_config(&self, seed: u64, finalize: FinalizeMode) -> PireConfig {
        PireConfig { iterations: self.iterations, epsilon: self.epsilon, adam: self.adam, seed, finalize }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSettings {
    pub spec: NetworkSpec,
    /// Longer side every image is resampled to before the network.
    pub working_side: usize,
    /// Optional trained weights (JSON header and f32 blob); overrides `spec`.
    pub weights_header: Option<PathBuf>,
    pub weights_blob: Option<PathBuf>,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self { spec: NetworkSpec::default(), working_side: 128, weights_header: None, weights_blob: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BovwSettings {
    pub k: usize,
    pub he_threshold: u32,
    pub max_iters: usize,
    /// Cap on descriptors sampled for codebook and HE training.
    pub max_training_descriptors: usize,
    pub sift: SiftParams,
}

impl Default for BovwSettings {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            he_threshold: DEFAULT_HE_THRESHOLD,
            max_iters: DEFAULT_MAX_ITERS,
            max_training_descriptors: 40_000,
            sift: SiftParams::default(),
        }
    }
}

/// Keypoint removal and injection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KriSettings {
    pub smooth_sigma: f64,
    pub inject_count: usize,
    pub sift: SiftParams,
}

impl Default for KriSettings {
    fn default() -> Self {
        Self { smooth_sigma: 1.2, inject_count: 5, sift: SiftParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianSettings {
    /// Fixed noise level; takes precedence over `target_ssim`.
    pub sigma: Option<f64>,
    /// Per-query SSIM (after 8-bit quantisation) to calibrate sigma to.
    pub target_ssim: Option<f64>,
    pub tolerance: f64,
}

impl Default for GaussianSettings {
    fn default() -> Self {
        Self { sigma: None, target_ssim: None, tolerance: 0.005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakSettings {
    /// PIRE iterations for the replaced collection images.
    pub replacement_iterations: usize,
    /// PIRE iterations for the cross-T query row.
    pub query_iterations: usize,
}

impl Default for LeakSettings {
    fn default() -> Self {
        Self { replacement_iterations: 200, query_iterations: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub backend: Backend,
    pub queries: QueryMode,
    pub attack: Attack,
    #[serde(default)]
    pub pire: PireSettings,
    #[serde(default)]
    pub transform: Transform,
    #[serde(default)]
    pub leak: Option<LeakSettings>,
    #[serde(default)]
    pub network: NetworkSettings,
    #[serde(default)]
    pub bovw: BovwSettings,
    #[serde(default)]
    pub kri: KriSettings,
    #[serde(default)]
    pub gaussian: GaussianSettings,
    /// Root seed; every random stream in the run derives from it.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(backend: Backend, queries: QueryMode, attack: Attack, seed: u64) -> Self {
        Self {
            backend,
            queries,
            attack,
            pire: PireSettings::default(),
            transform: Transform::None,
            leak: None,
            network: NetworkSettings::default(),
            bovw: BovwSettings::default(),
            kri: KriSettings::default(),
            gaussian: GaussianSettings::default(),
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.leak.is_some() && !self.attack.is_pire() {
            return Err(Error::Config("leak experiments need a pire attack".into()));
        }
        if self.attack.is_pire() || self.leak.is_some() {
            self.pire.to_config(0, FinalizeMode::Refined).validate()?;
        }
        if let Some(l) = &self.leak {
            if l.replacement_iterations == 0 || l.query_iterations == 0 {
                return Err(Error::Config("leak iteration counts must be >= 1".into()));
            }
        }
        match self.transform {
            Transform::Resize { percent } if !(percent > 0.0 && percent <= 400.0) => {
                return Err(Error::Config(format!("resize percent {percent} outside (0, 400]")));
            }
            Transform::Crop { percent } if !(percent > 0.0 && percent <= 100.0) => {
                return Err(Error::Config(format!("crop percent {percent} outside (0, 100]")));
            }
            _ => {}
        }
        if self.bovw.k < 2 || self.bovw.he_threshold > 64 || self.bovw.max_training_descriptors < self.bovw.k {
            return Err(Error::Config("bovw needs k >= 2, he_threshold <= 64 and enough training descriptors".into()));
        }
        self.bovw.sift.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.kri.sift.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.kri.smooth_sigma >= 0.0) {
            return Err(Error::Config("smooth_sigma must be >= 0".into()));
        }
        if self.attack == Attack::Gaussian {
            let g = &self.gaussian;
            match (g.sigma, g.target_ssim) {
                (Some(s), _) if !(0.0..=0.5).contains(&s) => {
                    return Err(Error::Config(format!("gaussian sigma {s} outside [0, 0.5]")));
                }
                (None, None) => return Err(Error::Config("gaussian attack needs sigma or target_ssim".into())),
                (None, Some(t)) if !(t > 0.0 && t <= 1.0) || !(g.tolerance > 0.0) => {
                    return Err(Error::Config("target_ssim must lie in (0, 1] with a positive tolerance".into()));
                }
                _ => {}
            }
        }
        if self.network.working_side < self.network.spec.min_input_size() {
            return Err(Error::Config("working_side is smaller than the network accepts".into()));
        }
        if self.network.weights_header.is_some() != self.network.weights_blob.is_some() {
            return Err(Error::Config("weights_header and weights_blob go together".into()));
        }
        self.network.spec.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Iteration count reported in tables (0 for non-PIRE attacks).
    pub fn iterations(&self) -> usize {
        if self.attack.is_pire() {
            self.pire.iterations
        } else {
            0
        }
    }
}

/// Independent sub-seed for stream `stream` and item `index`.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finaliser over a mixed key
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::from_json(r#"{"backend":"neural","queries":"wi","attack":"none"}"#).unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("seed")));
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"backend":"bovw","queries":"bb","attack":"pire_refined","seed":3,
                "transform":{"kind":"resize","percent":150},"pire":{"iterations":200}}"#,
        )
        .unwrap();
        assert_eq!(cfg.pire.iterations, 200);
        assert_eq!(cfg.transform, Transform::Resize { percent: 150.0 });
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn leak_needs_pire() {
        let mut cfg = ExperimentConfig::new(Backend::Neural, QueryMode::Wi, Attack::Ls, 1);
        cfg.leak = Some(LeakSettings::default());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 1, 0));
        assert_eq!(derive_seed(9, 2, 3), derive_seed(9, 2, 3));
    }
}
