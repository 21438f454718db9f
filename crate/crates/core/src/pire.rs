//! Iterative L∞-bounded perturbation search that pushes a query's neural
//! feature away from its original position, plus the two ways of turning the
//! search result into a savable image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imagecore::Image;
use crate::neuralnet::{loss_and_gradient, perturbation_loss, Differentiable};
use crate::{Error, Result};

/// Additive field with the same shape as an RGB image. Values are not
/// restricted to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Perturbation {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::mismatch(height * width * 3, data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `clamp(x + self, 0, 1)`.
    pub fn apply(&self, x: &Image) -> Result<Image> {
        if x.dims() != self.dims() {
            return Err(Error::mismatch(format!("{:?}", self.dims()), format!("{:?}", x.dims())));
        }
        Ok(x.map_clamped(|i, p| p + self.data[i]))
    }
}

/// Componentwise clip to `[-epsilon, epsilon]`.
pub fn clip_linf(v: &Perturbation, epsilon: f64) -> Perturbation {
    v.map(|x| x.clamp(-epsilon, epsilon))
}

/// Multiplies the perturbation by ten so it survives 8-bit rounding.
pub fn finalize_original(v: &Perturbation) -> Perturbation {
    v.map(|x| 10.0 * x)
}

/// Components below half a quantisation step.
pub const REFINED_THRESHOLD: f64 = 1.0 / 510.0;

/// Rounds every component above half a quantisation step up to the next whole
/// 8-bit step (sign preserved) and zeroes the rest.
pub fn finalize_refined(v: &Perturbation) -> Perturbation {
    v.map(refined_component)
}

#[inline]
fn refined_component(x: f64) -> f64 {
    if x.abs() <= REFINED_THRESHOLD {
        return 0.0;
    }
    // guard against k/255 * 255 landing a hair above k
    let steps = (x.abs() * 255.0 - 1e-9).ceil().max(1.0);
    x.signum() * steps / 255.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalizeMode {
    OriginalX10,
    Refined,
}

impl FinalizeMode {
    pub fn apply(self, v: &Perturbation) -> Perturbation {
        match self {
            FinalizeMode::OriginalX10 => finalize_original(v),
            FinalizeMode::Refined => finalize_refined(v),
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step in the ascent direction, in place.
pub fn adam_step(v: &mut [f64], grad: &[f64], state: &mut AdamState, params: &AdamParams) -> Result<()> {
    if v.len() != grad.len() || state.m.len() != v.len() || state.v.len() != v.len() {
        return Err(Error::mismatch(v.len(), grad.len()));
    }
    state.t += 1;
    let AdamParams {
        learning_rate,
        beta1,
        beta2,
        eps,
    } = *params;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..v.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        v[i] += learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PireConfig {
    /// Iteration limit T.
    pub iterations: usize,
    /// L∞ bound on the raw perturbation, in `[0, 1]` pixel units.
    pub epsilon: f64,
    #[serde(flatten)]
    pub adam: AdamParams,
    pub seed: u64,
    pub finalize: FinalizeMode,
}

impl Default for PireConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            epsilon: 8.0 / 255.0,
            adam: AdamParams::default(),
            seed: 0,
            finalize: FinalizeMode::Refined,
        }
    }
}

impl PireConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("PIRE iterations must be >= 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.1) {
            return Err(Error::Config(format!("epsilon {} outside (0, 0.1]", self.epsilon)));
        }
        let a = &self.adam;
        if !(a.learning_rate >= 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", a.learning_rate)));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PireTrace {
    /// Loss at the start of each iteration, before the update.
    pub losses: Vec<f64>,
    /// L∞ norm of the perturbation after each projection.
    pub linf: Vec<f64>,
    /// Loss at the final, unfinalised perturbation.
    pub final_loss: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct PireOutcome {
    pub adversarial: Image,
    /// Raw perturbation after the last projection, before finalisation.
    pub perturbation: Perturbation,
    pub trace: PireTrace,
}

impl PireOutcome {
    pub fn finalized(&self, mode: FinalizeMode) -> Perturbation {
        mode.apply(&self.perturbation)
    }
}

/// Runs the perturbation search on `x` against `extractor`.
///
/// `v_0` is uniform in `[-ε, ε]`; each iteration takes an Adam ascent step on
/// `|f(x) - f(clamp(x + v))|^2` and clips back to the ε-ball. The returned
/// image is `clamp(x + finalize(v_T))`.
pub fn pire<E: Differentiable + ?Sized>(x: &Image, extractor: &E, config: &PireConfig) -> Result<PireOutcome> {
    config.validate()?;
    let (h, w) = x.dims();
    let fx = extractor.features(x.data(), h, w)?;
    if fx.is_empty() {
        return Err(Error::mismatch("non-empty feature", 0));
    }
    let eps = config.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = x.data().len();
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-eps..=eps)).collect();
    let mut state = AdamState::new(n);
    let mut trace = PireTrace {
        losses: Vec::with_capacity(config.iterations),
        linf: Vec::with_capacity(config.iterations),
        ..Default::default()
    };
    for it in 0..config.iterations {
        let (loss, grad) = loss_and_gradient(extractor, x, &fx, &v)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        trace.losses.push(loss);
        adam_step(&mut v, &grad, &mut state, &config.adam)?;
        let mut linf = 0.0f64;
        for x in v.iter_mut() {
            *x = x.clamp(-eps, eps);
            linf = linf.max(x.abs());
        }
        trace.linf.push(linf);
    }
    trace.final_loss = perturbation_loss(extractor, x, &fx, &v)?;
    if !trace.final_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: config.iterations,
        });
    }
    trace.iterations = config.iterations;
    let perturbation = Perturbation::new(h, w, v)?;
    let adversarial = config.finalize.apply(&perturbation).apply(x)?;
    Ok(PireOutcome {
        adversarial,
        perturbation,
        trace,
    })
}
