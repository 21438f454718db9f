use super::{distance_sq, NetworkWeights};
use crate::imagecore::{fit_longer_side, BilinearMap, Image};
use crate::pire::Perturbation;
use crate::{Error, Result};

/// A feature map with an input gradient, over interleaved 3-channel buffers.
pub trait Differentiable: Sync {
    fn features(&self, input: &[f64], h: usize, w: usize) -> Result<Vec<f64>>;

    /// Returns `f(input)` and the gradient of `upstream(f) · f` with respect
    /// to the input, where `upstream` maps the features to the output seed.
    fn features_and_vjp(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        upstream: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl Differentiable for NetworkWeights {
    fn features(&self, input: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
        self.forward_raw(input, h, w)
    }

    fn features_and_vjp(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        upstream: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let tape = self.run(input, h, w)?;
        let seed = upstream(&tape.output);
        let grad = self.backward(&tape, &seed)?;
        Ok((tape.output, grad))
    }
}

/// Resamples every input so its longer side equals `side` before handing it
/// to the wrapped extractor. Gradients flow back through the resampling.
#[derive(Debug, Clone, Copy)]
pub struct WorkingSize<'a, E: ?Sized> {
    pub inner: &'a E,
    pub side: usize,
}

impl<'a, E: Differentiable + ?Sized> WorkingSize<'a, E> {
    pub fn new(inner: &'a E, side: usize) -> Self {
        Self { inner, side }
    }

    fn map(&self, h: usize, w: usize) -> BilinearMap {
        BilinearMap::new((h, w), fit_longer_side(h, w, self.side))
    }
}

impl<E: Differentiable + ?Sized> Differentiable for WorkingSize<'_, E> {
    fn features(&self, input: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
        let m = self.map(h, w);
        self.inner.features(&m.apply(input, 3), m.dst.0, m.dst.1)
    }

    fn features_and_vjp(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        upstream: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.map(h, w);
        let (f, g) = self.inner.features_and_vjp(&m.apply(input, 3), m.dst.0, m.dst.1, upstream)?;
        Ok((f, m.transpose(&g, 3)))
    }
}

/// `f(x) = x` flattened. Used to check the loss plumbing in closed form.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl Differentiable for IdentityExtractor {
    fn features(&self, input: &[f64], _h: usize, _w: usize) -> Result<Vec<f64>> {
        Ok(input.to_vec())
    }

    fn features_and_vjp(
        &self,
        input: &[f64],
        _h: usize,
        _w: usize,
        upstream: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let seed = upstream(input);
        Ok((input.to_vec(), seed))
    }
}

fn perturbed_input(x: &Image, v: &[f64]) -> Result<Vec<f64>> {
    if x.data().len() != v.len() {
        return Err(Error::mismatch(x.data().len(), v.len()));
    }
    Ok(x.data()
        .iter()
        .zip(v)
        .map(|(a, b)| (a + b).clamp(0.0, 1.0))
        .collect())
}

/// `|f(x) - f(clamp(x + v))|^2` given precomputed `f(x)`.
pub fn perturbation_loss<E: Differentiable + ?Sized>(
    ext: &E,
    x: &Image,
    fx: &[f64],
    v: &[f64],
) -> Result<f64> {
    let (h, w) = x.dims();
    let fxv = ext.features(&perturbed_input(x, v)?, h, w)?;
    distance_sq(fx, &fxv)
}

/// Loss and its exact gradient with respect to `v`. Coordinates where
/// `x + v` leaves `[0, 1]` get zero gradient.
pub fn loss_and_gradient<E: Differentiable + ?Sized>(
    ext: &E,
    x: &Image,
    fx: &[f64],
    v: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (h, w) = x.dims();
    let input = perturbed_input(x, v)?;
    // dL/dy = 2 (y - f(x))
    let upstream = |y: &[f64]| -> Vec<f64> {
        y.iter().zip(fx).map(|(a, b)| 2.0 * (a - b)).collect()
    };
    let (fxv, mut grad) = ext.features_and_vjp(&input, h, w, &upstream)?;
    let loss = distance_sq(fx, &fxv)?;
    for ((g, a), b) in grad.iter_mut().zip(x.data()).zip(v) {
        let s = a + b;
        if !(0.0..=1.0).contains(&s) {
            *g = 0.0;
        }
    }
    Ok((loss, grad))
}

/// Exact gradient of `|f(x) - f(x + v)|^2` with respect to `v`.
pub fn grad_distance_wrt_perturbation(
    weights: &NetworkWeights,
    x: &Image,
    v: &Perturbation,
) -> Result<Perturbation> {
    let (h, w) = x.dims();
    if v.dims() != (h, w) {
        return Err(Error::mismatch(format!("{h}x{w}"), format!("{:?}", v.dims())));
    }
    let fx = weights.forward_raw(x.data(), h, w)?;
    let (_, grad) = loss_and_gradient(weights, x, &fx, v.data())?;
    Perturbation::new(h, w, grad)
}

/// Central differences `(L(v + h e_i) - L(v - h e_i)) / 2h` at the given
/// flat coordinates.
pub fn finite_diff_gradient<E: Differentiable + ?Sized>(
    ext: &E,
    x: &Image,
    v: &[f64],
    step: f64,
    coords: &[usize],
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite difference step {step} must be > 0")));
    }
    let (h, w) = x.dims();
    let fx = ext.features(x.data(), h, w)?;
    let mut probe = v.to_vec();
    coords
        .iter()
        .map(|&i| {
            if i >= probe.len() {
                return Err(Error::invalid(format!("coordinate {i} out of range")));
            }
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = perturbation_loss(ext, x, &fx, &probe)?;
            probe[i] = orig - step;
            let minus = perturbation_loss(ext, x, &fx, &probe)?;
            probe[i] = orig;
            Ok((plus - minus) / (2.0 * step))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{init_network, Layer, NetworkSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mid_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, (0..h * w * 3).map(|_| rng.random_range(0.2..0.8)).collect()).unwrap()
    }

    #[test]
    fn identity_extractor_fd_is_two_v() {
        let x = mid_image(3, 3, 1);
        let v: Vec<f64> = (0..27).map(|i| (i as f64 - 13.0) * 0.005).collect();
        let coords: Vec<usize> = (0..27).collect();
        let fd = finite_diff_gradient(&IdentityExtractor, &x, &v, 1e-3, &coords).unwrap();
        let fx = x.data().to_vec();
        let (_, grad) = loss_and_gradient(&IdentityExtractor, &x, &fx, &v).unwrap();
        for i in 0..27 {
            assert!((fd[i] - 2.0 * v[i]).abs() < 1e-9);
            assert!((grad[i] - 2.0 * v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_step_rejected() {
        let x = mid_image(2, 2, 1);
        assert!(finite_diff_gradient(&IdentityExtractor, &x, &[0.0; 12], 0.0, &[0]).is_err());
    }

    #[test]
    fn fd_is_symmetric_in_probe_sign() {
        // swapping +h and -h negates numerator and denominator alike
        let x = mid_image(3, 3, 2);
        let v = vec![0.01; 27];
        let a = finite_diff_gradient(&IdentityExtractor, &x, &v, 1e-3, &[4]).unwrap()[0];
        let fx = x.data().to_vec();
        let mut p = v.clone();
        p[4] -= 1e-3;
        let minus = perturbation_loss(&IdentityExtractor, &x, &fx, &p).unwrap();
        p[4] += 2e-3;
        let plus = perturbation_loss(&IdentityExtractor, &x, &fx, &p).unwrap();
        assert!((a - (minus - plus) / (-2e-3)).abs() < 1e-12);
    }

    #[test]
    fn zero_perturbation_is_stationary() {
        let w = init_network(&NetworkSpec::default(), 1).unwrap();
        let x = mid_image(16, 16, 3);
        let v = Perturbation::zeros(16, 16);
        let g = grad_distance_wrt_perturbation(&w, &x, &v).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clamped_coordinates_get_zero_gradient() {
        let w = init_network(&NetworkSpec::default(), 1).unwrap();
        let x = mid_image(16, 16, 4);
        let mut data: Vec<f64> = (0..768).map(|i| ((i % 7) as f64 - 3.0) * 0.01).collect();
        data[10] = 0.95; // x <= 0.8 so x + v > 1
        data[20] = -0.95;
        let g = grad_distance_wrt_perturbation(&w, &x, &Perturbation::new(16, 16, data).unwrap()).unwrap();
        assert_eq!(g.data()[10], 0.0);
        assert_eq!(g.data()[20], 0.0);
        assert!(g.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn reverse_mode_matches_central_differences() {
        let spec = NetworkSpec {
            input_channels: 3,
            input_offset: 0.5,
            layers: vec![
                Layer::Conv { out_channels: 4, kernel: 3, stride: 2, padding: 1 },
                Layer::Relu,
                Layer::Conv { out_channels: 6, kernel: 3, stride: 1, padding: 1 },
                Layer::Relu,
                Layer::GemPool { p: 3.0 },
                Layer::L2Normalize,
            ],
            seed: 0,
        };
        let w = init_network(&spec, 11).unwrap();
        let x = mid_image(8, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v: Vec<f64> = (0..192).map(|_| rng.random_range(-0.05..0.05)).collect();
        let fx = w.forward_raw(x.data(), 8, 8).unwrap();
        let (_, grad) = loss_and_gradient(&w, &x, &fx, &v).unwrap();
        let coords: Vec<usize> = (0..192).step_by(7).collect();
        let fd = finite_diff_gradient(&w, &x, &v, 1e-4, &coords).unwrap();
        let good = coords
            .iter()
            .zip(&fd)
            .filter(|(&i, &f)| (grad[i] - f).abs() <= 1e-3 * grad[i].abs().max(f.abs()).max(1e-8))
            .count();
        assert!(good * 100 >= coords.len() * 95, "{good}/{}", coords.len());
    }
}
