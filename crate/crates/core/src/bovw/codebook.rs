use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{par, Error, Result};

pub const DEFAULT_K: usize = 256;
pub const DEFAULT_MAX_ITERS: usize = 50;

/// `k` centroids stored row-major in `centroids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    pub centroids: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansReport {
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[inline]
pub(crate) fn dist_sq(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Codebook {
    pub fn centroid(&self, w: usize) -> &[f32] {
        &self.centroids[w * self.dim..(w + 1) * self.dim]
    }

    /// Nearest centroid (lowest index on ties) and its squared distance.
    pub fn assign(&self, x: &[f32]) -> (usize, f32) {
        let mut best = (0, f32::INFINITY);
        for w in 0..self.k {
            let d = dist_sq(x, self.centroid(w));
            if d < best.1 {
                best = (w, d);
            }
        }
        best
    }

    pub fn assign_all(&self, xs: &[Vec<f32>]) -> Vec<(usize, f32)> {
        par::map(xs, |x| self.assign(x))
    }

    fn validate(&self) -> Result<()> {
        if self.k < 2 || self.centroids.len() != self.k * self.dim {
            return Err(Error::invalid("malformed codebook"));
        }
        if self.centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("codebook has non-finite centroids"));
        }
        Ok(())
    }
}

/// Seeded k-means++ followed by Lloyd iterations.
pub fn train_codebook(
    descriptors: &[Vec<f32>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(Codebook, KMeansReport)> {
    if k < 2 {
        return Err(Error::invalid("codebook needs k >= 2"));
    }
    if descriptors.len() < k {
        return Err(Error::Data(format!(
            "{} descriptors is fewer than k = {k}",
            descriptors.len()
        )));
    }
    let dim = descriptors[0].len();
    if dim == 0 || descriptors.iter().any(|d| d.len() != dim) {
        return Err(Error::invalid("descriptors must share a non-zero dimension"));
    }
    if descriptors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite descriptor value"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cb = Codebook { k, dim, seed, centroids: kmeans_pp(descriptors, k, &mut rng) };

    let mut assignment: Vec<usize> = Vec::new();
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters.max(1) {
        iterations += 1;
        let assigned = cb.assign_all(descriptors);
        objective.push(assigned.iter().map(|&(_, d)| f64::from(d)).sum());
        let next: Vec<usize> = assigned.iter().map(|&(w, _)| w).collect();
        if next == assignment {
            converged = true;
            break;
        }
        assignment = next;
        update_centroids(&mut cb, descriptors, &assignment, &assigned);
    }
    cb.validate()?;
    Ok((cb, KMeansReport { objective, iterations, converged }))
}

fn kmeans_pp(xs: &[Vec<f32>], k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let dim = xs[0].len();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..xs.len());
    centroids.extend_from_slice(&xs[first]);
    let mut d2: Vec<f64> = par::map(xs, |x| f64::from(dist_sq(x, &xs[first])));
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = xs.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            // every point already coincides with a centroid
            rng.random_range(0..xs.len())
        };
        let c = xs[pick].clone();
        let upd: Vec<f64> = par::map(xs, |x| f64::from(dist_sq(x, &c)));
        for (d, u) in d2.iter_mut().zip(upd) {
            *d = d.min(u);
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn update_centroids(cb: &mut Codebook, xs: &[Vec<f32>], assignment: &[usize], assigned: &[(usize, f32)]) {
    let dim = cb.dim;
    let mut sums = vec![0.0f64; cb.k * dim];
    let mut counts = vec![0usize; cb.k];
    for (x, &w) in xs.iter().zip(assignment) {
        counts[w] += 1;
        for (s, v) in sums[w * dim..(w + 1) * dim].iter_mut().zip(x) {
            *s += f64::from(*v);
        }
    }
    // empty clusters take the points currently farthest from their centroid
    let mut far: Vec<usize> = (0..xs.len()).collect();
    far.sort_by(|&a, &b| assigned[b].1.total_cmp(&assigned[a].1).then(a.cmp(&b)));
    let mut far = far.into_iter();
    for w in 0..cb.k {
        let dst = &mut cb.centroids[w * dim..(w + 1) * dim];
        if counts[w] > 0 {
            for (c, s) in dst.iter_mut().zip(&sums[w * dim..(w + 1) * dim]) {
                *c = (*s / counts[w] as f64) as f32;
            }
        } else if let Some(i) = far.next() {
            dst.copy_from_slice(&xs[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clouds() -> Vec<Vec<f32>> {
        let mut v = Vec::new();
        for i in 0..6 {
            v.push(vec![i as f32 * 0.1, 0.0]);
            v.push(vec![10.0 + i as f32 * 0.1, 5.0]);
        }
        v
    }

    #[test]
    fn too_few_descriptors() {
        assert!(matches!(train_codebook(&clouds()[..3], 4, 0, 10), Err(Error::Data(_))));
    }

    #[test]
    fn objective_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f32>> = (0..300).map(|_| (0..8).map(|_| rng.random::<f32>()).collect()).collect();
        let (_, rep) = train_codebook(&xs, 12, 1, 50).unwrap();
        for w in rep.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{:?}", rep.objective);
        }
    }

    #[test]
    fn k_equals_n_has_zero_objective() {
        let xs = clouds();
        let (_, rep) = train_codebook(&xs, xs.len(), 5, 50).unwrap();
        assert_eq!(*rep.objective.last().unwrap(), 0.0);
    }

    #[test]
    fn deterministic() {
        let xs = clouds();
        assert_eq!(train_codebook(&xs, 3, 9, 50).unwrap().0, train_codebook(&xs, 3, 9, 50).unwrap().0);
    }
}
