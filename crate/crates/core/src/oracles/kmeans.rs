use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct KmeansConfig {
    pub max_iter: usize,
    /// Independent k-means++ starts; the lowest final inertia wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 300,
            restarts: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KmeansFit {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after every assignment step of the winning start.
    pub inertia: Vec<f64>,
    /// True if any start had to re-seed an empty cluster.
    pub reseeded: bool,
}

impl KmeansFit {
    pub fn final_inertia(&self) -> f64 {
        *self.inertia.last().unwrap()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: the first center uniformly, each next one with
/// probability proportional to the squared distance to the nearest chosen center.
pub(crate) fn kmeans_pp(data: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.rows();
    let mut centers = vec![data.row(rng.random_range(0..n)).to_vec()];
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            best.iter()
                .position(|&d| {
                    acc += d;
                    acc > u
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(pick).to_vec();
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(data.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

fn assign(data: &Tensor, centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    (0..data.rows())
        .map(|i| {
            let x = data.row(i);
            centers
                .iter()
                .enumerate()
                .map(|(c, m)| (c, sq_dist(x, m)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
        })
        .unzip()
}

fn lloyd(data: &Tensor, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> KmeansFit {
    let (n, d) = (data.rows(), data.cols());
    let mut centers = kmeans_pp(data, k, rng);
    let (mut labels, mut dists) = assign(data, &centers);
    let mut inertia = vec![dists.iter().sum::<f64>()];
    let mut reseeded = false;
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let far = (0..n).fold(0, |a, b| if dists[b] > dists[a] { b } else { a });
                centers[c] = data.row(far).to_vec();
                dists[far] = 0.0;
                reseeded = true;
            }
        }
        let (new_labels, new_dists) = assign(data, &centers);
        let changed = new_labels != labels;
        labels = new_labels;
        dists = new_dists;
        inertia.push(dists.iter().sum());
        if !changed {
            break;
        }
    }
    KmeansFit {
        labels,
        centroids: centers,
        inertia,
        reseeded,
    }
}

/// Lloyd's algorithm from k-means++ seeds, best of `restarts` starts.
pub fn kmeans_fit(data: &Tensor, k: usize, config: &KmeansConfig) -> Result<KmeansFit> {
    let n = data.dims2().ok_or_else(|| Error::invalid("k-means needs an N x d matrix"))?.0;
    if k == 0 || n < k {
        return Err(Error::invalid(format!("k-means needs 1 <= K <= N, got K = {k}, N = {n}")));
    }
    if config.restarts == 0 {
        return Err(Error::invalid("restarts must be positive"));
    }
    let mut rng = stream(config.seed, Stream::Baseline);
    let mut best: Option<KmeansFit> = None;
    let mut any_reseed = false;
    for _ in 0..config.restarts {
        let fit = lloyd(data, k, config.max_iter, &mut rng);
        any_reseed |= fit.reseeded;
        if best.as_ref().is_none_or(|b| fit.final_inertia() < b.final_inertia()) {
            best = Some(fit);
        }
    }
    let mut best = best.unwrap();
    best.reseeded = any_reseed;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_points_are_recovered() {
        let pts = [[0.0, 0.0], [5.0, 5.0], [-3.0, 4.0]];
        let data: Vec<f64> = (0..30).flat_map(|i| pts[i % 3]).collect();
        let fit = kmeans_fit(&Tensor::matrix(30, 2, data).unwrap(), 3, &KmeansConfig::default()).unwrap();
        assert_eq!(fit.final_inertia(), 0.0);
        for p in pts {
            assert!(fit.centroids.iter().any(|c| c == &p.to_vec()));
        }
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = stream(3, Stream::Data);
        let data: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::matrix(200, 2, data).unwrap();
        for seed in 0..5 {
            let fit = kmeans_fit(&x, 5, &KmeansConfig { restarts: 1, seed, ..Default::default() }).unwrap();
            for w in fit.inertia.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_too_many_clusters() {
        assert!(kmeans_fit(&Tensor::zeros([2, 1]).unwrap(), 3, &KmeansConfig::default()).is_err());
    }
}
