use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_pp, sq_dist};
use crate::autodiff::Tensor;
use crate::emcore::SoftAssignment;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    #[default]
    Diagonal,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmConfig {
    pub covariance: CovarianceKind,
    pub max_iter: usize,
    /// Stop when the mean log-likelihood improves by less than this.
    pub tolerance: f64,
    /// Lower bound on every variance (diagonal) or eigenvalue (full).
    pub variance_floor: f64,
    /// Independent k-means++ starts; the highest final likelihood wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            covariance: CovarianceKind::Diagonal,
            max_iter: 200,
            tolerance: 1e-8,
            variance_floor: 1e-6,
            restarts: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Covariance>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    pub responsibilities: SoftAssignment,
    /// Mean log-likelihood per sample, one entry per E-step of the winning start.
    pub log_likelihood: Vec<f64>,
    /// True if the variance floor was applied anywhere.
    pub floored: bool,
}

/// Per-component log density evaluator.
enum Component {
    Diagonal { mean: Vec<f64>, var: Vec<f64>, log_norm: f64 },
    Full { mean: DVector<f64>, chol_l: DMatrix<f64>, log_norm: f64 },
}

impl Component {
    fn new(mean: &[f64], cov: &Covariance) -> Result<Self> {
        let d = mean.len() as f64;
        match cov {
            Covariance::Diagonal(v) => {
                let log_det: f64 = v.iter().map(|s| s.ln()).sum();
                Ok(Component::Diagonal {
                    mean: mean.to_vec(),
                    var: v.clone(),
                    log_norm: -0.5 * (d * (2.0 * PI).ln() + log_det),
                })
            }
            Covariance::Full(m) => {
                let chol = m
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::invalid("covariance is not positive definite"))?;
                let l = chol.l();
                let log_det = 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
                Ok(Component::Full {
                    mean: DVector::from_column_slice(mean),
                    chol_l: l,
                    log_norm: -0.5 * (d * (2.0 * PI).ln() + log_det),
                })
            }
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            Component::Diagonal { mean, var, log_norm } => {
                let m: f64 = x.iter().zip(mean).zip(var).map(|((a, b), v)| (a - b) * (a - b) / v).sum();
                log_norm - 0.5 * m
            }
            Component::Full { mean, chol_l, log_norm } => {
                let diff = DVector::from_column_slice(x) - mean;
                let y = chol_l.solve_lower_triangular(&diff).expect("nonsingular factor");
                log_norm - 0.5 * y.norm_squared()
            }
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    /// Responsibilities (`N × K`, row-major) and mean log-likelihood.
    pub fn e_step(&self, data: &Tensor) -> Result<(Vec<f64>, f64)> {
        let comps: Vec<Component> = self
            .means
            .iter()
            .zip(&self.covariances)
            .map(|(m, c)| Component::new(m, c))
            .collect::<Result<_>>()?;
        let logw: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let (n, k) = (data.rows(), self.weights.len());
        let mut resp = Vec::with_capacity(n * k);
        let mut ll = 0.0;
        let mut joint = vec![0.0; k];
        for i in 0..n {
            let x = data.row(i);
            for c in 0..k {
                joint[c] = logw[c] + comps[c].log_density(x);
            }
            let lse = log_sum_exp(&joint);
            ll += lse;
            resp.extend(joint.iter().map(|j| (j - lse).exp()));
        }
        Ok((resp, ll / n as f64))
    }

    /// Posterior rows for `data`.
    pub fn predict(&self, data: &Tensor) -> Result<SoftAssignment> {
        let (resp, _) = self.e_step(data)?;
        SoftAssignment::new(normalized(resp, data.rows(), self.weights.len())?)
    }
}

fn normalized(mut resp: Vec<f64>, n: usize, k: usize) -> Result<Tensor> {
    for row in resp.chunks_mut(k) {
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::new([n, k], resp)
}

/// Closed-form M-step; returns the model and whether the floor was applied.
fn m_step(data: &Tensor, resp: &[f64], k: usize, config: &GmmConfig) -> (GmmModel, bool) {
    let (n, d) = (data.rows(), data.cols());
    let floor = config.variance_floor;
    let mut floored = false;
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for c in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum::<f64>().max(1e-300);
        let mut mean = vec![0.0; d];
        for i in 0..n {
            let r = resp[i * k + c];
            for (m, x) in mean.iter_mut().zip(data.row(i)) {
                *m += r * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let cov = match config.covariance {
            CovarianceKind::Diagonal => {
                let mut var = vec![0.0; d];
                for i in 0..n {
                    let r = resp[i * k + c];
                    for ((v, x), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                        *v += r * (x - m) * (x - m);
                    }
                }
                for v in var.iter_mut() {
                    *v /= nk;
                    if *v < floor {
                        *v = floor;
                        floored = true;
                    }
                }
                Covariance::Diagonal(var)
            }
            CovarianceKind::Full => {
                let mut s = DMatrix::<f64>::zeros(d, d);
                for i in 0..n {
                    let r = resp[i * k + c];
                    let diff = DVector::from_iterator(d, data.row(i).iter().zip(&mean).map(|(x, m)| x - m));
                    s.ger(r, &diff, &diff, 1.0);
                }
                s /= nk;
                let eig = s.clone().symmetric_eigen();
                if eig.eigenvalues.iter().any(|&e| e < floor) {
                    floored = true;
                    let clamped = eig.eigenvalues.map(|e| e.max(floor));
                    s = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
                    s = (&s + s.transpose()) * 0.5;
                }
                Covariance::Full(s)
            }
        };
        means.push(mean);
        covs.push(cov);
        weights.push(nk / n as f64);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (
        GmmModel {
            means,
            covariances: covs,
            weights,
        },
        floored,
    )
}

fn fit_once(data: &Tensor, k: usize, config: &GmmConfig, rng: &mut ChaCha8Rng) -> Result<GmmFit> {
    let n = data.rows();
    let centers = kmeans_pp(data, k, rng);
    let mut resp = vec![0.0; n * k];
    for i in 0..n {
        let x = data.row(i);
        let c = (0..k).fold(0, |a, b| if sq_dist(x, &centers[b]) < sq_dist(x, &centers[a]) { b } else { a });
        resp[i * k + c] = 1.0;
    }
    let (mut model, mut floored) = m_step(data, &resp, k, config);
    let mut trace = Vec::new();
    for _ in 0..config.max_iter {
        let (r, ll) = model.e_step(data)?;
        let done = trace.last().is_some_and(|&prev: &f64| ll - prev < config.tolerance);
        trace.push(ll);
        resp = r;
        if done {
            break;
        }
        let (m, f) = m_step(data, &resp, k, config);
        model = m;
        floored |= f;
    }
    Ok(GmmFit {
        responsibilities: SoftAssignment::new(normalized(resp, n, k)?)?,
        model,
        log_likelihood: trace,
        floored,
    })
}

/// EM for a Gaussian mixture from k-means++ starts.
pub fn gmm_em_fit(data: &Tensor, k: usize, config: &GmmConfig) -> Result<GmmFit> {
    let n = data.dims2().ok_or_else(|| Error::invalid("GMM needs an N x d matrix"))?.0;
    if k == 0 || n <= k {
        return Err(Error::invalid(format!("GMM needs N > K, got N = {n}, K = {k}")));
    }
    if config.restarts == 0 || config.max_iter == 0 {
        return Err(Error::invalid("restarts and max_iter must be positive"));
    }
    let mut rng = stream(config.seed, Stream::Baseline);
    let mut best: Option<GmmFit> = None;
    for _ in 0..config.restarts {
        let fit = fit_once(data, k, config, &mut rng)?;
        let score = *fit.log_likelihood.last().unwrap();
        if best.as_ref().is_none_or(|b| score > *b.log_likelihood.last().unwrap()) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_component_is_sample_moments() {
        let mut rng = stream(1, Stream::Data);
        let data: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..2.0)).collect();
        let x = Tensor::matrix(100, 3, data).unwrap();
        for kind in [CovarianceKind::Diagonal, CovarianceKind::Full] {
            let fit = gmm_em_fit(&x, 1, &GmmConfig { covariance: kind, ..Default::default() }).unwrap();
            for j in 0..3 {
                let mean: f64 = (0..100).map(|i| x.get2(i, j)).sum::<f64>() / 100.0;
                assert!((fit.model.means[0][j] - mean).abs() < 1e-12);
                let var: f64 = (0..100).map(|i| (x.get2(i, j) - mean).powi(2)).sum::<f64>() / 100.0;
                let got = match &fit.model.covariances[0] {
                    Covariance::Diagonal(v) => v[j],
                    Covariance::Full(m) => m[(j, j)],
                };
                assert!((got - var).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separated_blobs_and_monotone_trace() {
        let mut rng = stream(2, Stream::Data);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let truth: Vec<usize> = (0..400).map(|i| i % 2).collect();
        let data: Vec<f64> = truth
            .iter()
            .flat_map(|&c| {
                let off = if c == 0 { -3.0 } else { 3.0 };
                [off + noise.sample(&mut rng), noise.sample(&mut rng)]
            })
            .collect();
        let x = Tensor::matrix(400, 2, data).unwrap();
        for kind in [CovarianceKind::Diagonal, CovarianceKind::Full] {
            let fit = gmm_em_fit(&x, 2, &GmmConfig { covariance: kind, ..Default::default() }).unwrap();
            let err = crate::eval::clustering_error(&fit.responsibilities.hard_labels(), &truth, 2).unwrap().error;
            assert!(err <= 0.02);
            for w in fit.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-9);
            }
        }
    }

    #[test]
    fn collapse_is_floored() {
        let x = Tensor::matrix(6, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let fit = gmm_em_fit(&x, 2, &GmmConfig::default()).unwrap();
        assert!(fit.floored);
    }
}
