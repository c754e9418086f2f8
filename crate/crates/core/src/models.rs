//! The three networks of the loop: a class-conditional generator, a
//! discriminator with one sigmoid unit per cluster plus a shared real/fake
//! unit, and the E-net that maps samples back to cluster posteriors.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{bind, Activation, DenseLayer, Mlp, Parameterized};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseDistribution {
    /// Uniform on `[-1, 1]`.
    #[default]
    Uniform,
    /// Standard normal.
    Gaussian,
}

impl NoiseDistribution {
    pub fn sample<R: Rng + ?Sized>(self, rows: usize, dim: usize, rng: &mut R) -> Tensor {
        let data = (0..rows * dim)
            .map(|_| match self {
                NoiseDistribution::Uniform => rng.random_range(-1.0..1.0),
                NoiseDistribution::Gaussian => StandardNormal.sample(rng),
            })
            .collect();
        Tensor::from_parts(vec![rows, dim], data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub enet_hidden: Vec<usize>,
    /// Width of the E-net layer placed right before its output head.
    pub bottleneck: Option<usize>,
    pub generator_output: Activation,
    pub noise: NoiseDistribution,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            noise_dim: 16,
            generator_hidden: vec![64, 64],
            discriminator_hidden: vec![64, 64],
            enet_hidden: vec![64, 64],
            bottleneck: None,
            generator_output: Activation::Tanh,
            noise: NoiseDistribution::Uniform,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 {
            return Err(Error::invalid("noise_dim must be positive"));
        }
        let all = [&self.generator_hidden, &self.discriminator_hidden, &self.enet_hidden];
        if all.iter().any(|h| h.is_empty() || h.contains(&0)) {
            return Err(Error::invalid("hidden widths must be nonempty and positive"));
        }
        if self.bottleneck == Some(0) {
            return Err(Error::invalid("bottleneck width must be positive"));
        }
        Ok(())
    }
}

/// Rows of `onehot(c)` for each class in `classes`.
pub fn one_hot(classes: &[usize], k: usize) -> Result<Tensor> {
    let mut data = vec![0.0; classes.len() * k];
    for (r, &c) in classes.iter().enumerate() {
        if c >= k {
            return Err(Error::invalid(format!("class {c} out of range for K = {k}")));
        }
        data[r * k + c] = 1.0;
    }
    Tensor::new([classes.len(), k], data)
}

fn widths(first: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(first).chain(hidden.iter().copied()).collect()
}

fn hidden() -> Activation {
    Activation::LeakyRelu(LEAKY_SLOPE)
}

/// `G(z, c)`: an MLP over the noise vector concatenated with `onehot(c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub noise_dim: usize,
    pub classes: usize,
    pub net: Mlp,
}

impl Generator {
    pub fn new(noise_dim: usize, classes: usize, net: Mlp) -> Result<Self> {
        if classes == 0 || net.in_features() != noise_dim + classes {
            return Err(Error::invalid(format!(
                "generator input width {} != noise {} + classes {}",
                net.in_features(),
                noise_dim,
                classes
            )));
        }
        Ok(Self {
            noise_dim,
            classes,
            net,
        })
    }

    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, classes: usize, data_dim: usize, rng: &mut R) -> Result<Self> {
        let mut w = widths(cfg.noise_dim + classes, &cfg.generator_hidden);
        w.push(data_dim);
        let net = Mlp::init(&w, hidden(), cfg.generator_output, rng)?;
        Self::new(cfg.noise_dim, classes, net)
    }

    pub fn data_dim(&self) -> usize {
        self.net.out_features()
    }

    pub fn forward(&self, g: &mut Graph, params: &[Var], z: Var, classes: &[usize]) -> Result<Var> {
        let (rows, dim) = (g.value(z).rows(), g.value(z).cols());
        if dim != self.noise_dim || rows != classes.len() {
            return Err(Error::ShapeMismatch {
                op: "generate",
                lhs: g.shape(z).to_vec(),
                rhs: vec![classes.len(), self.noise_dim],
            });
        }
        let u = g.constant(one_hot(classes, self.classes)?);
        let input = g.concat(&[z, u], 1)?;
        self.net.forward(g, params, input)
    }

    /// One sample for noise `z` and class `c`.
    pub fn generate(&self, z: &[f64], c: usize) -> Result<Vec<f64>> {
        let zt = Tensor::matrix(1, z.len(), z.to_vec())?;
        Ok(self.generate_batch(&zt, &[c])?.into_data())
    }

    pub fn generate_batch(&self, z: &Tensor, classes: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = bind(&mut g, self, false);
        let zv = g.constant(z.clone());
        let x = self.forward(&mut g, &p, zv, classes)?;
        Ok(g.value(x).clone())
    }
}

impl Parameterized for Generator {
    fn parameters(&self) -> Vec<&Tensor> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.parameters_mut()
    }
}

/// Per-sample discriminator output. Each probability is an independent
/// sigmoid; the class probabilities are not normalized jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorOutput {
    pub class_probs: Vec<f64>,
    pub class_logits: Vec<f64>,
    pub realfake_prob: f64,
    pub realfake_logit: f64,
}

/// Shared trunk followed by a linear head of `K + 1` logits: one per cluster,
/// then the real/fake unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub classes: usize,
    pub trunk: Mlp,
    pub head: DenseLayer,
}

impl Discriminator {
    pub fn new(classes: usize, trunk: Mlp, head: DenseLayer) -> Result<Self> {
        if head.out_features() != classes + 1 || head.in_features() != trunk.out_features() {
            return Err(Error::invalid("discriminator head must map the trunk to K + 1 units"));
        }
        Ok(Self { classes, trunk, head })
    }

    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, classes: usize, data_dim: usize, rng: &mut R) -> Result<Self> {
        let trunk = Mlp::init(&widths(data_dim, &cfg.discriminator_hidden), hidden(), hidden(), rng)?;
        let head = DenseLayer::init(trunk.out_features(), classes + 1, Activation::Identity, rng)?;
        Self::new(classes, trunk, head)
    }

    pub fn data_dim(&self) -> usize {
        self.trunk.in_features()
    }

    /// Pre-sigmoid outputs, `B × (K + 1)`.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let n = self.trunk.parameters().len();
        let h = self.trunk.forward(g, &params[..n], x)?;
        self.head.forward(g, &params[n..], h, self.trunk.layers.len())
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = bind(&mut g, self, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv)?;
        Ok(g.value(y).clone())
    }

    pub fn discriminate(&self, x: &[f64]) -> Result<DiscriminatorOutput> {
        if x.len() != self.data_dim() {
            return Err(Error::ShapeMismatch {
                op: "discriminate",
                lhs: vec![x.len()],
                rhs: vec![self.data_dim()],
            });
        }
        let logits = self.logits(&Tensor::matrix(1, x.len(), x.to_vec())?)?.into_data();
        let sigma = |l: f64| 1.0 / (1.0 + (-l).exp());
        let k = self.classes;
        Ok(DiscriminatorOutput {
            class_probs: logits[..k].iter().map(|&l| sigma(l)).collect(),
            class_logits: logits[..k].to_vec(),
            realfake_prob: sigma(logits[k]),
            realfake_logit: logits[k],
        })
    }
}

impl Parameterized for Discriminator {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.parameters();
        p.extend(self.head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.parameters_mut();
        p.extend(self.head.parameters_mut());
        p
    }
}

/// Approximate inverse of the generator: sample → posterior over clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct ENet {
    pub classes: usize,
    pub trunk: Mlp,
    pub bottleneck: Option<DenseLayer>,
    pub head: DenseLayer,
}

impl ENet {
    pub fn new(classes: usize, trunk: Mlp, bottleneck: Option<DenseLayer>, head: DenseLayer) -> Result<Self> {
        let feed = bottleneck.as_ref().map(|b| b.out_features()).unwrap_or(trunk.out_features());
        if let Some(b) = &bottleneck {
            if b.in_features() != trunk.out_features() {
                return Err(Error::invalid("bottleneck input must match the trunk output"));
            }
        }
        if head.in_features() != feed || head.out_features() != classes {
            return Err(Error::invalid("E-net head must map to K units"));
        }
        Ok(Self {
            classes,
            trunk,
            bottleneck,
            head,
        })
    }

    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, classes: usize, data_dim: usize, rng: &mut R) -> Result<Self> {
        let trunk = Mlp::init(&widths(data_dim, &cfg.enet_hidden), hidden(), hidden(), rng)?;
        let bottleneck = cfg
            .bottleneck
            .map(|k| DenseLayer::init(trunk.out_features(), k, hidden(), rng))
            .transpose()?;
        let feed = bottleneck.as_ref().map(|b| b.out_features()).unwrap_or(trunk.out_features());
        let head = DenseLayer::init(feed, classes, Activation::Identity, rng)?;
        Self::new(classes, trunk, bottleneck, head)
    }

    pub fn data_dim(&self) -> usize {
        self.trunk.in_features()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.bottleneck.as_ref().map(|b| b.out_features())
    }

    fn features(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<(Var, usize)> {
        let n = self.trunk.parameters().len();
        let mut h = self.trunk.forward(g, &params[..n], x)?;
        let mut used = n;
        if let Some(b) = &self.bottleneck {
            h = b.forward(g, &params[n..n + 2], h, self.trunk.layers.len())?;
            used += 2;
        }
        Ok((h, used))
    }

    /// Pre-softmax outputs, `B × K`.
    pub fn forward_logits(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let (h, used) = self.features(g, params, x)?;
        let index = self.trunk.layers.len() + usize::from(self.bottleneck.is_some());
        self.head.forward(g, &params[used..], h, index)
    }

    pub fn forward_embedding(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        if self.bottleneck.is_none() {
            return Err(Error::invalid("E-net has no bottleneck layer"));
        }
        Ok(self.features(g, params, x)?.0)
    }

    /// Posterior rows on the K-simplex, `B × K`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = bind(&mut g, self, false);
        let xv = g.constant(x.clone());
        let l = self.forward_logits(&mut g, &p, xv)?;
        let s = g.softmax(l)?;
        Ok(g.value(s).clone())
    }

    /// Bottleneck activations, `B × k`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = bind(&mut g, self, false);
        let xv = g.constant(x.clone());
        let e = self.forward_embedding(&mut g, &p, xv)?;
        Ok(g.value(e).clone())
    }
}

impl Parameterized for ENet {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.parameters();
        if let Some(b) = &self.bottleneck {
            p.extend(b.parameters());
        }
        p.extend(self.head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.parameters_mut();
        if let Some(b) = &mut self.bottleneck {
            p.extend(b.parameters_mut());
        }
        p.extend(self.head.parameters_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn cfg() -> ModelConfig {
        ModelConfig {
            noise_dim: 4,
            generator_hidden: vec![8],
            discriminator_hidden: vec![8],
            enet_hidden: vec![8],
            bottleneck: Some(2),
            ..ModelConfig::default()
        }
    }

    fn zero_all<M: Parameterized>(m: &mut M) {
        for p in m.parameters_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn generate_is_deterministic_and_class_sensitive() {
        let mut rng = stream(3, Stream::Init);
        let g = Generator::init(&cfg(), 3, 5, &mut rng).unwrap();
        let z = [0.1, -0.4, 0.9, 0.0];
        let a = g.generate(&z, 1).unwrap();
        assert_eq!(a, g.generate(&z, 1).unwrap());
        assert_ne!(a, g.generate(&z, 2).unwrap());
        assert!(g.generate(&z, 3).is_err());
    }

    #[test]
    fn zero_weight_generator_outputs_bias() {
        let mut g = Generator::init(&ModelConfig { generator_output: Activation::Identity, ..cfg() }, 2, 3, &mut stream(1, Stream::Init)).unwrap();
        zero_all(&mut g);
        let last = g.net.layers.last_mut().unwrap();
        last.bias = Tensor::vector(vec![0.5, -1.0, 2.0]).unwrap();
        for (z, c) in [([0.3, 0.3, -0.1, 0.8], 0), ([-1.0, 0.0, 0.5, 0.5], 1)] {
            assert_eq!(g.generate(&z, c).unwrap(), vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn generate_equals_direct_concatenation() {
        let g = Generator::init(&cfg(), 3, 5, &mut stream(5, Stream::Init)).unwrap();
        let z = [0.2, 0.1, -0.7, 0.3];
        let mut input = z.to_vec();
        input.extend([0.0, 0.0, 1.0]);
        let direct = g.net.infer(&Tensor::matrix(1, 7, input).unwrap()).unwrap();
        assert_eq!(g.generate(&z, 2).unwrap(), direct.into_data());
    }

    #[test]
    fn zero_discriminator_gives_one_half() {
        let mut d = Discriminator::init(&cfg(), 3, 5, &mut stream(1, Stream::Init)).unwrap();
        zero_all(&mut d);
        let out = d.discriminate(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(out.class_probs.iter().all(|&p| p == 0.5));
        assert_eq!(out.realfake_prob, 0.5);
        assert!(d.discriminate(&[1.0]).is_err());
    }

    #[test]
    fn discriminator_heads_are_independent_sigmoids() {
        let mut d = Discriminator::init(&cfg(), 3, 5, &mut stream(8, Stream::Init)).unwrap();
        let x = [0.3, -0.2, 0.9, 0.1, -0.5];
        let before = d.discriminate(&x).unwrap();
        let total: f64 = before.class_probs.iter().sum();
        assert!((total - 1.0).abs() > 1e-3);
        for (l, p) in before.class_logits.iter().zip(&before.class_probs) {
            assert!((1.0 / (1.0 + (-l).exp()) - p).abs() <= 1e-12);
        }
        // Scale head 0's weights: other heads are untouched.
        let cols = d.head.weight.cols();
        for v in &mut d.head.weight.data_mut()[..cols] {
            *v *= 3.0;
        }
        let after = d.discriminate(&x).unwrap();
        assert_eq!(before.class_probs[1..], after.class_probs[1..]);
        assert_eq!(before.realfake_prob, after.realfake_prob);
    }

    #[test]
    fn enet_outputs_simplex_and_embedding() {
        let mut e = ENet::init(&cfg(), 3, 5, &mut stream(2, Stream::Init)).unwrap();
        let x = Tensor::matrix(2, 5, vec![0.1, 0.2, 0.3, 0.4, 0.5, -1.0, 0.0, 1.0, 2.0, -2.0]).unwrap();
        let p = e.predict(&x).unwrap();
        for r in 0..2 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(e.embed(&x).unwrap().shape(), &[2, 2]);

        zero_all(&mut e.head);
        let p = e.predict(&x).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        let plain = ENet::init(&ModelConfig { bottleneck: None, ..cfg() }, 3, 5, &mut stream(2, Stream::Init)).unwrap();
        assert!(plain.embed(&x).is_err());
    }
}
