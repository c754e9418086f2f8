use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{init_with, Graph, InitScheme, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::LeakyRelu(slope) => g.leaky_relu(x, slope),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Anything holding an ordered list of trainable tensors.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }
}

/// Registers every parameter of `model` on `g`, in `parameters()` order.
/// With `trainable == false` they enter as constants and receive no gradient.
pub fn bind<M: Parameterized + ?Sized>(g: &mut Graph, model: &M, trainable: bool) -> Vec<Var> {
    model
        .parameters()
        .into_iter()
        .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect()
}

/// Fully connected layer `act(x · Wᵀ + b)` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (out, _) = weight.dims2().ok_or_else(|| Error::InvalidShape {
            shape: weight.shape().to_vec(),
            reason: "dense weight must be out x in".into(),
        })?;
        if bias.shape() != [out] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Scaled-normal weights, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        let weight = init_with(&[outputs, inputs], InitScheme::ScaledNormal { fan_in: inputs }, rng)?;
        let bias = Tensor::zeros([outputs])?;
        Self::new(weight, bias, activation)
    }

    pub fn in_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.rows()
    }

    /// `params` holds the bound weight and bias, in that order.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var, index: usize) -> Result<Var> {
        let width = g.value(x).cols();
        if width != self.in_features() || g.value(x).rank() != 2 {
            return Err(Error::LayerWidth {
                layer: index,
                expected: self.in_features(),
                got: width,
            });
        }
        let wt = g.transpose(params[0])?;
        let h = g.matmul(x, wt)?;
        let h = g.add(h, params[1])?;
        self.activation.apply(g, h)
    }
}

impl Parameterized for DenseLayer {
    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_features() != pair[1].in_features() {
                return Err(Error::LayerWidth {
                    layer: i + 1,
                    expected: pair[1].in_features(),
                    got: pair[0].out_features(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// `widths = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer uses `output`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("need at least input and output widths"));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::init(widths[i], widths[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn in_features(&self) -> usize {
        self.layers[0].in_features()
    }

    pub fn out_features(&self) -> usize {
        self.layers[self.layers.len() - 1].out_features()
    }

    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, &params[2 * i..2 * i + 2], h, i)?;
        }
        Ok(h)
    }

    /// Forward pass on plain values, with parameters held constant.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = bind(&mut g, self, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &params, xv)?;
        Ok(g.value(y).clone())
    }
}

impl Parameterized for Mlp {
    fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn identity_layer_passes_input_through() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let layer = DenseLayer::new(
            Tensor::matrix(3, 3, eye).unwrap(),
            Tensor::zeros([3]).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        let mlp = Mlp::new(vec![layer]).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        assert_eq!(mlp.infer(&x).unwrap(), x);
    }

    #[test]
    fn zero_weight_layer_outputs_bias() {
        let layer = DenseLayer::new(
            Tensor::zeros([2, 4]).unwrap(),
            Tensor::vector(vec![0.3, -7.0]).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        let mlp = Mlp::new(vec![layer]).unwrap();
        let x = Tensor::matrix(1, 4, vec![9.0, 8.0, 7.0, 6.0]).unwrap();
        assert_eq!(mlp.infer(&x).unwrap().data(), &[0.3, -7.0]);
    }

    #[test]
    fn width_mismatch_names_layer() {
        let mut rng = stream(1, Stream::Init);
        let mlp = Mlp::init(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let x = Tensor::zeros([1, 4]).unwrap();
        assert!(matches!(
            mlp.infer(&x),
            Err(Error::LayerWidth { layer: 0, expected: 3, got: 4 })
        ));
    }

    #[test]
    fn inconsistent_stack_rejected() {
        let mut rng = stream(1, Stream::Init);
        let a = DenseLayer::init(3, 4, Activation::Tanh, &mut rng).unwrap();
        let b = DenseLayer::init(5, 2, Activation::Tanh, &mut rng).unwrap();
        assert!(Mlp::new(vec![a, b]).is_err());
    }

    #[test]
    fn two_layer_mlp_matches_hand_loop() {
        let mut rng = stream(11, Stream::Init);
        let mlp = Mlp::init(&[4, 6, 3], Activation::LeakyRelu(0.2), Activation::Tanh, &mut rng).unwrap();
        let x = crate::autodiff::init_with(&[5, 4], InitScheme::Uniform { low: -1.0, high: 1.0 }, &mut rng).unwrap();
        let got = mlp.infer(&x).unwrap();

        for r in 0..5 {
            let mut h: Vec<f64> = x.row(r).to_vec();
            for layer in &mlp.layers {
                let mut next = vec![0.0; layer.out_features()];
                for (o, slot) in next.iter_mut().enumerate() {
                    let mut acc = layer.bias.data()[o];
                    for (i, hv) in h.iter().enumerate() {
                        acc += layer.weight.get2(o, i) * hv;
                    }
                    *slot = match layer.activation {
                        Activation::LeakyRelu(s) => if acc > 0.0 { acc } else { s * acc },
                        Activation::Tanh => acc.tanh(),
                        _ => unreachable!(),
                    };
                }
                h = next;
            }
            for (a, b) in got.row(r).iter().zip(&h) {
                assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
            }
        }
    }
}
