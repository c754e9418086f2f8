//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use ganem::autodiff::{check_gradients, Graph, Tensor, Var};
use ganem::emcore::{discriminator_loss, enet_loss, generator_loss, realfake_loss};
use ganem::rng::{stream, Stream};
use ganem::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_INSTANCES: usize = 20;

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One randomly drawn instance: the function and the point to check it at.
pub struct Instance {
    pub build: Build,
    pub inputs: Vec<Tensor>,
}

pub struct Case {
    pub name: &'static str,
    pub draw: fn(&mut ChaCha8Rng) -> Instance,
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..=4), rng.random_range(1..=5))
}

fn fill(rng: &mut ChaCha8Rng, shape: &[usize], f: impl Fn(&mut ChaCha8Rng) -> f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| f(rng)).collect()).unwrap()
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    fill(rng, shape, |r| r.random_range(-2.0..2.0))
}

/// Values whose magnitude stays at least `margin` away from `edge`.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], edge: f64, margin: f64) -> Tensor {
    fill(rng, shape, |r| loop {
        let x: f64 = r.random_range(-2.0..2.0);
        if (x.abs() - edge).abs() >= margin {
            break x;
        }
    })
}

fn soft_rows(rng: &mut ChaCha8Rng, rows: usize, k: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|x| x / s));
    }
    Tensor::new([rows, k], data).unwrap()
}

fn classes(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

fn unary(rng: &mut ChaCha8Rng, x: Tensor, f: fn(&mut Graph, Var) -> Result<Var>) -> Instance {
    let _ = rng;
    Instance {
        build: Box::new(move |g, v| f(g, v[0])),
        inputs: vec![x],
    }
}

fn binary_same(rng: &mut ChaCha8Rng, f: fn(&mut Graph, Var, Var) -> Result<Var>) -> Instance {
    let (r, c) = dims(rng);
    let shape_b = match rng.random_range(0..3) {
        0 => vec![r, c],
        1 => vec![c],
        _ => vec![],
    };
    Instance {
        build: Box::new(move |g, v| f(g, v[0], v[1])),
        inputs: vec![normal(rng, &[r, c]), normal(rng, &shape_b)],
    }
}

/// Every differentiable operation of the graph and every training loss.
pub fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "matmul",
            draw: |rng| {
                let (m, k) = dims(rng);
                let n = rng.random_range(1..=4);
                Instance {
                    build: Box::new(|g, v| g.matmul(v[0], v[1])),
                    inputs: vec![normal(rng, &[m, k]), normal(rng, &[k, n])],
                }
            },
        },
        Case {
            name: "transpose",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = normal(rng, &[r, c]);
                unary(rng, x, |g, x| g.transpose(x))
            },
        },
        Case {
            name: "add",
            draw: |rng| binary_same(rng, |g, a, b| g.add(a, b)),
        },
        Case {
            name: "sub",
            draw: |rng| binary_same(rng, |g, a, b| g.sub(a, b)),
        },
        Case {
            name: "mul",
            draw: |rng| binary_same(rng, |g, a, b| g.mul(a, b)),
        },
        Case {
            name: "scale",
            draw: |rng| {
                let (r, c) = dims(rng);
                let s = rng.random_range(-3.0..3.0);
                Instance {
                    build: Box::new(move |g, v| g.scale(v[0], s)),
                    inputs: vec![normal(rng, &[r, c])],
                }
            },
        },
        Case {
            name: "add_scalar",
            draw: |rng| {
                let (r, c) = dims(rng);
                let s = rng.random_range(-3.0..3.0);
                Instance {
                    build: Box::new(move |g, v| g.add_scalar(v[0], s)),
                    inputs: vec![normal(rng, &[r, c])],
                }
            },
        },
        Case {
            name: "sum",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = normal(rng, &[r, c]);
                unary(rng, x, |g, x| g.sum(x))
            },
        },
        Case {
            name: "mean",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = normal(rng, &[r, c]);
                unary(rng, x, |g, x| g.mean(x))
            },
        },
        Case {
            name: "exp",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = normal(rng, &[r, c]);
                unary(rng, x, |g, x| g.exp(x))
            },
        },
        Case {
            name: "log",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = fill(rng, &[r, c], |r| r.random_range(0.2..3.0));
                unary(rng, x, |g, x| g.log(x))
            },
        },
        Case {
            name: "sigmoid",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = normal(rng, &[r, c]);
                unary(rng, x, |g, x| g.sigmoid(x))
            },
        },
        Case {
            name: "logit",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = fill(rng, &[r, c], |r| r.random_range(0.05..0.95));
                unary(rng, x, |g, x| g.logit(x))
            },
        },
        Case {
            name: "tanh",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = normal(rng, &[r, c]);
                unary(rng, x, |g, x| g.tanh(x))
            },
        },
        Case {
            name: "leaky_relu",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = away_from(rng, &[r, c], 0.0, 1e-3);
                unary(rng, x, |g, x| g.leaky_relu(x, 0.2))
            },
        },
        Case {
            name: "softmax",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = normal(rng, &[r, c]);
                unary(rng, x, |g, x| g.softmax(x))
            },
        },
        Case {
            name: "log_softmax",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = normal(rng, &[r, c]);
                unary(rng, x, |g, x| g.log_softmax(x))
            },
        },
        Case {
            name: "clamp",
            draw: |rng| {
                let (r, c) = dims(rng);
                let x = away_from(rng, &[r, c], 1.0, 1e-3);
                unary(rng, x, |g, x| g.clamp(x, -1.0, 1.0))
            },
        },
        Case {
            name: "concat",
            draw: |rng| {
                let (r, c) = dims(rng);
                let axis = rng.random_range(0..2);
                let extra = rng.random_range(1..=3);
                let second = if axis == 0 { [extra, c] } else { [r, extra] };
                Instance {
                    build: Box::new(move |g, v| g.concat(&[v[0], v[1]], axis)),
                    inputs: vec![normal(rng, &[r, c]), normal(rng, &second)],
                }
            },
        },
        Case {
            name: "slice",
            draw: |rng| {
                let (r, c) = dims(rng);
                let axis = rng.random_range(0..2);
                let len = if axis == 0 { r } else { c };
                let start = rng.random_range(0..len);
                let end = rng.random_range(start + 1..=len);
                Instance {
                    build: Box::new(move |g, v| g.slice(v[0], axis, start, end)),
                    inputs: vec![normal(rng, &[r, c])],
                }
            },
        },
        Case {
            name: "reshape",
            draw: |rng| {
                let (r, c) = dims(rng);
                Instance {
                    build: Box::new(move |g, v| g.reshape(v[0], &[c * r])),
                    inputs: vec![normal(rng, &[r, c])],
                }
            },
        },
        Case {
            name: "gather",
            draw: |rng| {
                let (r, c) = dims(rng);
                let idx = classes(rng, r, c);
                Instance {
                    build: Box::new(move |g, v| g.gather(v[0], &idx)),
                    inputs: vec![normal(rng, &[r, c])],
                }
            },
        },
        Case {
            name: "generator_loss",
            draw: |rng| {
                let (b, k) = (rng.random_range(1..=6), rng.random_range(1..=4));
                let c = classes(rng, b, k);
                Instance {
                    build: Box::new(move |g, v| generator_loss(g, v[0], &c)),
                    inputs: vec![normal(rng, &[b, k + 1])],
                }
            },
        },
        Case {
            name: "discriminator_loss",
            draw: |rng| {
                let (br, bf, k) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=4));
                let w = soft_rows(rng, br, k);
                Instance {
                    build: Box::new(move |g, v| discriminator_loss(g, v[0], &w, v[1])),
                    inputs: vec![normal(rng, &[br, k + 1]), normal(rng, &[bf, k + 1])],
                }
            },
        },
        Case {
            name: "realfake_loss",
            draw: |rng| {
                let (br, bf, k) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=4));
                Instance {
                    build: Box::new(move |g, v| realfake_loss(g, v[0], v[1], k)),
                    inputs: vec![normal(rng, &[br, k + 1]), normal(rng, &[bf, k + 1])],
                }
            },
        },
        Case {
            name: "enet_loss",
            draw: |rng| {
                let (b, k) = (rng.random_range(1..=6), rng.random_range(2..=5));
                let c = classes(rng, b, k);
                Instance {
                    build: Box::new(move |g, v| enet_loss(g, v[0], &c)),
                    inputs: vec![normal(rng, &[b, k])],
                }
            },
        },
    ]
}

/// Largest relative error over `instances` random draws of `case`.
pub fn worst_relative_error(case: &Case, instances: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, Stream::Data);
    (0..instances)
        .map(|_| {
            let inst = (case.draw)(&mut rng);
            check_gradients(&inst.build, &inst.inputs)
                .unwrap_or_else(|e| panic!("{}: {e}", case.name))
                .relative_error
        })
        .fold(0.0, f64::max)
}
