//! The three training objectives, written against pre-activation outputs.
//!
//! Every graph-level function returns a scalar node to minimize. The
//! `*_value` functions evaluate the same formulas on plain probabilities.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Lower and upper clamp on probabilities entering a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Logits entering `exp` in the generator loss are capped here.
pub const LOGIT_CAP: f64 = 30.0;
/// Tolerance on soft-assignment rows passed to the discriminator loss.
pub const W_ROW_TOLERANCE: f64 = 1e-6;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn sigmoid(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

fn nonempty(g: &Graph, x: Var, what: &str) -> Result<(usize, usize)> {
    let t = g.value(x);
    let dims = t.dims2().ok_or_else(|| Error::InvalidShape {
        shape: t.shape().to_vec(),
        reason: format!("{what} must be a batch matrix"),
    })?;
    if dims.0 == 0 {
        return Err(Error::invalid(format!("{what}: empty batch")));
    }
    Ok(dims)
}

/// `log clamp(σ(±l))`, elementwise.
fn log_sigmoid(g: &mut Graph, l: Var, negate: bool) -> Result<Var> {
    let l = if negate { g.scale(l, -1.0)? } else { l };
    let p = g.sigmoid(l)?;
    let p = g.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
    g.log(p)
}

/// `−½ · mean_b exp(l_{b,c_b})` where `l` are discriminator logits on
/// `G(z, c)` and `c_b` the conditioning class of row `b`. Extra columns past
/// the class heads are ignored.
pub fn generator_loss(g: &mut Graph, fake_logits: Var, classes: &[usize]) -> Result<Var> {
    nonempty(g, fake_logits, "generator loss")?;
    let l = g.gather(fake_logits, classes)?;
    let l = g.clamp(l, f64::NEG_INFINITY, LOGIT_CAP)?;
    let e = g.exp(l)?;
    let m = g.mean(e)?;
    g.scale(m, -0.5)
}

/// Negated weighted log-likelihood of the `K` class heads:
///
/// `−[ Σ_b Σ_i w_{b,i} log D_i(x_b) / B_r + Σ_b Σ_i log(1 − D_i(x̃_b)) / B_f ]`
///
/// Only the first `K = w.cols()` logit columns are read.
pub fn discriminator_loss(g: &mut Graph, real_logits: Var, w: &Tensor, fake_logits: Var) -> Result<Var> {
    let (br, cr) = nonempty(g, real_logits, "discriminator loss (real)")?;
    let (bf, cf) = nonempty(g, fake_logits, "discriminator loss (fake)")?;
    let (wn, k) = w.dims2().ok_or_else(|| Error::InvalidShape {
        shape: w.shape().to_vec(),
        reason: "w must be B x K".into(),
    })?;
    if wn != br || k > cr || k > cf {
        return Err(Error::ShapeMismatch {
            op: "discriminator_loss",
            lhs: g.shape(real_logits).to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    for b in 0..wn {
        let row = w.row(b);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > W_ROW_TOLERANCE || row.iter().any(|v| *v < -W_ROW_TOLERANCE) {
            return Err(Error::InvalidAssignment(format!("w row {b} is not on the simplex (sum {s})")));
        }
    }
    let real = if cr == k { real_logits } else { g.slice(real_logits, 1, 0, k)? };
    let fake = if cf == k { fake_logits } else { g.slice(fake_logits, 1, 0, k)? };

    let log_d = log_sigmoid(g, real, false)?;
    let wv = g.constant(w.clone());
    let weighted = g.mul(log_d, wv)?;
    let real_term = g.sum(weighted)?;
    let real_term = g.scale(real_term, 1.0 / br as f64)?;

    let log_1md = log_sigmoid(g, fake, true)?;
    let fake_term = g.sum(log_1md)?;
    let fake_term = g.scale(fake_term, 1.0 / bf as f64)?;

    let total = g.add(real_term, fake_term)?;
    g.scale(total, -1.0)
}

/// Binary cross entropy of the real/fake unit in column `column`:
/// `−mean log D(x) − mean log(1 − D(x̃))`.
pub fn realfake_loss(g: &mut Graph, real_logits: Var, fake_logits: Var, column: usize) -> Result<Var> {
    let (_, cr) = nonempty(g, real_logits, "real/fake loss (real)")?;
    let (_, cf) = nonempty(g, fake_logits, "real/fake loss (fake)")?;
    if column >= cr || column >= cf {
        return Err(Error::invalid(format!("real/fake column {column} out of range")));
    }
    let r = g.slice(real_logits, 1, column, column + 1)?;
    let f = g.slice(fake_logits, 1, column, column + 1)?;
    let lr = log_sigmoid(g, r, false)?;
    let lf = log_sigmoid(g, f, true)?;
    let mr = g.mean(lr)?;
    let mf = g.mean(lf)?;
    let s = g.add(mr, mf)?;
    g.scale(s, -1.0)
}

/// Mean cross entropy between `softmax(logits)` and `onehot(classes)`.
pub fn enet_loss(g: &mut Graph, logits: Var, classes: &[usize]) -> Result<Var> {
    nonempty(g, logits, "E-net loss")?;
    let ls = g.log_softmax(logits)?;
    let picked = g.gather(ls, classes)?;
    let m = g.mean(picked)?;
    g.scale(m, -1.0)
}

/// [`generator_loss`] on the already selected class logits.
pub fn generator_loss_value(class_logits: &[f64]) -> Result<f64> {
    if class_logits.is_empty() {
        return Err(Error::invalid("generator loss: empty batch"));
    }
    let s: f64 = class_logits.iter().map(|l| l.min(LOGIT_CAP).exp()).sum();
    Ok(-0.5 * s / class_logits.len() as f64)
}

/// [`discriminator_loss`] on class-head probabilities `B × K`.
pub fn discriminator_loss_value(real_probs: &Tensor, w: &Tensor, fake_probs: &Tensor) -> Result<f64> {
    if real_probs.shape() != w.shape() || fake_probs.rank() != 2 || fake_probs.cols() != w.cols() {
        return Err(Error::ShapeMismatch {
            op: "discriminator_loss",
            lhs: real_probs.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    if real_probs.rows() == 0 || fake_probs.rows() == 0 {
        return Err(Error::invalid("discriminator loss: empty batch"));
    }
    let real: f64 = real_probs
        .data()
        .iter()
        .zip(w.data())
        .map(|(&p, &wv)| wv * clamp_prob(p).ln())
        .sum();
    let fake: f64 = fake_probs.data().iter().map(|&p| clamp_prob(1.0 - p).ln()).sum();
    Ok(-(real / real_probs.rows() as f64 + fake / fake_probs.rows() as f64))
}

/// [`enet_loss`] on probability rows.
pub fn enet_loss_value(probs: &Tensor, classes: &[usize]) -> Result<f64> {
    let (n, k) = probs.dims2().ok_or_else(|| Error::invalid("E-net loss: probabilities must be B x K"))?;
    if n == 0 || n != classes.len() {
        return Err(Error::invalid("E-net loss: empty or mismatched batch"));
    }
    if let Some(c) = classes.iter().find(|&&c| c >= k) {
        return Err(Error::invalid(format!("class {c} out of range for K = {k}")));
    }
    let s: f64 = classes
        .iter()
        .enumerate()
        .map(|(b, &c)| -clamp_prob(probs.get2(b, c)).ln())
        .sum();
    Ok(s / n as f64)
}

/// Sigmoid of a logit table, for callers holding raw discriminator output.
pub fn probabilities(logits: &Tensor) -> Tensor {
    logits.map(sigmoid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(f: impl FnOnce(&mut Graph) -> Result<Var>) -> f64 {
        let mut g = Graph::new();
        let v = f(&mut g).unwrap();
        g.value(v).item().unwrap()
    }

    #[test]
    fn generator_loss_examples() {
        let at = |ls: Vec<f64>| {
            eval(|g| {
                let n = ls.len();
                let l = g.constant(Tensor::matrix(n, 1, ls).unwrap());
                generator_loss(g, l, &vec![0; n])
            })
        };
        assert_eq!(at(vec![0.0, 0.0]), -0.5);
        assert!((at(vec![1.0]) + 1.0f64.exp() / 2.0).abs() < 1e-15);
        assert!((at(vec![0.0, 2f64.ln()]) + 0.75).abs() < 1e-15);
        assert!((generator_loss_value(&[0.0, 2f64.ln()]).unwrap() + 0.75).abs() < 1e-15);
    }

    #[test]
    fn generator_loss_caps_large_logits() {
        let v = eval(|g| {
            let l = g.constant(Tensor::matrix(1, 1, vec![800.0]).unwrap());
            generator_loss(g, l, &[0])
        });
        assert_eq!(v, -0.5 * LOGIT_CAP.exp());
    }

    #[test]
    fn discriminator_loss_uniform_instance() {
        let v = eval(|g| {
            let r = g.constant(Tensor::zeros([1, 3]).unwrap());
            let f = g.constant(Tensor::zeros([1, 3]).unwrap());
            discriminator_loss(g, r, &Tensor::full([1, 2], 0.5).unwrap(), f)
        });
        assert!((v - 3.0 * 2f64.ln()).abs() < 1e-14);
        let p = Tensor::full([1, 2], 0.5).unwrap();
        let v2 = discriminator_loss_value(&p, &p, &p).unwrap();
        assert!((v2 - 3.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn discriminator_loss_vanishes_for_perfect_d() {
        let w = Tensor::full([1, 2], 0.5).unwrap();
        let mut prev = f64::INFINITY;
        for delta in [1e-2, 1e-4, 1e-6] {
            let real = Tensor::full([1, 2], 1.0 - delta).unwrap();
            let fake = Tensor::full([1, 2], delta).unwrap();
            let v = discriminator_loss_value(&real, &w, &fake).unwrap();
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn one_hot_w_masks_other_heads() {
        let w = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        let fake = Tensor::full([1, 2], 0.5).unwrap();
        let a = discriminator_loss_value(&Tensor::matrix(1, 2, vec![0.9, 0.3]).unwrap(), &w, &fake).unwrap();
        let b = discriminator_loss_value(&Tensor::matrix(1, 2, vec![0.1, 0.3]).unwrap(), &w, &fake).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn discriminator_loss_rejects_bad_w() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::zeros([1, 2]).unwrap());
        let f = g.constant(Tensor::zeros([1, 2]).unwrap());
        let bad = Tensor::matrix(1, 2, vec![0.7, 0.7]).unwrap();
        assert!(discriminator_loss(&mut g, r, &bad, f).is_err());
        let short = Tensor::full([2, 2], 0.5).unwrap();
        assert!(discriminator_loss(&mut g, r, &short, f).is_err());
    }

    #[test]
    fn enet_loss_examples() {
        let onehot = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(enet_loss_value(&onehot, &[0, 1]).unwrap() < 1e-11);
        let uniform = Tensor::full([1, 4], 0.25).unwrap();
        assert!((enet_loss_value(&uniform, &[2]).unwrap() - 4f64.ln()).abs() < 1e-15);
        let p = Tensor::matrix(1, 3, vec![0.7, 0.2, 0.1]).unwrap();
        assert!((enet_loss_value(&p, &[0]).unwrap() + 0.7f64.ln()).abs() < 1e-15);

        let graph_form = eval(|g| {
            let l = g.constant(Tensor::matrix(1, 3, vec![0.7f64.ln(), 0.2f64.ln(), 0.1f64.ln()]).unwrap());
            enet_loss(g, l, &[0])
        });
        assert!((graph_form + 0.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batches_rejected() {
        assert!(generator_loss_value(&[]).is_err());
        assert!(enet_loss_value(&Tensor::full([1, 2], 0.5).unwrap(), &[]).is_err());
    }
}
