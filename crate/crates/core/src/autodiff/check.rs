use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Step of the central differences in [`check_gradients`].
pub const FD_STEP: f64 = 1e-6;

/// Analytic and numeric gradients of one function at one point.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    /// `‖a − n‖ / (‖a‖ + ‖n‖)` over all inputs jointly; zero when both vanish.
    pub relative_error: f64,
}

/// Fixed, uneven projection weights so a non-scalar output still exercises
/// every entry of its Jacobian.
fn projection(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 + 0.5 * (1.7 * i as f64 + 0.3).sin()).collect()
}

fn evaluate<F>(build: &F, inputs: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let n = g.value(out).numel();
    let loss = if g.value(out).rank() == 0 {
        out
    } else {
        let w = g.constant(Tensor::new(g.shape(out).to_vec(), projection(n))?);
        let p = g.mul(out, w)?;
        g.sum(p)?
    };
    Ok((g, vars, loss))
}

/// Compares reverse-mode gradients of `build` at `inputs` with central
/// differences. Non-scalar outputs are reduced by a fixed weighted sum.
pub fn check_gradients<F>(build: F, inputs: &[Tensor]) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, vars, loss) = evaluate(&build, inputs)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let at = |point: &[Tensor]| -> Result<f64> {
        let (g, _, loss) = evaluate(&build, point)?;
        let v = g.value(loss).data()[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::invalid("function is not finite near the check point"))
        }
    };
    let mut point = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[i].numel()];
        for (j, slot) in grad.iter_mut().enumerate() {
            let x = inputs[i].data()[j];
            point[i].data_mut()[j] = x + FD_STEP;
            let up = at(&point)?;
            point[i].data_mut()[j] = x - FD_STEP;
            let down = at(&point)?;
            point[i].data_mut()[j] = x;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        numeric.push(Tensor::new(inputs[i].shape().to_vec(), grad)?);
    }

    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (a, n) in analytic.iter().zip(&numeric) {
        for (x, y) in a.data().iter().zip(n.data()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nn += y * y;
        }
    }
    let denom = na.sqrt() + nn.sqrt();
    let relative_error = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
    Ok(GradCheck {
        analytic,
        numeric,
        relative_error,
    })
}
