//! Central-difference checks of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Network, Tensor};
use crate::{Error, Result};

/// Probe settings for [`check_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub eps: f64,
    pub tol: f64,
    /// Entries probed per parameter tensor; smaller tensors are probed in full.
    pub per_tensor: usize,
    /// Dropout mask seed; `None` runs in inference mode.
    pub dropout: Option<u64>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            tol: 1e-4,
            per_tensor: usize::MAX,
            dropout: None,
            seed: 99,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: usize,
    pub worst_rel: f64,
}

fn loss(net: &Network<f64>, xs: &[&Tensor<f64>], ys: &[usize], dropout: Option<u64>) -> Result<f64> {
    Ok(net.batch_gradients(xs, ys, dropout)?.loss)
}

/// Compares analytic gradients with central differences.
///
/// Probes whose ±eps perturbation flips a ReLU, pooling argmax or other
/// activation pattern are not differentiable over the interval and are
/// redrawn. Sampled tensors must reach their full quota of smooth probes;
/// exhaustively probed ones at least three quarters.
pub fn check_gradients(
    net: &mut Network<f64>,
    xs: &[Tensor<f64>],
    ys: &[usize],
    cfg: &GradCheck,
) -> Result<GradCheckReport> {
    let refs: Vec<&Tensor<f64>> = xs.iter().collect();
    let base_pattern = net.activation_patterns(&refs, cfg.dropout)?;
    let analytic: Vec<Vec<f64>> = net
        .batch_gradients(&refs, ys, cfg.dropout)?
        .grads
        .tensors()
        .iter()
        .map(|t| t.data().to_vec())
        .collect();
    let names = net.param_names();
    let mut pick = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        probes: 0,
        worst_rel: 0.0,
    };
    for (t, grad) in analytic.iter().enumerate() {
        let exhaustive = grad.len() <= cfg.per_tensor;
        let quota = if exhaustive { grad.len() } else { cfg.per_tensor };
        let candidates: Vec<usize> = if exhaustive {
            (0..grad.len()).collect()
        } else {
            (0..cfg.per_tensor * 20).map(|_| pick.random_range(0..grad.len())).collect()
        };
        let mut checked = 0;
        for i in candidates {
            if checked == quota {
                break;
            }
            let orig = net.tensors()[t].data()[i];
            net.tensors_mut()[t].data_mut()[i] = orig + cfg.eps;
            let up = loss(net, &refs, ys, cfg.dropout)?;
            let up_same = net.activation_patterns(&refs, cfg.dropout)? == base_pattern;
            net.tensors_mut()[t].data_mut()[i] = orig - cfg.eps;
            let down = loss(net, &refs, ys, cfg.dropout)?;
            let down_same = net.activation_patterns(&refs, cfg.dropout)? == base_pattern;
            net.tensors_mut()[t].data_mut()[i] = orig;
            if !(up_same && down_same) {
                continue;
            }
            checked += 1;
            let numeric = (up - down) / (2.0 * cfg.eps);
            let a = grad[i];
            let scale = a.abs().max(numeric.abs());
            let rel = if scale < 1e-7 { 0.0 } else { (a - numeric).abs() / scale };
            if rel >= cfg.tol {
                return Err(Error::Argument(format!(
                    "{}[{i}]: analytic {a:e} vs numeric {numeric:e} (rel {rel:e})",
                    names[t]
                )));
            }
            report.worst_rel = report.worst_rel.max(rel);
        }
        let floor = if exhaustive { quota * 3 / 4 } else { quota };
        if checked < floor {
            return Err(Error::Argument(format!(
                "{}: only {checked} of {quota} probes were smooth",
                names[t]
            )));
        }
        report.probes += checked;
    }
    Ok(report)
}

/// Multiplies every conv layer by `gain`, with biases on the same scale, and
/// undoes the accumulated factor at the first dense layer. Conv
/// pre-activations then sit far from zero relative to a single probe, so
/// fewer probes straddle a ReLU kink, while the logits keep their scale.
pub fn widen_margins(net: &mut Network<f64>, gain: f64, seed: u64) {
    let names = net.param_names();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scale = 1.0;
    let mut compensated = false;
    for (name, t) in names.iter().zip(net.tensors_mut()) {
        let is_bias = name.ends_with("bias");
        if name.starts_with("conv") {
            if is_bias {
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3) * scale);
            } else {
                scale *= gain;
                t.data_mut().iter_mut().for_each(|v| *v *= gain);
            }
        } else if !compensated {
            if is_bias {
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
                compensated = true;
            } else {
                t.data_mut().iter_mut().for_each(|v| *v /= scale);
            }
        }
    }
}

/// Uniform random inputs in [-1, 1) with labels cycling through the classes.
pub fn random_batch(input: [usize; 3], classes: usize, n: usize, seed: u64) -> (Vec<Tensor<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = input.iter().product();
    let xs = (0..n)
        .map(|_| Tensor::new(input.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape"))
        .collect();
    let ys = (0..n).map(|i| i % classes).collect();
    (xs, ys)
}
