//! Central finite-difference verification of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{mse_and_grad, LayerSpec, Network, Workspace};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Which parameter entries a check visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// Up to `n` entries of every weight and bias tensor: the entry with the
    /// largest analytic gradient plus a seeded uniform draw.
    PerTensor { n: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max |g_a - g_n| / max(1, |g_a|, |g_n|) over the scored entries.
    pub max_error: f64,
    pub checked: usize,
    /// Visited entries whose +-epsilon interval flips a ReLU or moves a
    /// max-pool winner. The loss has a kink there, so they are not scored.
    pub kinks: usize,
    pub total: usize,
}

/// Worst relative error over every differentiable parameter entry.
pub fn grad_check(net: &Network, input: &Tensor, target: &Tensor, epsilon: f64) -> Result<f64> {
    Ok(grad_check_with(net, input, target, epsilon, Coverage::All)?.max_error)
}

pub fn grad_check_with(
    net: &Network,
    input: &Tensor,
    target: &Tensor,
    epsilon: f64,
    coverage: Coverage,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let spec = net.spec();
    input.expect_shape("grad_check input", &[spec.input_window, spec.input_channels])?;
    target.expect_shape("grad_check target", &[spec.output_dim])?;
    let (x, t) = (input.data(), target.data());
    let (_, analytic) = net.loss_and_grad(x, t, 1)?;

    let mut work = net.clone();
    let mut ws = Workspace::default();
    work.forward_train(x, 1, &mut ws)?;
    let base = switches(&work, &ws, 0);
    let mut max_error: f64 = 0.0;
    let mut checked = 0;
    let mut kinks = 0;
    for p in 0..analytic.len() {
        let layer = work.layer_of_param(p);
        for is_bias in [false, true] {
            let grad = if is_bias { analytic[p].bias.data() } else { analytic[p].weights.data() };
            for idx in entries(grad, coverage, p, is_bias) {
                let orig = param_entry(&mut work, p, is_bias, idx, None);
                param_entry(&mut work, p, is_bias, idx, Some(orig + epsilon));
                let up = partial_loss(&work, layer, x, t, &mut ws)?;
                let smooth_up = switches(&work, &ws, layer) == base[layer..];
                param_entry(&mut work, p, is_bias, idx, Some(orig - epsilon));
                let down = partial_loss(&work, layer, x, t, &mut ws)?;
                let smooth_down = switches(&work, &ws, layer) == base[layer..];
                param_entry(&mut work, p, is_bias, idx, Some(orig));
                checked += 1;
                if !(smooth_up && smooth_down) {
                    kinks += 1;
                    continue;
                }
                let numeric = (up - down) / (2.0 * epsilon);
                let ga = grad[idx];
                let err = (ga - numeric).abs() / 1f64.max(ga.abs()).max(numeric.abs());
                max_error = max_error.max(err);
            }
        }
        // restore cached activations for the layers that were perturbed
        work.forward_from(layer, x, 1, &mut ws)?;
    }
    Ok(GradCheckReport {
        max_error,
        checked,
        kinks,
        total: net.num_params(),
    })
}

/// Piecewise-linear decisions of layers `from..`: ReLU on/off bits and
/// max-pool winners, one entry per layer (empty for the others).
fn switches(net: &Network, ws: &Workspace, from: usize) -> Vec<Vec<usize>> {
    net.spec().layers[from..]
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let i = from + k;
            match l {
                LayerSpec::Relu => ws.activation(i).iter().map(|v| (*v > 0.0) as usize).collect(),
                LayerSpec::MaxPool { .. } => ws.pool_winners(i).to_vec(),
                _ => Vec::new(),
            }
        })
        .collect()
}

/// Reads one parameter entry, optionally overwriting it; returns the old value.
fn param_entry(net: &mut Network, p: usize, is_bias: bool, idx: usize, value: Option<f64>) -> f64 {
    let prm = &mut net.params_mut()[p];
    let data = if is_bias { prm.bias.data_mut() } else { prm.weights.data_mut() };
    let old = data[idx];
    if let Some(v) = value {
        data[idx] = v;
    }
    old
}

fn partial_loss(net: &Network, layer: usize, x: &[f64], t: &[f64], ws: &mut Workspace) -> Result<f64> {
    net.forward_from(layer, x, 1, ws)?;
    Ok(mse_and_grad(ws.output(), t).0)
}

fn entries(grad: &[f64], coverage: Coverage, p: usize, is_bias: bool) -> Vec<usize> {
    match coverage {
        Coverage::All => (0..grad.len()).collect(),
        Coverage::PerTensor { n, .. } if n >= grad.len() => (0..grad.len()).collect(),
        Coverage::PerTensor { n, seed } => {
            let tensor_seed = seed ^ ((p as u64) << 1 | is_bias as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut rng = ChaCha8Rng::seed_from_u64(tensor_seed);
            let largest = (0..grad.len())
                .max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs()))
                .unwrap_or(0);
            let mut picked: Vec<usize> = sample(&mut rng, grad.len(), n.saturating_sub(1)).into_vec();
            if !picked.contains(&largest) {
                picked.push(largest);
            }
            picked.sort_unstable();
            picked
        }
    }
}
