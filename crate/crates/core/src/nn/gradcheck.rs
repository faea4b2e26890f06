use rand::seq::index::sample;

use super::{regularized_objective, Gradients, Mode, Network, NnError, Tensor};
use crate::seed::rng_for;

/// Finite-difference check of analytic gradients of the regularized objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Parameters sampled per weight/bias tensor (all of them when the tensor is smaller).
    pub samples_per_tensor: usize,
    /// Gradients below this magnitude are compared absolutely against it.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            weight_decay: 0.005,
            samples_per_tensor: 24,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|numeric|, floor)` over the checked parameters.
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters skipped because a perturbation flipped some ReLU (non-differentiable point).
    pub skipped_kinks: usize,
}

fn objective(net: &Network, batch: &Tensor, targets: &Tensor, d: f64) -> Result<f64, NnError> {
    let pred = net.forward(batch, Mode::Eval)?;
    let (loss, _) = super::euclidean_loss(&pred, targets)?;
    Ok(regularized_objective(net, loss, d))
}

/// Analytic gradient of `C(θ)`: data-loss gradient plus `d · d_l · w` on weights.
pub fn objective_gradients(
    net: &Network,
    batch: &Tensor,
    targets: &Tensor,
    weight_decay: f64,
) -> Result<Gradients, NnError> {
    let (_, mut grads) = net.loss_and_gradients(batch, targets, Mode::Eval)?;
    for ((g, p), &mult) in grads
        .layers
        .iter_mut()
        .zip(net.params())
        .zip(net.decay_multipliers())
    {
        if let (Some(g), Some(p)) = (g, p) {
            for (gw, w) in g.weight.data_mut().iter_mut().zip(p.weight.data()) {
                *gw += weight_decay * mult * w;
            }
        }
    }
    Ok(grads)
}

fn param_slot(net: &mut Network, layer: usize, which: usize, idx: usize) -> &mut f64 {
    let p = net.params_mut()[layer].as_mut().unwrap();
    if which == 0 {
        &mut p.weight.data_mut()[idx]
    } else {
        &mut p.bias.data_mut()[idx]
    }
}

/// Compare `analytic` against central differences of the regularized objective.
pub fn grad_check_against(
    net: &Network,
    batch: &Tensor,
    targets: &Tensor,
    analytic: &Gradients,
    options: &GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    let eps = options.epsilon;
    let d = options.weight_decay;
    let base_pattern = net.relu_pattern(batch)?;
    let mut probe = net.clone();
    let mut rng = rng_for(options.seed, "gradcheck");
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for layer in 0..net.params().len() {
        let Some(g) = analytic.layers[layer].as_ref() else {
            continue;
        };
        for which in 0..2 {
            let (len, grad) = if which == 0 {
                (g.weight.len(), g.weight.data())
            } else {
                (g.bias.len(), g.bias.data())
            };
            let picks: Vec<usize> = if len <= options.samples_per_tensor {
                (0..len).collect()
            } else {
                sample(&mut rng, len, options.samples_per_tensor).into_vec()
            };
            for idx in picks {
                let original = param_slot(&mut probe, layer, which, idx).to_owned();
                *param_slot(&mut probe, layer, which, idx) = original + eps;
                let plus = objective(&probe, batch, targets, d)?;
                let kink_plus = probe.relu_pattern(batch)? != base_pattern;
                *param_slot(&mut probe, layer, which, idx) = original - eps;
                let minus = objective(&probe, batch, targets, d)?;
                let kink_minus = probe.relu_pattern(batch)? != base_pattern;
                *param_slot(&mut probe, layer, which, idx) = original;
                if kink_plus || kink_minus {
                    report.skipped_kinks += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * eps);
                let err = (grad[idx] - numeric).abs() / numeric.abs().max(options.floor);
                report.max_relative_error = report.max_relative_error.max(err);
                report.checked += 1;
            }
        }
    }
    Ok(report)
}

/// Check the network's own backpropagation against finite differences.
pub fn grad_check(
    net: &Network,
    batch: &Tensor,
    targets: &Tensor,
    options: &GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    let analytic = objective_gradients(net, batch, targets, options.weight_decay)?;
    grad_check_against(net, batch, targets, &analytic, options)
}
