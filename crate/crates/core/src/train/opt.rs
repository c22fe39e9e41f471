//! SGD with momentum, per-part learning rates, and the step learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::train::loss::Gradients;
use crate::train::net::Network;

/// Per-epoch learning-rate multipliers: 1.0 until the first milestone,
/// multiplied by the decay factor at each milestone. Milestones are given
/// as fractions of the total epoch count.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    multipliers: Vec<f64>,
}

impl LrSchedule {
    pub fn multiplier(&self, epoch: usize) -> f64 {
        self.multipliers[epoch]
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }
}

pub fn make_lr_schedule(epochs: usize, milestones: &[f64], decay_factor: f64) -> Result<LrSchedule> {
    for w in milestones.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Validation("lr_milestones must be strictly increasing".into()));
        }
    }
    if milestones.iter().any(|m| !(0.0 < *m && *m < 1.0)) {
        return Err(Error::Validation("lr_milestones must lie in (0, 1)".into()));
    }
    if decay_factor <= 0.0 {
        return Err(Error::Validation("lr_decay_factor must be > 0".into()));
    }
    let boundaries: Vec<usize> = milestones
        .iter()
        .map(|m| (m * epochs as f64).floor() as usize)
        .collect();
    let multipliers = (0..epochs)
        .map(|e| {
            let crossed = boundaries.iter().filter(|&&b| b <= e).count();
            decay_factor.powi(crossed as i32)
        })
        .collect();
    Ok(LrSchedule { multipliers })
}

/// Momentum buffers, one per parameter tensor, zero-initialized.
#[derive(Clone, Debug)]
pub struct SgdState {
    trunk: Vec<(Vec<f64>, Vec<f64>)>,
    embed: (Vec<f64>, Vec<f64>),
    bn_gamma: Vec<f64>,
    bn_beta: Vec<f64>,
    classifier: (Vec<f64>, Vec<f64>),
}

impl SgdState {
    pub fn new(net: &Network) -> Self {
        let zeros_like = |layer: &crate::train::net::Linear| {
            (vec![0.0; layer.w.len()], vec![0.0; layer.b.len()])
        };
        Self {
            trunk: net.trunk.iter().map(zeros_like).collect(),
            embed: zeros_like(&net.embed),
            bn_gamma: vec![0.0; net.bn.gamma.len()],
            bn_beta: vec![0.0; net.bn.beta.len()],
            classifier: zeros_like(&net.classifier),
        }
    }
}

fn apply(
    params: &mut [f64],
    grads: &[f64],
    buf: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, g), v) in params.iter_mut().zip(grads).zip(buf.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
}

/// One optimizer step. `lrs` are the effective learning rates for the
/// trunk, embedding and classifier parts (schedule already applied).
/// Batch-norm scale/shift belong to the embedding part and are exempt from
/// weight decay.
pub fn sgd_step(
    net: &mut Network,
    grads: &Gradients,
    state: &mut SgdState,
    lrs: [f64; 3],
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.trunk.len() != net.trunk.len() {
        return Err(Error::Shape("gradient/trunk layer count mismatch".into()));
    }
    let [lr_trunk, lr_embed, lr_cls] = lrs;
    for ((layer, grad), buf) in net.trunk.iter_mut().zip(&grads.trunk).zip(&mut state.trunk) {
        apply(&mut layer.w, &grad.w, &mut buf.0, lr_trunk, momentum, weight_decay);
        apply(&mut layer.b, &grad.b, &mut buf.1, lr_trunk, momentum, weight_decay);
    }
    apply(&mut net.embed.w, &grads.embed.w, &mut state.embed.0, lr_embed, momentum, weight_decay);
    apply(&mut net.embed.b, &grads.embed.b, &mut state.embed.1, lr_embed, momentum, weight_decay);
    apply(&mut net.bn.gamma, &grads.bn_gamma, &mut state.bn_gamma, lr_embed, momentum, 0.0);
    apply(&mut net.bn.beta, &grads.bn_beta, &mut state.bn_beta, lr_embed, momentum, 0.0);
    apply(
        &mut net.classifier.w,
        &grads.classifier.w,
        &mut state.classifier.0,
        lr_cls,
        momentum,
        weight_decay,
    );
    apply(
        &mut net.classifier.b,
        &grads.classifier.b,
        &mut state.classifier.1,
        lr_cls,
        momentum,
        weight_decay,
    );
    Ok(())
}
