//! The training loss: softmax cross-entropy over n+1 classes summed over
//! the batch, plus a center term (lambda/2) * sum ||x_i - c_{y_i}||^2 taken
//! over landmark samples only. Gradients are exact for this expression,
//! including the path through the batch-statistics normalization; centers
//! are treated as constants here (their update is a separate rule).

use crate::error::{Error, Result};
use crate::train::math::Mat;
use crate::train::net::{Centers, LinearGrad, Network};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    /// Sum of per-sample cross-entropy.
    pub cross_entropy: f64,
    /// Sum of ||x_i - c_{y_i}||^2 over landmark samples (before lambda/2).
    pub center_sum: f64,
    /// cross_entropy + (lambda/2) * center_sum.
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub trunk: Vec<LinearGrad>,
    pub embed: LinearGrad,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub classifier: LinearGrad,
    /// dL/dx_i for the post-batch-norm embeddings, one row per sample.
    pub d_embeddings: Mat,
}

impl Gradients {
    /// Flat gradient vector aligned with `Network::params_flat`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.trunk {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out.extend_from_slice(&self.embed.w);
        out.extend_from_slice(&self.embed.b);
        out.extend_from_slice(&self.bn_gamma);
        out.extend_from_slice(&self.bn_beta);
        out.extend_from_slice(&self.classifier.w);
        out.extend_from_slice(&self.classifier.b);
        out
    }
}

/// Runs a train-mode forward pass and computes the loss together with exact
/// gradients for every network parameter and for the embeddings. The third
/// return value holds the batch embeddings x_i, which the center update
/// consumes.
pub fn loss_and_gradients(
    net: &mut Network,
    centers: &Centers,
    batch: &Mat,
    labels: &[u32],
    lambda: f64,
) -> Result<(LossParts, Gradients, Mat)> {
    let n_outputs = net.n_outputs();
    let n_landmark = n_outputs - 1;
    if labels.len() != batch.rows {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            batch.rows
        )));
    }
    if centers.n_classes != n_landmark || centers.dim != net.embedding_dim() {
        return Err(Error::Shape(format!(
            "centers are {}x{}, network wants {}x{}",
            centers.n_classes,
            centers.dim,
            n_landmark,
            net.embedding_dim()
        )));
    }
    for &label in labels {
        if label < 1 || label as usize > n_outputs {
            return Err(Error::Validation(format!(
                "label {label} out of range [1, {n_outputs}]"
            )));
        }
    }

    let trace = net.train_trace(batch)?;
    let b = batch.rows;
    let d = net.embedding_dim();

    // Cross-entropy term and its gradient w.r.t. logits.
    let mut cross_entropy = 0.0;
    let mut d_logits = Mat::zeros(b, n_outputs);
    for r in 0..b {
        let row = trace.logits.row(r);
        let target = (labels[r] - 1) as usize;
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        cross_entropy += lse - row[target];
        let drow = d_logits.row_mut(r);
        for (j, v) in row.iter().enumerate() {
            drow[j] = (v - max).exp() / sum_exp;
        }
        drow[target] -= 1.0;
    }

    // Center term. Gradient flows into the embeddings; centers are constant.
    let mut center_sum = 0.0;
    let mut d_embeddings = Mat::zeros(b, d);
    for r in 0..b {
        let label = labels[r] as usize;
        if label > n_landmark {
            continue;
        }
        let c = centers.center(label - 1);
        let x = trace.embeddings.row(r);
        let dst = d_embeddings.row_mut(r);
        for j in 0..d {
            let diff = x[j] - c[j];
            center_sum += diff * diff;
            dst[j] = lambda * diff;
        }
    }

    // Classifier backward; its input gradient joins the center-term path.
    let (classifier_grad, d_from_classifier) = net.classifier.backward(&trace.embeddings, &d_logits);
    for (dst, src) in d_embeddings.data.iter_mut().zip(&d_from_classifier.data) {
        *dst += src;
    }

    // Batch-norm backward through the batch statistics.
    let mut bn_gamma = vec![0.0; d];
    let mut bn_beta = vec![0.0; d];
    let mut d_embed_pre = Mat::zeros(b, d);
    let bf = b as f64;
    for j in 0..d {
        let inv_std = trace.bn_inv_std[j];
        let gamma = net.bn.gamma[j];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xc = 0.0; // sum of dxhat * (e - mean)
        for r in 0..b {
            let dy = d_embeddings.at(r, j);
            bn_gamma[j] += dy * trace.bn_xhat.at(r, j);
            bn_beta[j] += dy;
            let dxhat = dy * gamma;
            sum_dxhat += dxhat;
            sum_dxhat_xc += dxhat * (trace.embed_pre.at(r, j) - trace.bn_mean[j]);
        }
        let d_var = sum_dxhat_xc * (-0.5) * inv_std.powi(3);
        // The second mean term vanishes analytically (sum of centered values
        // is zero) but is kept so the gradient is exact for the computed
        // statistics.
        let mut sum_centered = 0.0;
        for r in 0..b {
            sum_centered += trace.embed_pre.at(r, j) - trace.bn_mean[j];
        }
        let d_mean = -inv_std * sum_dxhat + d_var * (-2.0 / bf) * sum_centered;
        for r in 0..b {
            let dy = d_embeddings.at(r, j);
            let dxhat = dy * gamma;
            let centered = trace.embed_pre.at(r, j) - trace.bn_mean[j];
            d_embed_pre.row_mut(r)[j] =
                dxhat * inv_std + d_var * 2.0 * centered / bf + d_mean / bf;
        }
    }

    // Embedding layer backward.
    let trunk_out = trace.trunk_post.last().unwrap_or(&trace.input);
    let (embed_grad, mut d_trunk_out) = net.embed.backward(trunk_out, &d_embed_pre);

    // Trunk backward, last layer to first.
    let mut trunk_grads: Vec<LinearGrad> = Vec::with_capacity(net.trunk.len());
    for (l, layer) in net.trunk.iter().enumerate().rev() {
        let mut dz = d_trunk_out;
        for r in 0..b {
            let zrow = trace.trunk_pre[l].row(r);
            let drow = dz.row_mut(r);
            for (dv, zv) in drow.iter_mut().zip(zrow) {
                *dv *= net.activation_derivative(*zv);
            }
        }
        let input = if l == 0 { &trace.input } else { &trace.trunk_post[l - 1] };
        let (grad, dx) = layer.backward(input, &dz);
        trunk_grads.push(grad);
        d_trunk_out = dx;
    }
    trunk_grads.reverse();

    let total = cross_entropy + 0.5 * lambda * center_sum;
    Ok((
        LossParts { cross_entropy, center_sum, total },
        Gradients {
            trunk: trunk_grads,
            embed: embed_grad,
            bn_gamma,
            bn_beta,
            classifier: classifier_grad,
            d_embeddings,
        },
        trace.embeddings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::net::{seeded_rng, Activation};

    #[test]
    fn zero_weight_symmetry_gives_ln2() {
        // m=1, n=1, d=2, classifier zero, embedding steered to c_1 via the
        // batch-norm shift: uniform softmax over 2 classes, center term 0.
        let mut rng = seeded_rng(0);
        let mut net = Network::init(2, &[], 2, 2, Activation::Relu, &mut rng);
        let zeros = vec![0.0; net.params_flat().len()];
        net.set_params_flat(&zeros).unwrap();
        // With one sample, batch stats normalize x-hat to zero, so the
        // embedding equals beta; point beta at c_1.
        net.bn.beta = vec![0.7, -0.3];
        let mut centers = Centers::zeros(1, 2);
        centers.center_mut(0).copy_from_slice(&[0.7, -0.3]);
        let batch = Mat::from_rows(&[vec![1.0, 2.0]]);
        let (parts, _, _) = loss_and_gradients(&mut net, &centers, &batch, &[1], 0.5).unwrap();
        assert!((parts.cross_entropy - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(parts.center_sum.abs() < 1e-20);
        assert!((parts.total - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn non_landmark_batch_has_zero_center_term() {
        let mut rng = seeded_rng(1);
        let mut net = Network::init(3, &[4], 2, 3, Activation::Relu, &mut rng);
        let mut centers = Centers::init(2, 2, &mut rng);
        for v in centers.data.iter_mut() {
            *v = 42.0; // arbitrary; must not matter
        }
        let batch = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]]);
        let (parts, _, _) = loss_and_gradients(&mut net, &centers, &batch, &[3, 3], 0.9).unwrap();
        assert_eq!(parts.center_sum, 0.0);
        assert_eq!(parts.total, parts.cross_entropy);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let mut rng = seeded_rng(2);
        let mut net = Network::init(3, &[4], 2, 3, Activation::Relu, &mut rng);
        let centers = Centers::zeros(2, 2);
        let batch = Mat::from_rows(&[vec![1.0, 2.0, 3.0]]);
        assert!(loss_and_gradients(&mut net, &centers, &batch, &[4], 0.1).is_err());
        assert!(loss_and_gradients(&mut net, &centers, &batch, &[0], 0.1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_small_case() {
        // Quick in-module check; the acceptance suite runs the full sweep.
        let mut rng = seeded_rng(3);
        let mut net = Network::init(3, &[4], 2, 4, Activation::Softplus, &mut rng);
        let mut centers = Centers::init(3, 2, &mut rng);
        for v in centers.data.iter_mut() {
            *v *= 50.0;
        }
        let batch = Mat::from_rows(&[
            vec![0.5, -1.0, 2.0],
            vec![1.5, 0.25, -0.75],
            vec![-0.5, 1.0, 0.5],
        ]);
        let labels = [1u32, 4, 2];
        let lambda = 0.3;
        let (_, grads, _) = loss_and_gradients(&mut net, &centers, &batch, &labels, lambda).unwrap();
        let analytic = grads.flat();
        let params = net.params_flat();
        let h = 1e-5;
        for (i, &p) in params.iter().enumerate() {
            let mut plus = params.clone();
            plus[i] = p + h;
            net.set_params_flat(&plus).unwrap();
            let (lp, _, _) = loss_and_gradients(&mut net, &centers, &batch, &labels, lambda).unwrap();
            let mut minus = params.clone();
            minus[i] = p - h;
            net.set_params_flat(&minus).unwrap();
            let (lm, _, _) = loss_and_gradients(&mut net, &centers, &batch, &labels, lambda).unwrap();
            let fd = (lp.total - lm.total) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-3);
            assert!(
                (analytic[i] - fd).abs() / denom <= 1e-5,
                "param {i}: analytic {} vs fd {}",
                analytic[i],
                fd
            );
        }
    }
}
