//! The embedding network: an MLP trunk, a fully-connected embedding layer
//! with batch normalization, and a linear classifier over n+1 classes.
//!
//! Train-mode forward normalizes with batch statistics (and maintains
//! running statistics with momentum 0.1); eval mode uses the running
//! statistics and is read-only.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::train::math::Mat;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softplus,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else if z < -30.0 {
                    z.exp()
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully-connected layer, weights row-major `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Fan-in-scaled uniform init, U(-1/sqrt(in), 1/sqrt(in)).
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        debug_assert_eq!(x.cols, self.in_dim);
        let mut out = Mat::zeros(x.rows, self.out_dim);
        for r in 0..x.rows {
            let xi = x.row(r);
            let oi = out.row_mut(r);
            for o in 0..self.out_dim {
                let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.b[o];
                for (wv, xv) in wrow.iter().zip(xi) {
                    acc += wv * xv;
                }
                oi[o] = acc;
            }
        }
        out
    }

    /// Given input `x` and upstream gradient `dy`, returns parameter
    /// gradients and the gradient w.r.t. the input.
    pub fn backward(&self, x: &Mat, dy: &Mat) -> (LinearGrad, Mat) {
        let mut gw = vec![0.0; self.w.len()];
        let mut gb = vec![0.0; self.b.len()];
        let mut dx = Mat::zeros(x.rows, self.in_dim);
        for r in 0..x.rows {
            let xi = x.row(r);
            let dyi = dy.row(r);
            let dxi = dx.row_mut(r);
            for o in 0..self.out_dim {
                let g = dyi[o];
                gb[o] += g;
                let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let gwrow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
                for i in 0..self.in_dim {
                    gwrow[i] += g * xi[i];
                    dxi[i] += g * wrow[i];
                }
            }
        }
        (LinearGrad { w: gw, b: gb }, dx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn fresh(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// Cached quantities from a train-mode forward pass, consumed by backprop.
#[derive(Clone, Debug)]
pub struct TrainTrace {
    pub input: Mat,
    /// Pre-activations per trunk layer.
    pub trunk_pre: Vec<Mat>,
    /// Post-activations per trunk layer.
    pub trunk_post: Vec<Mat>,
    /// Embedding layer output before batch normalization.
    pub embed_pre: Mat,
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
    pub bn_inv_std: Vec<f64>,
    pub bn_xhat: Mat,
    /// Post-batch-norm embeddings x_i.
    pub embeddings: Mat,
    pub logits: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub d_in: usize,
    pub trunk: Vec<Linear>,
    pub embed: Linear,
    pub bn: BatchNorm,
    pub classifier: Linear,
    pub activation: Activation,
}

impl Network {
    /// Random init: trunk of the given widths, embedding layer to
    /// `embedding_dim`, classifier over `n_outputs` columns (landmark
    /// classes plus the non-landmark class).
    pub fn init(
        d_in: usize,
        trunk_widths: &[usize],
        embedding_dim: usize,
        n_outputs: usize,
        activation: Activation,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let mut trunk = Vec::with_capacity(trunk_widths.len());
        let mut prev = d_in;
        for &w in trunk_widths {
            trunk.push(Linear::init(prev, w, rng));
            prev = w;
        }
        let embed = Linear::init(prev, embedding_dim, rng);
        let bn = BatchNorm::fresh(embedding_dim);
        let classifier = Linear::init(embedding_dim, n_outputs, rng);
        Self { d_in, trunk, embed, bn, classifier, activation }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embed.out_dim
    }

    pub fn n_outputs(&self) -> usize {
        self.classifier.out_dim
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.rows == 0 {
            return Err(Error::Validation("empty batch".into()));
        }
        if x.cols != self.d_in {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                x.cols, self.d_in
            )));
        }
        Ok(())
    }

    fn trunk_forward(&self, x: &Mat) -> (Vec<Mat>, Vec<Mat>) {
        let mut pre = Vec::with_capacity(self.trunk.len());
        let mut post = Vec::with_capacity(self.trunk.len());
        let mut cur = x;
        for layer in &self.trunk {
            let z = layer.forward(cur);
            let mut h = z.clone();
            for v in h.data.iter_mut() {
                *v = self.activation.apply(*v);
            }
            pre.push(z);
            post.push(h);
            cur = post.last().unwrap();
        }
        (pre, post)
    }

    /// Train-mode forward: batch-statistics normalization, running stats
    /// updated in place. Requires batch size >= 2.
    pub fn forward_train(&mut self, x: &Mat) -> Result<TrainTrace> {
        if x.rows < 2 {
            return Err(Error::Validation(
                "train-mode forward needs batch size >= 2 for batch statistics".into(),
            ));
        }
        self.train_trace(x)
    }

    /// Forward with batch statistics, no minimum-batch check. Used by the
    /// loss, whose contract allows any nonempty batch.
    pub(crate) fn train_trace(&mut self, x: &Mat) -> Result<TrainTrace> {
        self.check_input(x)?;
        let (trunk_pre, trunk_post) = self.trunk_forward(x);
        let trunk_out = trunk_post.last().unwrap_or(x);
        let embed_pre = self.embed.forward(trunk_out);

        let b = embed_pre.rows as f64;
        let d = self.embed.out_dim;
        let mut mean = vec![0.0; d];
        for r in 0..embed_pre.rows {
            for (m, v) in mean.iter_mut().zip(embed_pre.row(r)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= b;
        }
        let mut var = vec![0.0; d];
        for r in 0..embed_pre.rows {
            for j in 0..d {
                let diff = embed_pre.at(r, j) - mean[j];
                var[j] += diff * diff;
            }
        }
        for v in var.iter_mut() {
            *v /= b;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let mut xhat = Mat::zeros(embed_pre.rows, d);
        let mut embeddings = Mat::zeros(embed_pre.rows, d);
        for r in 0..embed_pre.rows {
            for j in 0..d {
                let xh = (embed_pre.at(r, j) - mean[j]) * inv_std[j];
                xhat.row_mut(r)[j] = xh;
                embeddings.row_mut(r)[j] = self.bn.gamma[j] * xh + self.bn.beta[j];
            }
        }

        for j in 0..d {
            self.bn.running_mean[j] =
                (1.0 - BN_MOMENTUM) * self.bn.running_mean[j] + BN_MOMENTUM * mean[j];
            self.bn.running_var[j] =
                (1.0 - BN_MOMENTUM) * self.bn.running_var[j] + BN_MOMENTUM * var[j];
        }

        let logits = self.classifier.forward(&embeddings);
        Ok(TrainTrace {
            input: x.clone(),
            trunk_pre,
            trunk_post,
            embed_pre,
            bn_mean: mean,
            bn_var: var,
            bn_inv_std: inv_std,
            bn_xhat: xhat,
            embeddings,
            logits,
        })
    }

    /// Eval-mode forward using running statistics. Read-only, safe for
    /// concurrent callers on a frozen network.
    pub fn forward_eval(&self, x: &Mat) -> Result<(Mat, Mat)> {
        self.check_input(x)?;
        let (_, trunk_post) = self.trunk_forward(x);
        let trunk_out = trunk_post.last().unwrap_or(x);
        let embed_pre = self.embed.forward(trunk_out);
        let d = self.embed.out_dim;
        let mut embeddings = Mat::zeros(embed_pre.rows, d);
        for r in 0..embed_pre.rows {
            for j in 0..d {
                let xh = (embed_pre.at(r, j) - self.bn.running_mean[j])
                    / (self.bn.running_var[j] + BN_EPS).sqrt();
                embeddings.row_mut(r)[j] = self.bn.gamma[j] * xh + self.bn.beta[j];
            }
        }
        let logits = self.classifier.forward(&embeddings);
        Ok((embeddings, logits))
    }

    /// Eval-mode embeddings for a slice of feature vectors, converted back
    /// to the f32 storage type.
    pub fn embed_eval(&self, features: &[&crate::data::Embedding]) -> Result<Vec<crate::data::Embedding>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let x = Mat::from_embeddings(features);
        let (embeddings, _) = self.forward_eval(&x)?;
        Ok((0..embeddings.rows).map(|r| embeddings.row_embedding(r)).collect())
    }

    /// Backprop of the activation derivative, exposed for the loss module.
    pub(crate) fn activation_derivative(&self, z: f64) -> f64 {
        self.activation.derivative(z)
    }

    /// Flat parameter vector: trunk (w, b per layer), embedding (w, b),
    /// batch-norm (gamma, beta), classifier (w, b). Running statistics are
    /// not parameters and are excluded.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.trunk {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out.extend_from_slice(&self.embed.w);
        out.extend_from_slice(&self.embed.b);
        out.extend_from_slice(&self.bn.gamma);
        out.extend_from_slice(&self.bn.beta);
        out.extend_from_slice(&self.classifier.w);
        out.extend_from_slice(&self.classifier.b);
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        let mut pos = 0usize;
        let mut take = |dst: &mut [f64]| -> Result<()> {
            let end = pos + dst.len();
            if end > params.len() {
                return Err(Error::Shape("parameter vector too short".into()));
            }
            dst.copy_from_slice(&params[pos..end]);
            pos = end;
            Ok(())
        };
        for layer in &mut self.trunk {
            take(&mut layer.w)?;
            take(&mut layer.b)?;
        }
        take(&mut self.embed.w)?;
        take(&mut self.embed.b)?;
        take(&mut self.bn.gamma)?;
        take(&mut self.bn.beta)?;
        take(&mut self.classifier.w)?;
        take(&mut self.classifier.b)?;
        if pos != params.len() {
            return Err(Error::Shape("parameter vector too long".into()));
        }
        Ok(())
    }
}

/// Learnable per-class centers of the center-loss term. Landmark classes
/// only: class `n+1` has no center.
#[derive(Clone, Debug, PartialEq)]
pub struct Centers {
    pub n_classes: usize,
    pub dim: usize,
    /// n_classes * dim, row per class.
    pub data: Vec<f64>,
}

impl Centers {
    /// Unit Gaussian scaled by 0.01.
    pub fn init(n_classes: usize, dim: usize, rng: &mut ChaCha12Rng) -> Self {
        let data = (0..n_classes * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                0.01 * z
            })
            .collect();
        Self { n_classes, dim, data }
    }

    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self { n_classes, dim, data: vec![0.0; n_classes * dim] }
    }

    pub fn center(&self, class_index: usize) -> &[f64] {
        &self.data[class_index * self.dim..(class_index + 1) * self.dim]
    }

    pub fn center_mut(&mut self, class_index: usize) -> &mut [f64] {
        &mut self.data[class_index * self.dim..(class_index + 1) * self.dim]
    }

    /// Center update rule: for each landmark class j present in the batch,
    /// delta_j = sum_{y_i=j} (c_j - x_i) / (1 + count_j) and
    /// c_j <- c_j - center_lr * delta_j. Classes absent from the batch and
    /// the non-landmark class are untouched.
    pub fn update(&mut self, embeddings: &Mat, labels: &[u32], center_lr: f64) {
        debug_assert_eq!(embeddings.rows, labels.len());
        let mut counts = vec![0usize; self.n_classes];
        let mut sums = vec![0.0f64; self.n_classes * self.dim];
        for (r, &label) in labels.iter().enumerate() {
            if label as usize > self.n_classes {
                continue; // non-landmark
            }
            let j = (label - 1) as usize;
            counts[j] += 1;
            for (s, v) in sums[j * self.dim..(j + 1) * self.dim]
                .iter_mut()
                .zip(embeddings.row(r))
            {
                *s += v;
            }
        }
        let dim = self.dim;
        for j in 0..self.n_classes {
            if counts[j] == 0 {
                continue;
            }
            let denom = 1.0 + counts[j] as f64;
            let count = counts[j] as f64;
            let sum_row = &sums[j * dim..(j + 1) * dim];
            for (c, s) in self.center_mut(j).iter_mut().zip(sum_row) {
                let delta = (count * *c - s) / denom;
                *c -= center_lr * delta;
            }
        }
    }
}

/// Seeded generator used across the trainer.
pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
