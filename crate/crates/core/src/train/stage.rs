//! Stage training and the four-part curriculum.
//!
//! A stage runs epochs of sample -> forward -> loss/gradients -> SGD step ->
//! center update. The curriculum trains the first stage from random init,
//! then for each later stage keeps the trunk and embedding weights,
//! re-initializes the embedding batch norm, the classifier (resized to the
//! cumulative class count plus one) and the centers, and continues on the
//! union of the parts seen so far.

use rand_chacha::ChaCha12Rng;

use crate::data::{CurriculumParts, Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::kv::KvReader;
use crate::train::loss::loss_and_gradients;
use crate::train::math::Mat;
use crate::train::net::{seeded_rng, Activation, BatchNorm, Centers, Linear, Network};
use crate::train::opt::{make_lr_schedule, sgd_step, SgdState};
use crate::train::sampler::sample_epoch_batches;

/// Learning rates of the first curriculum stage (trunk, embedding,
/// classifier) and of every later stage.
pub const STAGE_ONE_ALPHAS: [f64; 3] = [0.001, 0.01, 0.01];
pub const LATER_STAGE_ALPHAS: [f64; 3] = [0.0001, 0.0001, 0.01];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    /// Center-loss weight.
    pub lambda: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Learning rates for trunk / embedding / classifier.
    pub alphas: [f64; 3],
    /// Center update rate.
    pub center_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub non_landmark_proportion: f64,
    pub lr_decay_factor: f64,
    /// Fractions of the epoch count at which the rate decays.
    pub lr_milestones: Vec<f64>,
    pub seed: u64,
    pub trunk_widths: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 5e-5,
            momentum: 0.9,
            weight_decay: 5e-3,
            alphas: STAGE_ONE_ALPHAS,
            center_lr: 0.5,
            epochs: 30,
            batch_size: 32,
            non_landmark_proportion: 0.4,
            lr_decay_factor: 0.1,
            lr_milestones: vec![0.4, 0.8],
            seed: 0,
            trunk_widths: vec![64, 64],
            embedding_dim: 32,
            activation: Activation::Relu,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.iter().any(|a| *a <= 0.0) || self.center_lr <= 0.0 {
            return Err(Error::Validation("learning rates must be > 0".into()));
        }
        if self.lambda < 0.0 || self.weight_decay < 0.0 || self.non_landmark_proportion < 0.0 {
            return Err(Error::Validation(
                "lambda, weight_decay and non_landmark_proportion must be >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Validation("batch_size must be >= 2".into()));
        }
        if self.embedding_dim < 1 {
            return Err(Error::Validation("embedding_dim must be >= 1".into()));
        }
        // Milestone bounds are checked when the schedule is built.
        make_lr_schedule(self.epochs.max(1), &self.lr_milestones, self.lr_decay_factor)?;
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut r = KvReader::from_text(text)?;
        let mut cfg = Self::default();
        if let Some(v) = r.parse_field("lambda")? {
            cfg.lambda = v;
        }
        if let Some(v) = r.parse_field("momentum")? {
            cfg.momentum = v;
        }
        if let Some(v) = r.parse_field("weight_decay")? {
            cfg.weight_decay = v;
        }
        if let Some(v) = r.parse_list::<f64>("alphas")? {
            if v.len() != 3 {
                return Err(Error::Config("alphas expects three values".into()));
            }
            cfg.alphas = [v[0], v[1], v[2]];
        }
        if let Some(v) = r.parse_field("center_lr")? {
            cfg.center_lr = v;
        }
        if let Some(v) = r.parse_field("epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = r.parse_field("batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = r.parse_field("non_landmark_proportion")? {
            cfg.non_landmark_proportion = v;
        }
        if let Some(v) = r.parse_field("lr_decay_factor")? {
            cfg.lr_decay_factor = v;
        }
        if let Some(v) = r.parse_list::<f64>("lr_milestones")? {
            cfg.lr_milestones = v;
        }
        if let Some(v) = r.parse_field("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = r.parse_list::<usize>("trunk_widths")? {
            cfg.trunk_widths = v;
        }
        if let Some(v) = r.parse_field("embedding_dim")? {
            cfg.embedding_dim = v;
        }
        if let Some(v) = r.take("activation") {
            cfg.activation = v.parse()?;
        }
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub cross_entropy: f64,
    pub center_sum: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub lr_multiplier: f64,
    pub steps: Vec<StepLoss>,
    pub cross_entropy: f64,
    pub center_sum: f64,
    pub total: f64,
    pub landmark_samples: usize,
    pub non_landmark_samples: usize,
}

#[derive(Clone, Debug)]
pub struct StageReport {
    pub stage: usize,
    pub n_classes: u32,
    pub alphas: [f64; 3],
    pub epochs: Vec<EpochStats>,
}

impl StageReport {
    pub fn final_total_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.total)
    }
}

/// Trains in place for `cfg.epochs` epochs with explicit learning rates and
/// an explicit rng (the curriculum threads one rng through all stages).
pub fn train_stage_with(
    net: &mut Network,
    centers: &mut Centers,
    data: &Dataset,
    cfg: &TrainingConfig,
    alphas: [f64; 3],
    stage: usize,
    rng: &mut ChaCha12Rng,
) -> Result<StageReport> {
    cfg.validate()?;
    if net.n_outputs() != data.n_classes as usize + 1 {
        return Err(Error::Shape(format!(
            "classifier has {} outputs, stage has {} classes (+1)",
            net.n_outputs(),
            data.n_classes
        )));
    }
    if centers.n_classes != data.n_classes as usize {
        return Err(Error::Shape(format!(
            "{} centers for {} classes",
            centers.n_classes, data.n_classes
        )));
    }

    let landmark_idx: Vec<usize> = (0..data.samples.len())
        .filter(|&i| data.is_landmark(data.samples[i].label))
        .collect();
    let non_landmark_idx: Vec<usize> = (0..data.samples.len())
        .filter(|&i| !data.is_landmark(data.samples[i].label))
        .collect();

    let schedule = make_lr_schedule(cfg.epochs, &cfg.lr_milestones, cfg.lr_decay_factor)?;
    let mut state = SgdState::new(net);
    let mut report = StageReport {
        stage,
        n_classes: data.n_classes,
        alphas,
        epochs: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 0..cfg.epochs {
        let mult = schedule.multiplier(epoch);
        let lrs = [alphas[0] * mult, alphas[1] * mult, alphas[2] * mult];
        let batches = sample_epoch_batches(
            &landmark_idx,
            &non_landmark_idx,
            cfg.batch_size,
            cfg.non_landmark_proportion,
            rng,
        )?;
        let mut stats = EpochStats {
            lr_multiplier: mult,
            steps: Vec::with_capacity(batches.len()),
            cross_entropy: 0.0,
            center_sum: 0.0,
            total: 0.0,
            landmark_samples: 0,
            non_landmark_samples: 0,
        };
        for batch in &batches {
            let features: Vec<&crate::data::Embedding> =
                batch.iter().map(|&i| &data.samples[i].features).collect();
            let labels: Vec<u32> = batch.iter().map(|&i| data.samples[i].label).collect();
            let x = Mat::from_embeddings(&features);
            let (parts, grads, embeddings) = loss_and_gradients(net, centers, &x, &labels, cfg.lambda)?;
            if !parts.total.is_finite() {
                return Err(Error::Diverged(format!(
                    "total loss {} at stage {stage} epoch {epoch}",
                    parts.total
                )));
            }
            sgd_step(net, &grads, &mut state, lrs, cfg.momentum, cfg.weight_decay)?;
            // Center update uses the embeddings of this forward pass.
            centers.update(&embeddings, &labels, cfg.center_lr);
            stats.landmark_samples += labels.iter().filter(|l| data.is_landmark(**l)).count();
            stats.non_landmark_samples += labels.iter().filter(|l| !data.is_landmark(**l)).count();
            stats.cross_entropy += parts.cross_entropy;
            stats.center_sum += parts.center_sum;
            stats.total += parts.total;
            stats.steps.push(StepLoss {
                cross_entropy: parts.cross_entropy,
                center_sum: parts.center_sum,
                total: parts.total,
            });
        }
        report.epochs.push(stats);
    }
    Ok(report)
}

/// Trains one stage with the config's own learning rates and seed.
pub fn train_stage(
    net: &mut Network,
    centers: &mut Centers,
    data: &Dataset,
    cfg: &TrainingConfig,
) -> Result<StageReport> {
    let mut rng = seeded_rng(cfg.seed);
    train_stage_with(net, centers, data, cfg, cfg.alphas, 1, &mut rng)
}

/// Network and center state captured at a stage boundary.
#[derive(Clone, Debug)]
pub struct StageSnapshot {
    pub stage: usize,
    pub entry_net: Network,
    pub entry_centers: Centers,
    pub exit_net: Network,
    pub exit_centers: Centers,
}

#[derive(Clone, Debug)]
pub struct CurriculumOutcome {
    pub net: Network,
    pub centers: Centers,
    pub reports: Vec<StageReport>,
    pub snapshots: Vec<StageSnapshot>,
    /// Local class index (0-based) to global landmark id, for the classes
    /// of the last executed stage.
    pub class_map: Vec<u32>,
}

/// Builds the stage dataset for parts `1..=stage`: landmark samples with
/// labels remapped to the cumulative (part-major, id-ascending) order, plus
/// the shared non-landmark pool at label `n_stage + 1`.
pub fn stage_dataset(parts: &CurriculumParts, stage: usize) -> Result<(Dataset, Vec<u32>)> {
    let class_ids = parts.cumulative_class_ids(stage);
    if class_ids.is_empty() {
        return Err(Error::Validation(format!(
            "no landmark classes in parts 1..={stage}"
        )));
    }
    let local: std::collections::HashMap<u32, u32> = class_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, i as u32 + 1))
        .collect();
    let n = class_ids.len() as u32;
    let mut samples = Vec::new();
    for part in &parts.parts[..stage.min(4)] {
        for s in part {
            samples.push(LabeledSample {
                features: s.features.clone(),
                label: local[&s.label],
            });
        }
    }
    for s in &parts.non_landmark {
        samples.push(LabeledSample { features: s.features.clone(), label: n + 1 });
    }
    Ok((Dataset::new(samples, n, parts.d_in)?, class_ids))
}

/// Runs the four-stage curriculum. The first executed stage trains from
/// random init with the stage-one learning rates; each later stage keeps the
/// trunk and embedding weights, re-initializes batch norm, classifier and
/// centers, and trains on the cumulative data with the later-stage rates.
/// Stages whose own part has no landmark classes are skipped with a warning.
pub fn curriculum_train(parts: &CurriculumParts, cfg: &TrainingConfig) -> Result<CurriculumOutcome> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let mut net: Option<Network> = None;
    let mut centers: Option<Centers> = None;
    let mut reports = Vec::new();
    let mut snapshots = Vec::new();
    let mut class_map = Vec::new();

    for stage in 1..=4usize {
        if parts.class_ids[stage - 1].is_empty() {
            log::warn!("curriculum stage {stage} has zero landmark classes; skipping");
            continue;
        }
        let (data, ids) = stage_dataset(parts, stage)?;
        let n_outputs = data.n_classes as usize + 1;
        let first = net.is_none();
        let alphas = if first { STAGE_ONE_ALPHAS } else { LATER_STAGE_ALPHAS };
        match net.as_mut() {
            None => {
                net = Some(Network::init(
                    parts.d_in,
                    &cfg.trunk_widths,
                    cfg.embedding_dim,
                    n_outputs,
                    cfg.activation,
                    &mut rng,
                ));
                centers = Some(Centers::init(data.n_classes as usize, cfg.embedding_dim, &mut rng));
            }
            Some(existing) => {
                // Trunk and embedding fully-connected weights are kept;
                // batch norm, classifier and centers start fresh.
                existing.bn = BatchNorm::fresh(cfg.embedding_dim);
                existing.classifier = Linear::init(cfg.embedding_dim, n_outputs, &mut rng);
                centers = Some(Centers::init(data.n_classes as usize, cfg.embedding_dim, &mut rng));
            }
        }
        let net_ref = net.as_mut().unwrap();
        let centers_ref = centers.as_mut().unwrap();
        let entry_net = net_ref.clone();
        let entry_centers = centers_ref.clone();
        let report = train_stage_with(net_ref, centers_ref, &data, cfg, alphas, stage, &mut rng)?;
        reports.push(report);
        snapshots.push(StageSnapshot {
            stage,
            entry_net,
            entry_centers,
            exit_net: net_ref.clone(),
            exit_centers: centers_ref.clone(),
        });
        class_map = ids;
    }

    match (net, centers) {
        (Some(net), Some(centers)) => Ok(CurriculumOutcome {
            net,
            centers,
            reports,
            snapshots,
            class_map,
        }),
        _ => Err(Error::Validation("curriculum has no stage with landmark classes".into())),
    }
}
