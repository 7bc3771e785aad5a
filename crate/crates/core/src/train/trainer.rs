use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::loss::{loss_l1_tonemapped, psnr, PsnrDomain};
use super::{Checkpoint, TrainConfig};
use crate::data::{crop_patches, gt_tensor, sample_gamma, scene_tensors, SceneSample, SceneTensors};
use crate::error::{Error, Result};
use crate::model::{forward_graph, Adnet, ForwardOptions, HdrModel, ModelConfig, ModelWeights};
use crate::rng::{self, tags};
use crate::tensor::{adam_step, AdamParams, Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// One-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when validation was skipped this epoch.
    pub val_psnr_l: f64,
    pub val_psnr_mu: f64,
}

impl EpochMetrics {
    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{:.8}\t{:.4}\t{:.4}",
            self.epoch, self.train_loss, self.val_psnr_l, self.val_psnr_mu
        )
    }
}

pub fn metric_log(entries: &[EpochMetrics]) -> String {
    entries.iter().map(|e| e.tsv_line() + "\n").collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// Optimizer step after the update, starting at 1.
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<SceneSample>,
    /// Scenes used for model selection; the training patches are used
    /// when empty.
    pub val: Vec<SceneSample>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Checkpoint with the highest validation PSNR-mu and its metrics.
    pub best: Option<(EpochMetrics, Checkpoint)>,
    pub log: Vec<EpochMetrics>,
    pub steps: Vec<StepRecord>,
}

/// Tonemapped L1 loss of one batch and its gradient for every parameter.
pub fn loss_and_grads(
    cfg: &ModelConfig,
    weights: &ModelWeights<f32>,
    inputs: &SceneTensors<f32>,
    gt: &Tensor<f32>,
    loss_cfg: &super::LossConfig,
) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
    let mut g = Graph::new();
    let vars = weights.register(&mut g, true);
    let ldr = inputs.ldr.clone().map(|t| g.constant(t));
    let gamma = inputs.gamma.clone().map(|t| g.constant(t));
    let nodes = forward_graph(&mut g, &vars, cfg, ldr, gamma, ForwardOptions::default())?;
    let target = g.constant(gt.clone());
    let loss = loss_l1_tonemapped(&mut g, nodes.output, target, loss_cfg)?;
    let value = g.value(loss).data()[0].into();
    if !f64::is_finite(value) {
        return Ok((value, BTreeMap::new()));
    }
    let mut grads = g.backward(loss)?;
    let named = vars.0.iter().map(|(k, &v)| (k.clone(), grads.take(v))).collect();
    Ok((value, named))
}

/// Loss of one batch without gradients.
pub fn batch_loss(
    model: &Adnet<f32>,
    scenes: &[&SceneSample],
    gammas: &[f64],
    loss_cfg: &super::LossConfig,
) -> Result<f64> {
    let inputs = scene_tensors(scenes, gammas)?;
    let gt = gt_tensor(scenes)?;
    super::loss::loss_value(&model.predict(&inputs)?, &gt, loss_cfg)
}

/// Mean PSNR-l and PSNR-mu over `scenes`, using the default gamma.
pub fn evaluate<M: HdrModel<f32> + ?Sized>(
    model: &M,
    scenes: &[&SceneSample],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("no scenes to evaluate".into()));
    }
    let (mut l, mut m) = (0.0, 0.0);
    for s in scenes {
        let inputs = scene_tensors(&[*s], &[cfg.preprocess.gamma_default])?;
        let gt = gt_tensor(&[*s])?;
        let pred = model.predict(&inputs)?;
        l += psnr(&pred, &gt, PsnrDomain::Linear, &cfg.loss)?;
        m += psnr(&pred, &gt, PsnrDomain::Mu, &cfg.loss)?;
    }
    Ok((l / scenes.len() as f64, m / scenes.len() as f64))
}

/// Gamma of training sample `index` in `epoch`.
pub fn sample_gamma_for(cfg: &TrainConfig, epoch: usize, index: usize) -> f64 {
    let mut r = rng::stream(cfg.preprocess.seed, &[tags::GAMMA, epoch as u64, index as u64]);
    sample_gamma(&mut r, &cfg.preprocess)
}

/// Patch visiting order of `epoch`.
pub fn epoch_order(cfg: &TrainConfig, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(cfg.seed, &[tags::SHUFFLE, epoch as u64]));
    order
}

fn prepare(start: &Checkpoint, data: &Dataset) -> Result<Vec<SceneSample>> {
    let cfg = &start.train;
    cfg.validate()?;
    start.model.validate()?;
    start.weights.validate(&start.model)?;
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    for s in data.train.iter().chain(&data.val) {
        if s.gt.is_none() {
            return Err(Error::InvalidArgument("training requires ground truth for every scene".into()));
        }
    }
    start.model.check_input(cfg.patch_size, cfg.patch_size)?;
    for s in &data.val {
        start.model.check_input(s.height(), s.width())?;
    }
    let mut patches = Vec::new();
    for s in &data.train {
        patches.extend(crop_patches(s, cfg.patch_size, cfg.patch_stride)?);
    }
    Ok(patches)
}

/// Trains `model` from scratch under `cfg`.
pub fn train_loop(
    model: Adnet<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    let start = Checkpoint::new(model.config, cfg.clone(), model.weights);
    resume(start, data, on_step)
}

/// Continues training from `start` until `start.train.epochs` epochs are done.
pub fn resume(
    start: Checkpoint,
    data: &Dataset,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    let patches = prepare(&start, data)?;
    let cfg = start.train.clone();
    let mut state = start;
    let mut log = Vec::new();
    let mut steps = Vec::new();
    let mut best: Option<(EpochMetrics, Checkpoint)> = None;

    for epoch in state.epoch..cfg.epochs {
        let order = epoch_order(&cfg, epoch, patches.len());
        let hp = AdamParams {
            lr: cfg.lr_at(epoch),
            ..cfg.adam
        };
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let scenes: Vec<&SceneSample> = batch.iter().map(|&i| &patches[i]).collect();
            let gammas: Vec<f64> = batch.iter().map(|&i| sample_gamma_for(&cfg, epoch, i)).collect();
            let inputs = scene_tensors(&scenes, &gammas)?;
            let gt = gt_tensor(&scenes)?;
            let (loss, grads) = loss_and_grads(&state.model, &state.weights, &inputs, &gt, &cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step: state.adam.step + 1,
                    dump: Box::new(state),
                });
            }
            adam_step(&mut state.weights.params, &grads, &mut state.adam, &hp)?;
            loss_sum += loss * batch.len() as f64;
            count += batch.len();
            let rec = StepRecord {
                epoch: epoch + 1,
                step: state.adam.step,
                loss,
                lr: hp.lr,
            };
            on_step(&rec);
            steps.push(rec);
        }
        state.epoch = epoch + 1;

        let mut metrics = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / count as f64,
            val_psnr_l: f64::NAN,
            val_psnr_mu: f64::NAN,
        };
        if (epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs {
            let model = Adnet {
                config: state.model.clone(),
                weights: state.weights.clone(),
                options: ForwardOptions::default(),
            };
            let val: Vec<&SceneSample> = if data.val.is_empty() {
                patches.iter().collect()
            } else {
                data.val.iter().collect()
            };
            let (l, m) = evaluate(&model, &val, &cfg)?;
            metrics.val_psnr_l = l;
            metrics.val_psnr_mu = m;
            if best.as_ref().map_or(true, |(b, _)| m > b.val_psnr_mu) {
                best = Some((metrics.clone(), state.clone()));
            }
        }
        log.push(metrics);
    }
    Ok(TrainOutcome {
        last: state,
        best,
        log,
        steps,
    })
}
