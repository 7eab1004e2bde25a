//! Training loops for the staged pipeline: patch pretraining, whole-image
//! fine-tuning, four-view fine-tuning, and segmentation.

mod batch;
mod config;
mod eval;
mod maps;

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use batch::{split_inputs, thread_budget, Batch, BatchPlan, Targets};
pub use config::{PosWeight, SegLoss, Stage, TrainConfig};
pub use eval::{evaluate, predict, Predictions};
pub use maps::{activation_map, export_maps, input_saliency, normalize, resize_bilinear, saliency};

use crate::autograd::{Tape, Var};
use crate::data::{stratified_indices, AugmentParams, Dataset, DatasetKind, PATCH_CLASSES};
use crate::error::{Error, Result};
use crate::metrics::EvalResult;
use crate::models::{Model, ModelConfig};
use crate::nn::{bce_loss, cross_entropy, soft_dice_loss, Adam, AdamConfig, Decision, EarlyStopper, Mode};
use crate::params::ParamStore;
use crate::rng::{derived, seeded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: EvalResult,
    /// The validation metric early stopping tracks.
    pub val_metric: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunLog {
    pub stage: Stage,
    pub param_count: usize,
    #[serde(default)]
    pub config: serde_json::Value,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were retained.
    pub best_epoch: usize,
    pub best_metric: f64,
    /// First epoch whose validation metric reached the target.
    pub epochs_to_target: Option<usize>,
    #[serde(default)]
    pub transferred: Option<usize>,
    #[serde(default)]
    pub test: Option<EvalResult>,
}

impl RunLog {
    /// One JSON object per line: an `epoch` record per epoch, then a
    /// `summary` record.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            let mut v = serde_json::to_value(e)?;
            v["event"] = "epoch".into();
            out += &serde_json::to_string(&v)?;
            out.push('\n');
        }
        let mut summary = serde_json::to_value(self)?;
        summary.as_object_mut().expect("struct").remove("epochs");
        summary["event"] = "summary".into();
        out += &serde_json::to_string(&summary)?;
        out.push('\n');
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// Checks that the dataset and model fit the stage.
pub fn check_compatible(stage: Stage, model: &ModelConfig, data: &Dataset) -> Result<()> {
    let kind = data.metadata.kind;
    let fail = |why: String| Err(Error::config(format!("{} stage: {why}", stage.as_str())));
    match (stage, model) {
        (Stage::Patch, ModelConfig::Phresnet(c)) => {
            if kind != DatasetKind::Patch {
                return fail(format!("needs a patch manifest, got {kind:?}"));
            }
            if c.heads != PATCH_CLASSES.len() {
                return fail(format!("needs {} heads, model has {}", PATCH_CLASSES.len(), c.heads));
            }
        }
        (Stage::TwoView, ModelConfig::Phresnet(c)) => {
            if kind != DatasetKind::TwoView {
                return fail(format!("needs a two-view manifest, got {kind:?}"));
            }
            if c.heads != 1 {
                return fail(format!("needs one head, model has {}", c.heads));
            }
        }
        (Stage::FourView, ModelConfig::Phybonet(_) | ModelConfig::Physenet(_)) => {
            if kind != DatasetKind::FourView {
                return fail(format!("needs a four-view manifest, got {kind:?}"));
            }
        }
        (Stage::Segmentation, ModelConfig::Phunet(_)) => {
            if data.samples.iter().any(|s| s.masks.is_none()) {
                return fail("every sample needs masks".into());
            }
        }
        (_, m) => return fail(format!("{} model does not fit", m.arch())),
    }
    if data.is_empty() {
        return fail("empty dataset".into());
    }
    Ok(())
}

/// `#negatives / #positives` per head.
pub fn auto_pos_weights(data: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
    let heads = indices.first().map(|&i| data.samples[i].labels.len()).unwrap_or(0);
    (0..heads)
        .map(|h| {
            let pos = indices.iter().filter(|&&i| data.samples[i].labels[h] == 1).count();
            let neg = indices.len() - pos;
            if pos == 0 {
                Err(Error::config(format!("head {h} has no positive training examples")))
            } else {
                Ok(neg as f64 / pos as f64)
            }
        })
        .collect()
}

/// Stage loss of one forward pass.
pub(crate) fn stage_loss<'t>(
    cfg: &TrainConfig,
    logits: &[Var<'t, f32>],
    targets: &Targets,
    pos_weights: &[f64],
) -> Result<Var<'t, f32>> {
    match targets {
        Targets::Binary(t) => {
            if t.len() != logits.len() {
                return Err(Error::shape(format!("{} heads but {} label columns", logits.len(), t.len())));
            }
            let mut total: Option<Var<'t, f32>> = None;
            for (h, (z, y)) in logits.iter().zip(t).enumerate() {
                let l = bce_loss(*z, y, pos_weights.get(h).copied().unwrap_or(1.0))?;
                total = Some(match total {
                    Some(acc) => acc.add(l)?,
                    None => l,
                });
            }
            total.ok_or_else(|| Error::shape("no heads"))
        }
        Targets::Class(c) => cross_entropy(logits[0], c),
        Targets::Mask(m) => {
            let bce = bce_loss(logits[0], m, 1.0)?;
            match cfg.seg_loss {
                SegLoss::Bce => Ok(bce),
                SegLoss::BceDice => bce.add(soft_dice_loss(logits[0].sigmoid(), m)?),
            }
        }
    }
}

/// Higher-is-better validation metric of a stage.
pub fn stage_metric(stage: Stage, r: &EvalResult) -> f64 {
    let m = match stage {
        Stage::Patch => r.accuracy,
        Stage::TwoView | Stage::FourView => r.auc.or(r.accuracy.map(|a| a / 100.0)),
        Stage::Segmentation => r.dice,
    };
    m.unwrap_or(f64::NEG_INFINITY)
}

/// Seeded per-sample augmentation draw for an epoch.
pub fn augment_params(seed: u64, epoch: usize, index: usize) -> AugmentParams {
    let mut rng = derived(seed, 0xA11 + epoch as u64, index as u64);
    AugmentParams::sample(rand::Rng::random(&mut rng))
}

/// Trains on `data` with a stratified validation split taken from it.
pub fn train(cfg: &TrainConfig, model: &mut Model<f32>, data: &Dataset) -> Result<RunLog> {
    let keys: Vec<String> = data
        .samples
        .iter()
        .map(|s| match cfg.stage {
            Stage::Segmentation => "all".to_string(),
            Stage::Patch => format!("{:?}", s.class),
            _ => s.labels.iter().map(|l| l.to_string()).collect(),
        })
        .collect();
    let (tr, va) = stratified_indices(&keys, cfg.val_fraction, cfg.seed)?;
    train_split(cfg, model, &data.select(&tr), &data.select(&va), |_| {})
}

/// Trains on `train_set`, early-stopping on `val_set`, and leaves the
/// best-validation weights in `model`.
pub fn train_split(
    cfg: &TrainConfig,
    model: &mut Model<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<RunLog> {
    cfg.validate()?;
    check_compatible(cfg.stage, &model.config, train_set)?;
    check_compatible(cfg.stage, &model.config, val_set)?;
    let all: Vec<usize> = (0..train_set.len()).collect();
    let pos_weights = match (cfg.stage, cfg.pos_weight) {
        (Stage::TwoView | Stage::FourView, PosWeight::Auto) => auto_pos_weights(train_set, &all)?,
        (_, PosWeight::Fixed(w)) => vec![w; 2],
        _ => vec![1.0],
    };
    let mut opt = Adam::new(AdamConfig::new(cfg.lr(), cfg.weight_decay));
    let mut stopper = EarlyStopper::new(cfg.patience, Mode::Max);
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let mut log = RunLog {
        stage: cfg.stage,
        param_count: model.param_count(),
        config: serde_json::to_value(cfg)?,
        epochs: Vec::new(),
        best_epoch: 0,
        best_metric: f64::NEG_INFINITY,
        epochs_to_target: None,
        transferred: None,
        test: None,
    };
    let inputs = model.config.inputs();
    let mut order = all.clone();
    let mut shuffler = seeded(cfg.seed ^ 0x5AFF_1E);
    let prefetch = thread_budget() > 1;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffler);
        let seed = cfg.seed;
        let aug = move |i: usize| augment_params(seed, epoch, i);
        let plan = BatchPlan {
            data: train_set,
            stage: cfg.stage,
            inputs,
            batch_size: cfg.batch_size(),
            augment: cfg.augment.then_some(&aug as &(dyn Fn(usize) -> AugmentParams + Sync)),
            prefetch,
        };
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        plan.for_each(&order, |batch| {
            let tape = Tape::new();
            let xs: Vec<Var<'_, f32>> = batch.inputs.iter().map(|x| tape.constant(x.clone())).collect();
            let ids = || -> Vec<&str> { batch.indices.iter().map(|&i| train_set.samples[i].id.as_str()).collect() };
            let out = model.forward(&tape, &xs, true)?;
            let loss = stage_loss(cfg, &out.logits, &batch.targets, &pos_weights).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("{m} at epoch {epoch}, batch of {:?}", ids())),
                e => e,
            })?;
            let value = loss.item()? as f64;
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {value} at epoch {epoch}, batch of {:?}",
                    ids()
                )));
            }
            let grads = tape.backward(loss)?;
            let updates = tape.take_buffer_updates();
            drop(out);
            opt.step(&mut model.store, &grads)?;
            model.store.apply_buffer_updates(updates)?;
            loss_sum += value * batch.indices.len() as f64;
            seen += batch.indices.len();
            Ok(())
        })?;
        let val = evaluate(model, val_set, cfg.stage, cfg.threshold)?;
        let metric = stage_metric(cfg.stage, &val);
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val,
            val_metric: metric,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.epochs.push(entry);
        let decision = stopper.update(metric)?;
        if stopper.improved() {
            best = Some((epoch, metric, model.store.clone()));
        }
        if log.epochs_to_target.is_none() && cfg.target.is_some_and(|t| metric >= t) {
            log.epochs_to_target = Some(epoch);
            break;
        }
        if decision == Decision::Stop {
            break;
        }
    }
    if let Some((epoch, metric, store)) = best {
        model.store = store;
        log.best_epoch = epoch;
        log.best_metric = metric;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{render_synthetic, SyntheticSpec};
    use crate::models::PhResNetConfig;

    fn tiny_model() -> ModelConfig {
        ModelConfig::Phresnet(PhResNetConfig {
            width: 8,
            blocks: vec![1, 1],
            refiners: 1,
            ..Default::default()
        })
    }

    fn data(count: usize, seed: u64) -> Dataset {
        render_synthetic(&SyntheticSpec { count, seed, ..Default::default() }).unwrap().dataset
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: Some(1e-3),
            max_epochs: epochs,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_bitwise() {
        let d = data(12, 1);
        let mut m = Model::<f32>::build(&tiny_model(), 3).unwrap();
        let before = m.store.clone();
        let cfg = TrainConfig {
            lr: Some(0.0),
            ..quick(2)
        };
        train(&cfg, &mut m, &d).unwrap();
        for id in before.trainable_ids() {
            assert_eq!(before.get(id).data(), m.store.get(id).data(), "{}", before.name(id));
        }
    }

    #[test]
    fn same_seed_same_losses() {
        let d = data(12, 2);
        let run = || {
            let mut m = Model::<f32>::build(&tiny_model(), 5).unwrap();
            let log = train(&quick(2), &mut m, &d).unwrap();
            (log.losses(), crate::checkpoint::Checkpoint::from_model(&m).to_bytes().unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn auto_pos_weight_of_balanced_set_is_one() {
        let d = data(40, 3);
        let idx: Vec<usize> = (0..d.len()).collect();
        let pos: Vec<usize> = idx.iter().copied().filter(|&i| d.samples[i].labels[0] == 1).collect();
        let neg: Vec<usize> = idx.iter().copied().filter(|&i| d.samples[i].labels[0] == 0).collect();
        let k = pos.len().min(neg.len());
        let balanced: Vec<usize> = pos[..k].iter().chain(&neg[..k]).copied().collect();
        assert_eq!(auto_pos_weights(&d, &balanced).unwrap(), vec![1.0]);
        let skewed: Vec<usize> = pos[..1].iter().chain(&neg[..3]).copied().collect();
        assert_eq!(auto_pos_weights(&d, &skewed).unwrap(), vec![3.0]);
    }

    #[test]
    fn retained_weights_are_the_best_epoch() {
        let d = data(24, 4);
        let mut m = Model::<f32>::build(&tiny_model(), 1).unwrap();
        let keys: Vec<String> = d.samples.iter().map(|s| s.labels[0].to_string()).collect();
        let (tr, va) = stratified_indices(&keys, 0.25, 0).unwrap();
        let (trs, vas) = (d.select(&tr), d.select(&va));
        let log = train_split(&quick(4), &mut m, &trs, &vas, |_| {}).unwrap();
        let best = log.epochs.iter().map(|e| e.val_metric).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(log.best_metric, best);
        let again = stage_metric(Stage::TwoView, &evaluate(&m, &vas, Stage::TwoView, 0.5).unwrap());
        assert_eq!(again, best);
        assert!(again >= log.epochs.last().unwrap().val_metric);
    }

    #[test]
    fn incompatible_stage_is_rejected() {
        let d = data(8, 5);
        let mut m = Model::<f32>::build(&tiny_model(), 1).unwrap();
        let cfg = TrainConfig {
            stage: Stage::Patch,
            ..quick(1)
        };
        assert!(matches!(train(&cfg, &mut m, &d), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut d = data(8, 6);
        d.samples[0].views.data_mut()[0] = f32::NAN;
        let mut m = Model::<f32>::build(&tiny_model(), 1).unwrap();
        let cfg = TrainConfig {
            batch_size: Some(16),
            augment: false,
            ..quick(1)
        };
        let e = train_split(&cfg, &mut m, &d, &d, |_| {});
        assert!(matches!(&e, Err(Error::Numeric(m)) if m.contains("s00000")), "{e:?}");
    }

    #[test]
    fn run_log_is_line_delimited_json() {
        let d = data(12, 7);
        let mut m = Model::<f32>::build(&tiny_model(), 1).unwrap();
        let log = train(&quick(2), &mut m, &d).unwrap();
        let text = log.to_jsonl().unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), log.epochs.len() + 1);
        for (i, l) in lines[..lines.len() - 1].iter().enumerate() {
            assert_eq!(l["event"], "epoch");
            assert_eq!(l["epoch"], i + 1);
        }
        assert_eq!(lines.last().unwrap()["param-count"], m.param_count());
    }
}
