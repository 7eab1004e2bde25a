use super::batch::{BatchPlan, Targets};
use super::config::{Stage, TrainConfig};
use super::stage_loss;
use crate::autograd::{Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, auc, class_accuracy, dice, EvalResult};
use crate::models::Model;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 32;

/// Eval-mode outputs over a dataset, in sample order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    /// Per head, sigmoid probabilities.
    pub probs: Vec<Vec<f64>>,
    /// Per sample, argmax class (patch stage).
    pub classes: Vec<usize>,
    /// Per sample, Dice of the thresholded mask (segmentation).
    pub dice: Vec<f64>,
    pub loss: f64,
}

fn sigmoid(z: f32) -> f64 {
    1.0 / (1.0 + (-(z as f64)).exp())
}

pub fn predict(model: &Model<f32>, data: &Dataset, stage: Stage, threshold: f64) -> Result<Predictions> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate an empty dataset"));
    }
    let plan = BatchPlan {
        data,
        stage,
        inputs: model.config.inputs(),
        batch_size: EVAL_BATCH,
        augment: None,
        prefetch: false,
    };
    let order: Vec<usize> = (0..data.len()).collect();
    let loss_cfg = TrainConfig::for_stage(stage);
    let mut p = Predictions::default();
    let mut loss_sum = 0.0;
    plan.for_each(&order, |batch| {
        let tape = Tape::<f32>::frozen();
        let xs: Vec<Var<'_, f32>> = batch.inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = model.forward(&tape, &xs, false)?;
        let b = batch.indices.len();
        loss_sum += stage_loss(&loss_cfg, &out.logits, &batch.targets, &[1.0, 1.0])?.item()? as f64 * b as f64;
        match &batch.targets {
            Targets::Binary(_) => {
                p.probs.resize(out.logits.len(), Vec::new());
                for (h, z) in out.logits.iter().enumerate() {
                    z.with_value(|v| p.probs[h].extend(v.data().iter().map(|&z| sigmoid(z))));
                }
            }
            Targets::Class(_) => out.logits[0].with_value(|v| {
                let k = v.shape()[1];
                for row in v.data().chunks(k) {
                    let best = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap_or(0);
                    p.classes.push(best);
                }
            }),
            Targets::Mask(m) => out.logits[0].with_value(|v| -> Result<()> {
                let hw = m.len() / b;
                let shape = [1, hw];
                for i in 0..b {
                    let pred: Vec<f32> = v.data()[i * hw..(i + 1) * hw]
                        .iter()
                        .map(|&z| if sigmoid(z) >= threshold { 1.0 } else { 0.0 })
                        .collect();
                    let truth = Tensor::new(&shape, m.data()[i * hw..(i + 1) * hw].to_vec())?;
                    p.dice.push(dice(&Tensor::new(&shape, pred)?, &truth)?);
                }
                Ok(())
            })?,
        }
        Ok(())
    })?;
    p.loss = loss_sum / data.len() as f64;
    Ok(p)
}

/// Eval-mode metrics: per-head AUC and accuracy with their means for
/// binary stages, accuracy for patches, mean per-sample Dice for masks.
pub fn evaluate(model: &Model<f32>, data: &Dataset, stage: Stage, threshold: f64) -> Result<EvalResult> {
    let p = predict(model, data, stage, threshold)?;
    let mut r = EvalResult {
        samples: data.len(),
        loss: p.loss,
        ..EvalResult::default()
    };
    match stage {
        Stage::TwoView | Stage::FourView => {
            for (h, probs) in p.probs.iter().enumerate() {
                let labels: Vec<u8> = data.samples.iter().map(|s| s.labels[h]).collect();
                r.head_auc.push(auc(probs, &labels).ok());
                r.head_accuracy.push(accuracy(probs, &labels, threshold)?);
            }
            let aucs: Vec<f64> = r.head_auc.iter().flatten().copied().collect();
            r.auc = (aucs.len() == r.head_auc.len()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
            r.accuracy = Some(r.head_accuracy.iter().sum::<f64>() / r.head_accuracy.len() as f64);
        }
        Stage::Patch => {
            let truth: Vec<usize> = data.samples.iter().map(|s| s.class.unwrap_or(usize::MAX)).collect();
            r.accuracy = Some(class_accuracy(&p.classes, &truth)?);
        }
        Stage::Segmentation => {
            r.dice = Some(p.dice.iter().sum::<f64>() / p.dice.len() as f64);
        }
    }
    Ok(r)
}
