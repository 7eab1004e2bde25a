//! Mini-batch assembly and the optional prefetch thread.

use std::sync::mpsc::sync_channel;

use super::config::Stage;
use crate::data::{augment::apply, AugmentParams, Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// One `(B, 1)` tensor per head.
    Binary(Vec<Tensor<f32>>),
    Class(Vec<usize>),
    /// `(B, 1, H, W)` mask of the first view.
    Mask(Tensor<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// One `(B, C, H, W)` tensor per model input.
    pub inputs: Vec<Tensor<f32>>,
    pub targets: Targets,
}

/// Worker threads allowed by `PHCNET_THREADS` (default 1).
pub fn thread_budget() -> usize {
    std::env::var("PHCNET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Splits a sample's `(V, H, W)` views into the model's inputs: all views
/// stacked as channels, or one tensor per side of a four-view exam.
pub fn split_inputs(views: &Tensor<f32>, inputs: usize) -> Result<Vec<Tensor<f32>>> {
    let s = views.shape();
    let (v, h, w) = (s[0], s[1], s[2]);
    if v % inputs != 0 {
        return Err(Error::shape(format!("{v} views cannot feed {inputs} inputs")));
    }
    let per = v / inputs;
    (0..inputs)
        .map(|i| Tensor::new(&[per, h, w], views.data()[i * per * h * w..(i + 1) * per * h * w].to_vec()))
        .collect()
}

fn stack(tensors: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    Tensor::stack(tensors)
}

pub struct BatchPlan<'a> {
    pub data: &'a Dataset,
    pub stage: Stage,
    pub inputs: usize,
    pub batch_size: usize,
    /// Per-sample augmentation parameters; `None` disables augmentation.
    pub augment: Option<&'a (dyn Fn(usize) -> AugmentParams + Sync)>,
    /// Assemble the next batch on a worker thread.
    pub prefetch: bool,
}

impl BatchPlan<'_> {
    pub fn assemble(&self, indices: &[usize]) -> Result<Batch> {
        let mut per_input: Vec<Vec<Tensor<f32>>> = vec![Vec::with_capacity(indices.len()); self.inputs];
        let mut masks = Vec::new();
        for &i in indices {
            let s: &Sample = &self.data.samples[i];
            let (views, mask) = match self.augment {
                Some(f) => {
                    let p = f(i);
                    let m = match (&s.masks, self.stage) {
                        (Some(m), Stage::Segmentation) => Some(apply(m, &p)?.map(|x| if x >= 0.5 { 1.0 } else { 0.0 })),
                        _ => None,
                    };
                    (apply(&s.views, &p)?, m)
                }
                None => (s.views.clone(), s.masks.clone()),
            };
            for (slot, t) in per_input.iter_mut().zip(split_inputs(&views, self.inputs)?) {
                slot.push(t);
            }
            if self.stage == Stage::Segmentation {
                let m = mask.ok_or_else(|| Error::config(format!("{}: segmentation needs masks", s.id)))?;
                let first = split_inputs(&m, m.shape()[0])?.swap_remove(0);
                masks.push(first);
            }
        }
        let inputs = per_input.iter().map(|v| stack(v)).collect::<Result<_>>()?;
        let b = indices.len();
        let targets = match self.stage {
            Stage::Patch => Targets::Class(
                indices
                    .iter()
                    .map(|&i| {
                        let s = &self.data.samples[i];
                        s.class.ok_or_else(|| Error::config(format!("{}: patch sample without class", s.id)))
                    })
                    .collect::<Result<_>>()?,
            ),
            Stage::Segmentation => Targets::Mask(stack(&masks)?),
            Stage::TwoView | Stage::FourView => {
                let heads = self.data.samples[indices[0]].labels.len();
                let mut out = Vec::with_capacity(heads);
                for h in 0..heads {
                    let col: Vec<f32> = indices.iter().map(|&i| self.data.samples[i].labels[h] as f32).collect();
                    out.push(Tensor::new(&[b, 1], col)?);
                }
                Targets::Binary(out)
            }
        };
        Ok(Batch {
            indices: indices.to_vec(),
            inputs,
            targets,
        })
    }

    /// Assembles `order` batch by batch and feeds each to `consume` in
    /// order. With `prefetch`, assembly runs ahead on a worker over a
    /// bounded queue.
    pub fn for_each(&self, order: &[usize], mut consume: impl FnMut(Batch) -> Result<()>) -> Result<()> {
        let chunks: Vec<&[usize]> = order.chunks(self.batch_size).collect();
        if !self.prefetch {
            for c in chunks {
                consume(self.assemble(c)?)?;
            }
            return Ok(());
        }
        std::thread::scope(|scope| {
            let (tx, rx) = sync_channel::<Result<Batch>>(2);
            scope.spawn(move || {
                for c in chunks {
                    if tx.send(self.assemble(c)).is_err() {
                        break;
                    }
                }
            });
            for b in rx {
                consume(b?)?;
            }
            Ok(())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{render_synthetic, SyntheticSpec};

    #[test]
    fn four_view_splits_into_sides() {
        let r = render_synthetic(&SyntheticSpec { views: 4, count: 3, ..Default::default() }).unwrap();
        let plan = BatchPlan { data: &r.dataset, stage: Stage::FourView, inputs: 2, batch_size: 2, augment: None, prefetch: false };
        let b = plan.assemble(&[0, 2]).unwrap();
        assert_eq!(b.inputs.len(), 2);
        assert_eq!(b.inputs[1].shape(), &[2, 2, 32, 32]);
        let s2 = &r.dataset.samples[2].views;
        let n = 2 * 32 * 32;
        assert_eq!(&b.inputs[1].data()[n..], &s2.data()[n..]);
        let Targets::Binary(t) = &b.targets else { panic!() };
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].data()[1], r.dataset.samples[2].labels[1] as f32);
    }

    #[test]
    fn segmentation_targets_first_view_mask() {
        let r = render_synthetic(&SyntheticSpec { count: 2, ..Default::default() }).unwrap();
        let plan = BatchPlan { data: &r.dataset, stage: Stage::Segmentation, inputs: 1, batch_size: 2, augment: None, prefetch: false };
        let b = plan.assemble(&[1]).unwrap();
        let Targets::Mask(m) = &b.targets else { panic!() };
        assert_eq!(m.shape(), &[1, 1, 32, 32]);
        assert_eq!(m.data(), &r.dataset.samples[1].masks.as_ref().unwrap().data()[..1024]);
    }

    #[test]
    fn prefetch_preserves_order() {
        let r = render_synthetic(&SyntheticSpec { count: 7, ..Default::default() }).unwrap();
        let order = [6, 1, 4, 0, 2, 5, 3];
        let run = |prefetch| {
            let plan = BatchPlan { data: &r.dataset, stage: Stage::TwoView, inputs: 1, batch_size: 3, augment: None, prefetch };
            let mut seen = Vec::new();
            plan.for_each(&order, |b| {
                seen.push(b);
                Ok(())
            })
            .unwrap();
            seen
        };
        let (a, b) = (run(false), run(true));
        assert_eq!(a, b);
        assert_eq!(a.iter().flat_map(|b| b.indices.clone()).collect::<Vec<_>>(), order);
    }
}
