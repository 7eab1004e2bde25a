use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, BlockKind, ResidualBlock};
use crate::params::{Ctx, ParamStore};
use crate::phc::{AlgebraInit, PhcConv, PhcSpec};
use crate::rng::Rng;
use crate::tensor::Scalar;

/// Which part of a ResNet-pattern backbone to build. Stage `s` (0-based)
/// has width `width·2^s`; every stage after the first starts with a
/// stride-2 block.
#[derive(Clone, Debug)]
pub(crate) struct TrunkPlan<'a> {
    pub n: usize,
    pub in_channels: usize,
    pub width: usize,
    pub blocks: &'a [usize],
    pub kind: BlockKind,
    pub stages: std::ops::Range<usize>,
    pub stem: bool,
    pub scheme: AlgebraInit,
}

/// Stem convolution plus a run of residual stages.
#[derive(Clone, Debug)]
pub struct Trunk {
    pub stem: Option<(PhcConv, BatchNorm)>,
    pub stages: Vec<Vec<ResidualBlock>>,
    pub out_channels: usize,
}

impl Trunk {
    pub(crate) fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        plan: &TrunkPlan<'_>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if plan.stages.end > plan.blocks.len() {
            return Err(Error::config(format!(
                "{} stages requested but only {} block counts given",
                plan.stages.end,
                plan.blocks.len()
            )));
        }
        let mut channels = plan.in_channels;
        let stem = if plan.stem {
            let spec = PhcSpec::new(plan.n, channels, plan.width, 3);
            let conv = PhcConv::new(store, &format!("{prefix}.stem.conv"), spec, plan.scheme, rng)?;
            let bn = BatchNorm::new(store, &format!("{prefix}.stem.bn"), plan.width)?;
            channels = plan.width;
            Some((conv, bn))
        } else {
            None
        };
        let mut stages = Vec::new();
        for s in plan.stages.clone() {
            let width = plan.width << s;
            let count = plan.blocks[s];
            if count == 0 {
                return Err(Error::config("every stage needs at least one block"));
            }
            let mut blocks = Vec::with_capacity(count);
            for b in 0..count {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("{prefix}.stage{}.block{}", s + 1, b + 1);
                blocks.push(ResidualBlock::new(
                    store, &name, plan.kind, plan.n, channels, width, stride, plan.scheme, rng,
                )?);
                channels = width;
            }
            stages.push(blocks);
        }
        Ok(Trunk {
            stem,
            stages,
            out_channels: channels,
        })
    }

    /// Output of every stage, in order.
    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let mut h = x;
        if let Some((conv, bn)) = &self.stem {
            h = bn.forward(ctx, conv.forward(ctx, h)?)?.relu()?;
        }
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for block in stage {
                h = block.forward(ctx, h)?;
            }
            outs.push(h);
        }
        if outs.is_empty() {
            outs.push(h);
        }
        Ok(outs)
    }

    pub fn phc_layers(&self) -> Vec<&PhcConv> {
        let mut v: Vec<&PhcConv> = self.stem.iter().map(|(c, _)| c).collect();
        for b in self.stages.iter().flatten() {
            v.extend(b.phc_layers());
        }
        v
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        let mut v: Vec<&BatchNorm> = self.stem.iter().map(|(_, b)| b).collect();
        for b in self.stages.iter().flatten() {
            v.extend(b.batch_norms());
        }
        v
    }
}

/// Bottleneck blocks applied to pooled features viewed as `(N, C, 1, 1)`.
#[derive(Clone, Debug)]
pub struct Refiner {
    pub blocks: Vec<ResidualBlock>,
    pub channels: usize,
}

impl Refiner {
    pub(crate) fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        n: usize,
        channels: usize,
        count: usize,
        scheme: AlgebraInit,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(count);
        for b in 0..count {
            blocks.push(ResidualBlock::new(
                store,
                &format!("{prefix}.block{}", b + 1),
                BlockKind::Bottleneck,
                n,
                channels,
                channels,
                1,
                scheme,
                rng,
            )?);
        }
        Ok(Refiner { blocks, channels })
    }

    /// `(N, C)` in, `(N, C)` out.
    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, pooled: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.blocks.is_empty() {
            return Ok(pooled);
        }
        let n = pooled.shape()[0];
        let mut h = pooled.reshape(&[n, self.channels, 1, 1])?;
        for b in &self.blocks {
            h = b.forward(ctx, h)?;
        }
        h.reshape(&[n, self.channels])
    }

    pub fn phc_layers(&self) -> Vec<&PhcConv> {
        self.blocks.iter().flat_map(|b| b.phc_layers()).collect()
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        self.blocks.iter().flat_map(|b| b.batch_norms()).collect()
    }
}
