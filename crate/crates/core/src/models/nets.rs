use super::config::{PhUNetConfig, PhResNetConfig, PhyboNetConfig, PhyseNetConfig};
use super::trunk::{Refiner, Trunk, TrunkPlan};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, BlockKind, Dense};
use crate::params::{Ctx, ParamStore};
use crate::phc::{AlgebraInit, PhcConv, PhcSpec};
use crate::rng::Rng;
use crate::tensor::Scalar;

pub(crate) struct Forward<'t, T: Scalar> {
    pub logits: Vec<Var<'t, T>>,
    pub taps: Vec<(&'static str, Var<'t, T>)>,
}

/// Output of the second stage when there is one, otherwise the last.
fn encoder_tap<'t, T: Scalar>(outs: &[Var<'t, T>]) -> Var<'t, T> {
    outs[1.min(outs.len() - 1)]
}

#[derive(Clone, Debug)]
pub struct PhResNet {
    pub trunk: Trunk,
    pub refiner: Refiner,
    pub head: Dense,
}

impl PhResNet {
    pub(crate) fn build<T: Scalar>(store: &mut ParamStore<T>, cfg: &PhResNetConfig, rng: &mut Rng) -> Result<Self> {
        let plan = TrunkPlan {
            n: cfg.n,
            in_channels: cfg.in_channels(),
            width: cfg.width,
            blocks: &cfg.blocks,
            kind: cfg.block,
            stages: 0..cfg.blocks.len(),
            stem: true,
            scheme: cfg.algebra,
        };
        let trunk = Trunk::build(store, "trunk", &plan, rng)?;
        let c = trunk.out_channels;
        let refiner = Refiner::build(store, "refiner", cfg.n, c, cfg.refiners, cfg.algebra, rng)?;
        let head = Dense::new(store, "head", c, cfg.heads, rng)?;
        Ok(PhResNet { trunk, refiner, head })
    }

    pub(crate) fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Forward<'t, T>> {
        let outs = self.trunk.forward(ctx, x)?;
        let last = *outs.last().expect("trunk has a stage");
        let pooled = last.global_avg_pool()?;
        let logits = self.head.forward(ctx, self.refiner.forward(ctx, pooled)?)?;
        Ok(Forward {
            logits: vec![logits],
            taps: vec![("encoder", encoder_tap(&outs)), ("classifier", last)],
        })
    }
}

#[derive(Clone, Debug)]
pub struct PhyboNet {
    pub left_encoder: Trunk,
    pub right_encoder: Trunk,
    pub bottleneck: Trunk,
    pub refiner: Refiner,
    pub head_left: Dense,
    pub head_right: Dense,
}

impl PhyboNet {
    pub(crate) fn build<T: Scalar>(store: &mut ParamStore<T>, cfg: &PhyboNetConfig, rng: &mut Rng) -> Result<Self> {
        let encoder = TrunkPlan {
            n: cfg.encoder_n,
            in_channels: cfg.in_channels,
            width: cfg.width,
            blocks: &cfg.blocks,
            kind: BlockKind::Basic,
            stages: 0..2,
            stem: true,
            scheme: cfg.algebra,
        };
        let left_encoder = Trunk::build(store, "left_encoder", &encoder, rng)?;
        let right_encoder = Trunk::build(store, "right_encoder", &encoder, rng)?;
        let bottleneck_plan = TrunkPlan {
            n: cfg.bottleneck_n,
            in_channels: left_encoder.out_channels + right_encoder.out_channels,
            stages: 2..4,
            stem: false,
            ..encoder
        };
        let bottleneck = Trunk::build(store, "bottleneck", &bottleneck_plan, rng)?;
        let c = bottleneck.out_channels;
        if c % 2 != 0 {
            return Err(Error::config("bottleneck output cannot be split between two heads"));
        }
        let refiner = Refiner::build(store, "refiner", cfg.bottleneck_n, c, cfg.refiners, cfg.algebra, rng)?;
        let head_left = Dense::new(store, "head_left", c / 2, 1, rng)?;
        let head_right = Dense::new(store, "head_right", c / 2, 1, rng)?;
        Ok(PhyboNet {
            left_encoder,
            right_encoder,
            bottleneck,
            refiner,
            head_left,
            head_right,
        })
    }

    pub(crate) fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, T>,
        left: Var<'t, T>,
        right: Var<'t, T>,
    ) -> Result<Forward<'t, T>> {
        let l = *self.left_encoder.forward(ctx, left)?.last().expect("stage");
        let r = *self.right_encoder.forward(ctx, right)?.last().expect("stage");
        let joint = Var::concat_channels(&[l, r])?;
        let b = *self.bottleneck.forward(ctx, joint)?.last().expect("stage");
        let refined = self.refiner.forward(ctx, b.global_avg_pool()?)?;
        let (n, c) = (refined.shape()[0], refined.shape()[1]);
        let h = refined.reshape(&[n, c, 1, 1])?;
        let half = c / 2;
        let lh = h.slice_channels(0, half)?.reshape(&[n, half])?;
        let rh = h.slice_channels(half, half)?.reshape(&[n, half])?;
        Ok(Forward {
            logits: vec![self.head_left.forward(ctx, lh)?, self.head_right.forward(ctx, rh)?],
            taps: vec![("encoder", joint), ("classifier", b)],
        })
    }
}

#[derive(Clone, Debug)]
pub struct PhyseNet {
    pub encoder: Trunk,
    pub refiner_left: Refiner,
    pub refiner_right: Refiner,
    pub head_left: Dense,
    pub head_right: Dense,
}

impl PhyseNet {
    pub(crate) fn build<T: Scalar>(store: &mut ParamStore<T>, cfg: &PhyseNetConfig, rng: &mut Rng) -> Result<Self> {
        let plan = TrunkPlan {
            n: cfg.n,
            in_channels: cfg.in_channels,
            width: cfg.width,
            blocks: &cfg.blocks,
            kind: BlockKind::Basic,
            stages: 0..cfg.blocks.len(),
            stem: true,
            scheme: cfg.algebra,
        };
        let encoder = Trunk::build(store, "encoder", &plan, rng)?;
        let c = encoder.out_channels;
        let refiner_left = Refiner::build(store, "refiner_left", cfg.n, c, cfg.refiners, cfg.algebra, rng)?;
        let refiner_right = Refiner::build(store, "refiner_right", cfg.n, c, cfg.refiners, cfg.algebra, rng)?;
        let head_left = Dense::new(store, "head_left", c, 1, rng)?;
        let head_right = Dense::new(store, "head_right", c, 1, rng)?;
        Ok(PhyseNet {
            encoder,
            refiner_left,
            refiner_right,
            head_left,
            head_right,
        })
    }

    pub(crate) fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, T>,
        left: Var<'t, T>,
        right: Var<'t, T>,
    ) -> Result<Forward<'t, T>> {
        let lo = self.encoder.forward(ctx, left)?;
        let ro = self.encoder.forward(ctx, right)?;
        let l = *lo.last().expect("stage");
        let r = *ro.last().expect("stage");
        let ll = self.head_left.forward(ctx, self.refiner_left.forward(ctx, l.global_avg_pool()?)?)?;
        let rl = self.head_right.forward(ctx, self.refiner_right.forward(ctx, r.global_avg_pool()?)?)?;
        Ok(Forward {
            logits: vec![ll, rl],
            taps: vec![("encoder", encoder_tap(&lo)), ("classifier", l)],
        })
    }
}

/// Two 3×3 PHC convolutions, each followed by batch norm and ReLU.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub layers: [(PhcConv, BatchNorm); 2],
}

impl DoubleConv {
    fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        n: usize,
        cin: usize,
        cout: usize,
        scheme: AlgebraInit,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut one = |i: usize, cin: usize| -> Result<(PhcConv, BatchNorm)> {
            let conv = PhcConv::new(store, &format!("{name}.conv{i}"), PhcSpec::new(n, cin, cout, 3), scheme, rng)?;
            let bn = BatchNorm::new(store, &format!("{name}.bn{i}"), cout)?;
            Ok((conv, bn))
        };
        let a = one(1, cin)?;
        let b = one(2, cout)?;
        Ok(DoubleConv { layers: [a, b] })
    }

    fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = x;
        for (conv, bn) in &self.layers {
            h = bn.forward(ctx, conv.forward(ctx, h)?)?.relu()?;
        }
        Ok(h)
    }
}

/// Encoder-decoder with concatenation skips. The decoder upsamples by
/// nearest-neighbour doubling followed by a 3×3 PHC convolution.
#[derive(Clone, Debug)]
pub struct PhUNet {
    pub depth: usize,
    pub encoders: Vec<DoubleConv>,
    pub bottom: DoubleConv,
    pub ups: Vec<(PhcConv, BatchNorm)>,
    pub decoders: Vec<DoubleConv>,
    pub out: PhcConv,
}

impl PhUNet {
    pub(crate) fn build<T: Scalar>(store: &mut ParamStore<T>, cfg: &PhUNetConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.depth == 0 {
            return Err(Error::config("phunet depth must be at least 1"));
        }
        let (n, w, s) = (cfg.n, cfg.width, cfg.algebra);
        let mut encoders = Vec::new();
        let mut cin = cfg.in_channels();
        for l in 0..cfg.depth {
            encoders.push(DoubleConv::build(store, &format!("enc{}", l + 1), n, cin, w << l, s, rng)?);
            cin = w << l;
        }
        let bottom = DoubleConv::build(store, "bottom", n, cin, w << cfg.depth, s, rng)?;
        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        for l in (0..cfg.depth).rev() {
            let spec = PhcSpec::new(n, w << (l + 1), w << l, 3);
            let conv = PhcConv::new(store, &format!("up{}.conv", l + 1), spec, s, rng)?;
            let bn = BatchNorm::new(store, &format!("up{}.bn", l + 1), w << l)?;
            ups.push((conv, bn));
            decoders.push(DoubleConv::build(store, &format!("dec{}", l + 1), n, 2 * (w << l), w << l, s, rng)?);
        }
        // one output channel cannot be split into n components
        let out_spec = PhcSpec::new(1, w, 1, 1).with_bias(true);
        let out = PhcConv::new(store, "out.conv", out_spec, AlgebraInit::Fixed, rng)?;
        Ok(PhUNet {
            depth: cfg.depth,
            encoders,
            bottom,
            ups,
            decoders,
            out,
        })
    }

    pub(crate) fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Forward<'t, T>> {
        let shape = x.shape();
        let m = 1usize << self.depth;
        if shape.len() != 4 || shape[2] % m != 0 || shape[3] % m != 0 {
            return Err(Error::shape(format!(
                "phunet input {shape:?}: spatial extents must be divisible by {m}"
            )));
        }
        let mut skips = Vec::with_capacity(self.depth);
        let mut h = x;
        for enc in &self.encoders {
            h = enc.forward(ctx, h)?;
            skips.push(h);
            h = h.max_pool2x2()?;
        }
        h = self.bottom.forward(ctx, h)?;
        let bottom = h;
        for ((conv, bn), dec) in self.ups.iter().zip(&self.decoders) {
            let up = bn.forward(ctx, conv.forward(ctx, h.upsample2x()?)?)?.relu()?;
            let skip = skips.pop().expect("one skip per level");
            h = dec.forward(ctx, Var::concat_channels(&[up, skip])?)?;
        }
        let logits = self.out.forward(ctx, h)?;
        Ok(Forward {
            logits: vec![logits],
            taps: vec![("encoder", bottom), ("classifier", h)],
        })
    }

    pub fn phc_layers(&self) -> Vec<&PhcConv> {
        let mut v = Vec::new();
        for d in self.encoders.iter().chain([&self.bottom]) {
            v.extend(d.layers.iter().map(|(c, _)| c));
        }
        for ((c, _), d) in self.ups.iter().zip(&self.decoders) {
            v.push(c);
            v.extend(d.layers.iter().map(|(c, _)| c));
        }
        v.push(&self.out);
        v
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        let mut v = Vec::new();
        for d in self.encoders.iter().chain([&self.bottom]) {
            v.extend(d.layers.iter().map(|(_, b)| b));
        }
        for ((_, b), d) in self.ups.iter().zip(&self.decoders) {
            v.push(b);
            v.extend(d.layers.iter().map(|(_, b)| b));
        }
        v
    }
}
