//! Real-valued layers around the PHC convolutions, losses and optimizer.

mod block;
mod loss;
mod optim;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{Ctx, ParamId, ParamKind, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub use block::{BlockKind, ResidualBlock};
pub use loss::{bce_loss, cross_entropy, soft_dice_loss};
pub use optim::{Adam, AdamConfig, Decision, EarlyStopper, Mode};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization with running statistics stored as
/// buffers `{name}.running_mean` / `{name}.running_var`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let c = [channels];
        Ok(BatchNorm {
            channels,
            gamma: store.insert(&format!("{name}.gamma"), Tensor::ones(&c), ParamKind::Trainable)?,
            beta: store.insert(&format!("{name}.beta"), Tensor::zeros(&c), ParamKind::Trainable)?,
            running_mean: store.insert(&format!("{name}.running_mean"), Tensor::zeros(&c), ParamKind::Buffer)?,
            running_var: store.insert(&format!("{name}.running_var"), Tensor::ones(&c), ParamKind::Buffer)?,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        })
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    /// Train mode normalizes with batch statistics and records the updated
    /// running statistics on the tape; eval mode uses the stored ones.
    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let eps = T::of(self.eps);
        if ctx.train {
            let (y, stats) = x.batch_norm(gamma, beta, None, eps)?;
            let (mean, var) = stats.ok_or_else(|| Error::Contract("batch statistics missing".into()))?;
            let m = T::of(self.momentum);
            let blend = |old: Tensor<T>, new: &[T]| -> Result<Tensor<T>> {
                let data = old
                    .data()
                    .iter()
                    .zip(new)
                    .map(|(&o, &b)| (T::one() - m) * o + m * b)
                    .collect();
                Tensor::new(old.shape(), data)
            };
            let rm = blend(ctx.buffer(self.running_mean), &mean)?;
            let rv = blend(ctx.buffer(self.running_var), &var)?;
            ctx.tape.record_buffer_update(self.running_mean, rm);
            ctx.tape.record_buffer_update(self.running_var, rv);
            Ok(y)
        } else {
            let rm = ctx.buffer(self.running_mean);
            let rv = ctx.buffer(self.running_var);
            Ok(x.batch_norm(gamma, beta, Some((rm.data(), rv.data())), eps)?.0)
        }
    }
}

/// Real-valued fully connected layer, `y = x·Wᵀ + b`, `W: (out, in)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub din: usize,
    pub dout: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize, rng: &mut Rng) -> Result<Self> {
        if din == 0 || dout == 0 {
            return Err(Error::config("dense layer extents must be positive"));
        }
        let bound = 1.0 / (din as f64).sqrt();
        Ok(Dense {
            din,
            dout,
            w: store.insert(
                &format!("{name}.weight"),
                Tensor::rand_uniform(&[dout, din], -bound, bound, rng),
                ParamKind::Trainable,
            )?,
            b: store.insert(&format!("{name}.bias"), Tensor::zeros(&[dout]), ParamKind::Trainable)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.din * self.dout + self.dout
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul_bt(ctx.param(self.w))?.add_channel_bias(ctx.param(self.b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 3).unwrap();
        let mut rng = crate::rng::seeded(1);
        let x = Tensor::randn(&[8, 3, 4, 4], &mut rng).scale(3.0).map(|v| v + 2.0);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, true);
        let y = bn.forward(&ctx, tape.constant(x)).unwrap().value();
        for c in 0..3 {
            let vals: Vec<f64> = (0..8)
                .flat_map(|b| y.data()[(b * 3 + c) * 16..(b * 3 + c + 1) * 16].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
        let x = Tensor::from_f64(&[4, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let tape = Tape::new();
        bn.forward(&Ctx::new(&tape, &store, true), tape.constant(x.clone())).unwrap();
        store.apply_buffer_updates(tape.take_buffer_updates()).unwrap();
        assert!((store.get(bn.running_mean).data()[0] - 0.25).abs() < 1e-12);
        // unbiased batch variance 5/3
        assert!((store.get(bn.running_var).data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        // eval mode reads them back and records nothing
        let tape = Tape::new();
        let y = bn.forward(&Ctx::new(&tape, &store, false), tape.constant(x)).unwrap().value();
        assert!(tape.take_buffer_updates().is_empty());
        let rv: f64 = store.get(bn.running_var).data()[0];
        assert!((y.data()[0] - (1.0 - 0.25) / (rv + 1e-5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dense_shapes() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = crate::rng::seeded(2);
        let d = Dense::new(&mut store, "fc", 6, 2, &mut rng).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, false);
        let y = d.forward(&ctx, tape.constant(Tensor::ones(&[5, 6]))).unwrap();
        assert_eq!(y.shape(), vec![5, 2]);
        assert_eq!(d.param_count(), 14);
    }
}
