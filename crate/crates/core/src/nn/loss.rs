use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean weighted binary cross-entropy on logits `(N, heads)`.
pub fn bce_loss<'t, T: Scalar>(logits: Var<'t, T>, targets: &Tensor<T>, pos_weight: f64) -> Result<Var<'t, T>> {
    if !(pos_weight >= 0.0) || !pos_weight.is_finite() {
        return Err(Error::config(format!("pos_weight must be finite and ≥ 0, got {pos_weight}")));
    }
    logits.bce_with_logits(targets, T::of(pos_weight))
}

/// Mean negative log-likelihood of the true class under softmax.
pub fn cross_entropy<'t, T: Scalar>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    logits.cross_entropy(labels)
}

/// `1 − (2·Σpt + 1) / (Σp + Σt + 1)` on probabilities.
pub fn soft_dice_loss<'t, T: Scalar>(probs: Var<'t, T>, targets: &Tensor<T>) -> Result<Var<'t, T>> {
    let tape = probs.tape();
    let t = tape.constant(targets.clone());
    let inter = probs.mul(t)?.sum().scale(T::of(2.0)).add_scalar(T::one());
    let total = probs.sum().add_scalar(targets.sum() + T::one());
    Ok(inter.div(total)?.scale(-T::one()).add_scalar(T::one()))
}
