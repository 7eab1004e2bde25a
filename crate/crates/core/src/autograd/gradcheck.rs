use rand::seq::index::sample;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Tensors with more elements are checked on this many sampled
    /// coordinates; smaller tensors are checked exhaustively.
    pub coords_per_param: usize,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is ~0 are judged on absolute error.
    pub denominator_floor: f64,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn f64() -> Self {
        GradCheckOptions {
            step: 1e-6,
            tolerance: 1e-5,
            coords_per_param: 64,
            denominator_floor: 1e-3,
            seed: 0,
        }
    }

    pub fn f32() -> Self {
        GradCheckOptions {
            step: 1e-2,
            tolerance: 1e-3,
            coords_per_param: 64,
            denominator_floor: 1e-1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    /// Max relative error per checked tensor, in argument order.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub coords_checked: usize,
    pub pass: bool,
}

fn eval<T, F>(f: &F, values: &[Tensor<T>]) -> Result<f64>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_, T>> = values.iter().map(|v| tape.input(v.clone())).collect();
    let out = f(&tape, &vars)?.item()?.as_f64();
    if !out.is_finite() {
        return Err(Error::Numeric("grad_check: non-finite function value".into()));
    }
    Ok(out)
}

/// Compares reverse-mode gradients of `f` at `params` with central
/// differences `(f(θ+h) − f(θ−h)) / 2h`.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], opts: &GradCheckOptions) -> Result<GradReport>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let analytic: Vec<Tensor<T>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_, T>> = params.iter().map(|v| tape.input(v.clone())).collect();
        let loss = f(&tape, &vars)?;
        if !loss.item()?.is_finite() {
            return Err(Error::Numeric("grad_check: non-finite function value".into()));
        }
        let grads = tape.backward(loss)?;
        vars.iter()
            .zip(params)
            .map(|(v, p)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros_like(p)))
            .collect()
    };

    let mut rng = crate::rng::seeded(opts.seed);
    let mut per_param = Vec::with_capacity(params.len());
    let mut coords_checked = 0;
    let mut values = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        let len = params[pi].len();
        let coords: Vec<usize> = if len <= opts.coords_per_param {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst: f64 = 0.0;
        for &idx in &coords {
            let orig = values[pi].data()[idx];
            values[pi].data_mut()[idx] = T::of(orig.as_f64() + opts.step);
            let plus = eval(&f, &values)?;
            values[pi].data_mut()[idx] = T::of(orig.as_f64() - opts.step);
            let minus = eval(&f, &values)?;
            values[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.data()[idx].as_f64();
            let denom = a.abs().max(numeric.abs()).max(opts.denominator_floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
        coords_checked += coords.len();
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradReport {
        pass: max_rel_error <= opts.tolerance,
        per_param,
        max_rel_error,
        tolerance: opts.tolerance,
        coords_checked,
    })
}
