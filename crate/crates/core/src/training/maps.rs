//! Saliency and activation maps.

use std::path::{Path, PathBuf};

use super::batch::split_inputs;
use crate::autograd::{Tape, Var};
use crate::data::{save_image, Sample};
use crate::error::{Error, Result};
use crate::models::{Model, TAPS};
use crate::tensor::{Scalar, Tensor};

/// `|∂f/∂x|` for a scalar-valued `f`.
pub fn input_saliency<T, F>(x: &Tensor<T>, f: F) -> Result<Tensor<T>>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::frozen();
    let v = tape.input(x.clone());
    let out = f(&tape, v)?;
    let g = tape.backward(out)?;
    Ok(g.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros_like(x)).map(|d| d.abs()))
}

/// Min-max scaling to `[0, 1]`; a flat map becomes all zeros.
pub fn normalize(t: &Tensor<f32>) -> Tensor<f32> {
    let (lo, hi) = t
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Tensor::zeros(t.shape());
    }
    t.map(|v| (v - lo) / (hi - lo))
}

/// Bilinear resize of an `h×w` plane to `oh×ow` (pixel-center aligned).
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = ((y as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let (y0, fy) = (sy.floor() as usize, sy - sy.floor());
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..ow {
            let sx = ((x as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let (x0, fx) = (sx.floor() as usize, sx - sx.floor());
            let x1 = (x0 + 1).min(w - 1);
            let v = src[y0 * w + x0] as f64 * (1.0 - fx) * (1.0 - fy)
                + src[y0 * w + x1] as f64 * fx * (1.0 - fy)
                + src[y1 * w + x0] as f64 * (1.0 - fx) * fy
                + src[y1 * w + x1] as f64 * fx * fy;
            out.push(v as f32);
        }
    }
    out
}

fn input_vars<'t>(tape: &'t Tape<f32>, model: &Model<f32>, views: &Tensor<f32>) -> Result<Vec<Var<'t, f32>>> {
    split_inputs(views, model.config.inputs())?
        .into_iter()
        .map(|t| {
            let s = t.shape().to_vec();
            Ok(tape.input(t.into_reshape(&[1, s[0], s[1], s[2]])?))
        })
        .collect()
}

/// Per model input, `|∂ max-logit / ∂ x|` summed over view channels, as
/// `(H, W)` (not normalized).
pub fn saliency(model: &Model<f32>, views: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
    let tape = Tape::frozen();
    let xs = input_vars(&tape, model, views)?;
    let out = model.forward(&tape, &xs, false)?;
    // the single largest output across heads (or pixels)
    let (mut best, mut at) = (f32::NEG_INFINITY, (0, 0));
    for (h, z) in out.logits.iter().enumerate() {
        z.with_value(|v| {
            for (i, &x) in v.data().iter().enumerate() {
                if x > best {
                    best = x;
                    at = (h, i);
                }
            }
        });
    }
    let z = out.logits[at.0];
    let mut pick = Tensor::zeros(&z.shape());
    pick.data_mut()[at.1] = 1.0;
    let target = z.mul(tape.constant(pick))?.sum();
    let g = tape.backward(target)?;
    xs.iter()
        .map(|x| {
            let s = x.shape();
            let (c, h, w) = (s[1], s[2], s[3]);
            let grad = g.wrt(*x).cloned().unwrap_or_else(|| Tensor::zeros(&s));
            let mut acc = vec![0.0f32; h * w];
            for ch in 0..c {
                for (a, v) in acc.iter_mut().zip(&grad.data()[ch * h * w..(ch + 1) * h * w]) {
                    *a += v.abs();
                }
            }
            Tensor::new(&[h, w], acc)
        })
        .collect()
}

/// Channel mean of a tap, upsampled to the input extent, as `(H, W)`.
pub fn activation_map(model: &Model<f32>, views: &Tensor<f32>, tap: &str) -> Result<Tensor<f32>> {
    if !TAPS.contains(&tap) {
        return Err(Error::Contract(format!("unknown tap {tap:?}; expected one of {TAPS:?}")));
    }
    let tape = Tape::frozen();
    let xs = input_vars(&tape, model, views)?;
    let out = model.forward(&tape, &xs, false)?;
    let t = out.tap(tap)?.value();
    let (_, c, h, w) = t.dims4()?;
    let mut mean = vec![0.0f32; h * w];
    for ch in 0..c {
        for (m, v) in mean.iter_mut().zip(&t.data()[ch * h * w..(ch + 1) * h * w]) {
            *m += v / c as f32;
        }
    }
    let (oh, ow) = (views.shape()[1], views.shape()[2]);
    Tensor::new(&[oh, ow], resize_bilinear(&mean, h, w, oh, ow))
}

fn as_image(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w) = t.dims2()?;
    normalize(t).into_reshape(&[1, h, w])
}

/// Writes the saliency map of each model input and the activation map of
/// each tap of `sample` into `dir` as 8-bit PGM.
pub fn export_maps(model: &Model<f32>, sample: &Sample, dir: &Path, taps: &[&str]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let sal = saliency(model, &sample.views)?;
    for (i, s) in sal.iter().enumerate() {
        let name = if sal.len() == 1 {
            format!("{}_saliency.pgm", sample.id)
        } else {
            format!("{}_saliency_side{i}.pgm", sample.id)
        };
        let p = dir.join(name);
        save_image(&p, &as_image(s)?)?;
        written.push(p);
    }
    for tap in taps {
        let m = activation_map(model, &sample.views, tap)?;
        let p = dir.join(format!("{}_{tap}.pgm", sample.id));
        save_image(&p, &as_image(&m)?)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, PhResNetConfig};

    fn model() -> Model<f32> {
        let cfg = ModelConfig::Phresnet(PhResNetConfig { width: 8, blocks: vec![1, 1], refiners: 1, ..Default::default() });
        Model::build(&cfg, 4).unwrap()
    }

    #[test]
    fn linear_model_saliency_is_uniform_abs_weight() {
        let mut rng = crate::rng::seeded(1);
        let x = Tensor::<f64>::randn(&[1, 2, 5, 5], &mut rng);
        let w = -0.7;
        let s = input_saliency(&x, |_, v| Ok(v.scale(w).sum())).unwrap();
        assert!(s.data().iter().all(|&g| (g - 0.7).abs() < 1e-15));
    }

    #[test]
    fn zero_weight_model_gives_flat_maps() {
        let mut m = model();
        for id in m.store.trainable_ids() {
            let z = Tensor::zeros(m.store.get(id).shape());
            m.store.set(id, z).unwrap();
        }
        let views = Tensor::full(&[2, 16, 16], 0.5);
        for s in saliency(&m, &views).unwrap() {
            assert!(s.data().iter().all(|&v| v == s.data()[0]));
        }
        for tap in TAPS {
            let a = activation_map(&m, &views, tap).unwrap();
            assert!(a.data().iter().all(|&v| v == a.data()[0]));
            assert!(normalize(&a).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unknown_tap_is_rejected() {
        let views = Tensor::full(&[2, 16, 16], 0.5);
        assert!(matches!(activation_map(&model(), &views, "stem"), Err(Error::Contract(_))));
    }

    #[test]
    fn export_writes_input_sized_pgms() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = crate::rng::seeded(2);
        let sample = Sample {
            id: "x".into(),
            views: Tensor::rand_uniform(&[2, 16, 16], 0.0, 1.0, &mut rng),
            labels: vec![1],
            class: None,
            masks: None,
        };
        let files = export_maps(&model(), &sample, dir.path(), &TAPS).unwrap();
        assert_eq!(files.len(), 3);
        for f in files {
            assert_eq!(crate::data::load_image(&f).unwrap().shape(), &[1, 16, 16]);
        }
    }

    #[test]
    fn resize_of_constant_is_constant() {
        let out = resize_bilinear(&[2.0; 4], 2, 2, 7, 5);
        assert!(out.iter().all(|&v| (v - 2.0).abs() < 1e-6));
    }
}
