//! Per-sample geometric augmentation shared by all views and the mask.

use rand::Rng as _;

use crate::error::Result;
use crate::rng::seeded;
use crate::tensor::Tensor;

pub const MAX_ROTATION_DEG: f64 = 25.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AugmentParams {
    pub angle_deg: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentParams {
    pub fn sample(seed: u64) -> Self {
        let mut rng = seeded(seed);
        AugmentParams {
            angle_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.angle_deg == 0.0 && !self.hflip && !self.vflip
    }
}

/// Bilinear rotation of one `h×w` plane about its center, zero outside.
pub fn rotate_plane(src: &[f32], h: usize, w: usize, angle_deg: f64) -> Vec<f32> {
    if angle_deg == 0.0 {
        return src.to_vec();
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            0.0
        } else {
            src[y as usize * w + x as usize] as f64
        }
    };
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            // inverse map: where does output pixel (x, y) come from
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let sx = c * dx + s * dy + cx - 0.5;
            let sy = -s * dx + c * dy + cy - 0.5;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + at(x0 + 1, y0) * fx * (1.0 - fy)
                + at(x0, y0 + 1) * (1.0 - fx) * fy
                + at(x0 + 1, y0 + 1) * fx * fy;
            out[y * w + x] = v as f32;
        }
    }
    out
}

fn flip(plane: &mut [f32], h: usize, w: usize, horizontal: bool) {
    if horizontal {
        for row in plane.chunks_mut(w) {
            row.reverse();
        }
    } else {
        for y in 0..h / 2 {
            for x in 0..w {
                plane.swap(y * w + x, (h - 1 - y) * w + x);
            }
        }
    }
}

/// Applies `p` to every plane of a `(V, H, W)` tensor.
pub fn apply(t: &Tensor<f32>, p: &AugmentParams) -> Result<Tensor<f32>> {
    if p.is_identity() {
        return Ok(t.clone());
    }
    let shape = t.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut data = Vec::with_capacity(t.len());
    for src in t.data().chunks(h * w) {
        let mut plane = rotate_plane(src, h, w, p.angle_deg);
        if p.hflip {
            flip(&mut plane, h, w, true);
        }
        if p.vflip {
            flip(&mut plane, h, w, false);
        }
        data.extend(plane);
    }
    Tensor::new(shape, data)
}

/// Augments views and mask with one draw of parameters from `seed`; the
/// mask is re-binarized at 0.5 after interpolation.
pub fn augment(views: &Tensor<f32>, mask: Option<&Tensor<f32>>, seed: u64) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
    let p = AugmentParams::sample(seed);
    let v = apply(views, &p)?;
    let m = match mask {
        Some(m) => Some(apply(m, &p)?.map(|x| if x >= 0.5 { 1.0 } else { 0.0 })),
        None => None,
    };
    Ok((v, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{render_synthetic, SyntheticSpec};

    fn image() -> Tensor<f32> {
        let mut rng = seeded(3);
        Tensor::rand_uniform(&[2, 12, 10], 0.0, 1.0, &mut rng)
    }

    #[test]
    fn zero_angle_without_flips_is_identity() {
        let t = image();
        assert_eq!(apply(&t, &AugmentParams::default()).unwrap(), t);
    }

    #[test]
    fn double_flip_is_identity() {
        let t = image();
        for p in [
            AugmentParams { hflip: true, ..Default::default() },
            AugmentParams { vflip: true, ..Default::default() },
        ] {
            let once = apply(&t, &p).unwrap();
            assert_ne!(once, t);
            assert_eq!(apply(&once, &p).unwrap(), t);
        }
    }

    #[test]
    fn horizontal_flip_mirrors_columns() {
        let t = Tensor::<f32>::from_f64(&[1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let f = apply(&t, &AugmentParams { hflip: true, ..Default::default() }).unwrap();
        assert_eq!(f.data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        let v = apply(&t, &AugmentParams { vflip: true, ..Default::default() }).unwrap();
        assert_eq!(v.data(), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn quarter_turn_permutes_pixels() {
        let t = Tensor::<f32>::from_f64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = apply(&t, &AugmentParams { angle_deg: 90.0, ..Default::default() }).unwrap();
        let mut got: Vec<f32> = r.data().iter().map(|v| (v * 1e4).round() / 1e4).collect();
        got.sort_by(f32::total_cmp);
        assert_eq!(got, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rotation_there_and_back_is_close() {
        // a smooth image with empty borders, as interpolation error and
        // zero fill are the only expected differences
        let r = render_synthetic(&SyntheticSpec { count: 4, noise: 0.0, seed: 2, ..Default::default() }).unwrap();
        for s in &r.dataset.samples {
            let fwd = apply(&s.views, &AugmentParams { angle_deg: 25.0, ..Default::default() }).unwrap();
            let back = apply(&fwd, &AugmentParams { angle_deg: -25.0, ..Default::default() }).unwrap();
            let (h, w) = (32usize, 32usize);
            // compare the inscribed disk, which never leaves the frame
            let mut sum = 0.0;
            let mut n = 0;
            for (i, (a, b)) in s.views.data().iter().zip(back.data()).enumerate() {
                let (y, x) = ((i / w) % h, i % w);
                let d = ((x as f64 + 0.5 - 16.0).powi(2) + (y as f64 + 0.5 - 16.0).powi(2)).sqrt();
                if d < 14.0 {
                    sum += (a - b).abs() as f64;
                    n += 1;
                }
            }
            assert!(sum / (n as f64) < 0.02, "{}", sum / n as f64);
        }
    }

    #[test]
    fn mask_area_survives_rotation() {
        let r = render_synthetic(&SyntheticSpec { count: 20, seed: 8, ..Default::default() }).unwrap();
        for (i, s) in r.dataset.samples.iter().enumerate() {
            let m = s.masks.as_ref().unwrap();
            let (_, am) = augment(&s.views, Some(m), i as u64).unwrap();
            let before = m.sum();
            let after = am.unwrap().sum();
            assert!((after - before).abs() <= 0.1 * before, "{before} -> {after}");
        }
    }

    #[test]
    fn sampled_angles_stay_in_range() {
        for seed in 0..200 {
            let p = AugmentParams::sample(seed);
            assert!(p.angle_deg.abs() <= MAX_ROTATION_DEG);
        }
    }
}
