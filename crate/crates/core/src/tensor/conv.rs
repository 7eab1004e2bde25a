//! 2D cross-correlation through im2col + GEMM.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvGeometry {
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry::new(1, 0)
    }
}

/// `floor((extent + 2·pad − kernel) / stride) + 1`, or `None` when empty.
pub fn conv_output_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || extent + 2 * pad < kernel {
        return None;
    }
    Some((extent + 2 * pad - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Plan {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeometry,
}

impl Plan {
    fn new<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, geom: ConvGeometry) -> Result<Plan> {
        let (n, cin, h, w) = input.dims4()?;
        let (cout, wcin, kh, kw) = weight.dims4()?;
        if cin != wcin {
            return Err(Error::shape(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        let ho = conv_output_extent(h, kh, geom.stride.0, geom.padding.0);
        let wo = conv_output_extent(w, kw, geom.stride.1, geom.padding.1);
        match (ho, wo) {
            (Some(ho), Some(wo)) if ho >= 1 && wo >= 1 => Ok(Plan {
                n,
                cin,
                h,
                w,
                cout,
                kh,
                kw,
                ho,
                wo,
                geom,
            }),
            _ => Err(Error::shape(format!(
                "conv2d: empty output for input {:?}, kernel {kh}x{kw}, {geom:?}",
                input.shape()
            ))),
        }
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Samples per GEMM: small feature maps are batched until the GEMM is
    /// a few hundred columns wide, large ones go one at a time.
    fn chunk(&self) -> usize {
        const COLUMNS: usize = 512;
        COLUMNS.div_ceil(self.p()).clamp(1, self.n)
    }

    /// Output columns `ox` whose input column `ox·s + kj − pad` is in range.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let (s, pad) = (self.geom.stride.1, self.geom.padding.1);
        // smallest ox with ox·s + kj ≥ pad
        let lo = pad.saturating_sub(kj).div_ceil(s);
        // largest ox with ox·s + kj − pad ≤ w − 1
        let hi = if self.w + pad > kj {
            ((self.w + pad - kj - 1) / s + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Unrolls one sample's receptive fields into columns `off..off+P` of a
    /// column matrix with `ld` columns and `K` rows.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T], ld: usize, off: usize) {
        let (sy, sx) = self.geom.stride;
        let (py, px) = self.geom.padding;
        let p = self.p();
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * ld + off..row * ld + off + p];
                    for oy in 0..self.ho {
                        let iy = (oy * sy + ki) as isize - py as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let (lo, hi) = self.valid_cols(kj);
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        let first = lo * sx + kj - px;
                        if sx == 1 {
                            line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (out, &v) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(sx)) {
                                *out = v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Plan::im2col`]: scatter-adds columns back into an image.
    fn col2im<T: Scalar>(&self, cols: &[T], ld: usize, off: usize, dx: &mut [T]) {
        let (sy, sx) = self.geom.stride;
        let (py, px) = self.geom.padding;
        let p = self.p();
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * ld + off..row * ld + off + p];
                    for oy in 0..self.ho {
                        let iy = (oy * sy + ki) as isize - py as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let line = &src[oy * self.wo..(oy + 1) * self.wo];
                        let (lo, hi) = self.valid_cols(kj);
                        let first = lo * sx + kj - px;
                        if sx == 1 {
                            for (d, &v) in dst[first..first + hi - lo].iter_mut().zip(&line[lo..hi]) {
                                *d = *d + v;
                            }
                        } else {
                            for (d, &v) in dst[first..].iter_mut().step_by(sx).zip(&line[lo..hi]) {
                                *d = *d + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `(N,Cin,H,W)` with `(Cout,Cin,Kh,Kw)`, no kernel flip.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let plan = Plan::new(input, weight, geom)?;
    if let Some(b) = bias {
        if b.shape() != [plan.cout] {
            return Err(Error::shape(format!(
                "conv2d: bias shape {:?}, expected [{}]",
                b.shape(),
                plan.cout
            )));
        }
    }
    let (k, p, cout) = (plan.k(), plan.p(), plan.cout);
    let in_len = plan.cin * plan.h * plan.w;
    let chunk = plan.chunk();
    let mut out = vec![T::zero(); plan.n * cout * p];
    let mut cols = vec![T::zero(); k * chunk * p];
    let mut y = vec![T::zero(); if chunk > 1 { cout * chunk * p } else { 0 }];
    for first in (0..plan.n).step_by(chunk) {
        let b = chunk.min(plan.n - first);
        let ld = b * p;
        for j in 0..b {
            let x = &input.data()[(first + j) * in_len..(first + j + 1) * in_len];
            plan.im2col(x, &mut cols, ld, j * p);
        }
        // Y (Cout, B·P) = W (Cout, K) · cols (K, B·P)
        if b == 1 {
            let dst = &mut out[first * cout * p..(first + 1) * cout * p];
            T::gemm(cout, k, p, T::one(), weight.data(), [k, 1], &cols[..k * p], [p, 1], T::zero(), dst, [p, 1]);
            if let Some(bias) = bias {
                for (co, row) in dst.chunks_mut(p).enumerate() {
                    let bv = bias.data()[co];
                    row.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
            continue;
        }
        T::gemm(cout, k, ld, T::one(), weight.data(), [k, 1], &cols[..k * ld], [ld, 1], T::zero(), &mut y[..cout * ld], [ld, 1]);
        for j in 0..b {
            for co in 0..cout {
                let dst = &mut out[((first + j) * cout + co) * p..((first + j) * cout + co + 1) * p];
                dst.copy_from_slice(&y[co * ld + j * p..co * ld + (j + 1) * p]);
                if let Some(bias) = bias {
                    let bv = bias.data()[co];
                    dst.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![plan.n, cout, plan.ho, plan.wo], out))
}

/// Row-major `(rows, cols)` to `(cols, rows)` in cache-sized tiles.
fn transpose_into<T: Scalar>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

pub struct Conv2dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
}

/// Vector-Jacobian products of [`conv2d`] with respect to input and weight.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
    want_input: bool,
    want_weight: bool,
) -> Result<Conv2dGrads<T>> {
    let plan = Plan::new(input, weight, geom)?;
    let expected = [plan.n, plan.cout, plan.ho, plan.wo];
    if grad_out.shape() != expected {
        return Err(Error::shape(format!(
            "conv2d_backward: upstream gradient {:?}, expected {expected:?}",
            grad_out.shape()
        )));
    }
    let (k, p, cout) = (plan.k(), plan.p(), plan.cout);
    let in_len = plan.cin * plan.h * plan.w;
    let chunk = plan.chunk();
    let mut dw = want_weight.then(|| vec![T::zero(); cout * k]);
    let mut dx = want_input.then(|| vec![T::zero(); plan.n * in_len]);
    let mut cols = vec![T::zero(); k * chunk * p];
    let mut cols_t = vec![T::zero(); if want_weight { k * chunk * p } else { 0 }];
    let mut gbuf = vec![T::zero(); if chunk > 1 { cout * chunk * p } else { 0 }];
    for first in (0..plan.n).step_by(chunk) {
        let b = chunk.min(plan.n - first);
        let ld = b * p;
        let g: &[T] = if b == 1 {
            &grad_out.data()[first * cout * p..(first + 1) * cout * p]
        } else {
            for j in 0..b {
                for co in 0..cout {
                    let src = &grad_out.data()[((first + j) * cout + co) * p..((first + j) * cout + co + 1) * p];
                    gbuf[co * ld + j * p..co * ld + (j + 1) * p].copy_from_slice(src);
                }
            }
            &gbuf[..cout * ld]
        };
        if let Some(dw) = dw.as_mut() {
            for j in 0..b {
                let x = &input.data()[(first + j) * in_len..(first + j + 1) * in_len];
                plan.im2col(x, &mut cols, ld, j * p);
            }
            // dW += dY (Cout, B·P) · colsᵀ (B·P, K); the explicit transpose
            // keeps both GEMM operands row-major, which packs far faster
            transpose_into(&cols[..k * ld], k, ld, &mut cols_t[..k * ld]);
            T::gemm(cout, ld, k, T::one(), g, [ld, 1], &cols_t[..k * ld], [k, 1], T::one(), dw, [k, 1]);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ (K, Cout) · dY (Cout, B·P)
            T::gemm(k, cout, ld, T::one(), weight.data(), [1, k], g, [ld, 1], T::zero(), &mut cols[..k * ld], [ld, 1]);
            for j in 0..b {
                plan.col2im(&cols, ld, j * p, &mut dx[(first + j) * in_len..(first + j + 1) * in_len]);
            }
        }
    }
    Ok(Conv2dGrads {
        input: dx.map(|d| Tensor::from_parts(input.shape().to_vec(), d)),
        weight: dw.map(|d| Tensor::from_parts(weight.shape().to_vec(), d)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::reference::conv2d_direct;

    #[test]
    fn pointwise_scaling() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f32>::full(&[1, 1, 1, 1], 2.0);
        let y = conv2d(&x, &w, None, ConvGeometry::new(1, 0)).unwrap();
        assert_eq!(y, Tensor::full(&[1, 1, 3, 3], 2.0));
    }

    #[test]
    fn box_filter_sums_windows() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f32>::ones(&[1, 1, 2, 2]);
        let y = conv2d(&x, &w, None, ConvGeometry::new(1, 0)).unwrap();
        assert_eq!(y, Tensor::full(&[1, 1, 2, 2], 4.0));
        assert_eq!(y, conv2d_direct(&x, &w, None, ConvGeometry::new(1, 0)).unwrap());
    }

    #[test]
    fn centered_delta_kernel_is_identity() {
        let mut rng = crate::rng::seeded(11);
        let x = Tensor::<f32>::randn(&[2, 3, 5, 4], &mut rng);
        let mut w = Tensor::<f32>::zeros(&[3, 3, 3, 3]);
        for c in 0..3 {
            w.data_mut()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        let y = conv2d(&x, &w, None, ConvGeometry::new(1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn bias_and_shape_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[3, 2, 3, 3]);
        let b = Tensor::<f32>::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let y = conv2d(&x, &w, Some(&b), ConvGeometry::new(2, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 2]);
        assert_eq!(&y.data()[4..8], &[2.0; 4]);
        let bad = Tensor::<f32>::zeros(&[3, 1, 3, 3]);
        assert!(matches!(
            conv2d(&x, &bad, None, ConvGeometry::default()),
            Err(Error::Shape(_))
        ));
        let big = Tensor::<f32>::zeros(&[3, 2, 5, 5]);
        assert!(conv2d(&x, &big, None, ConvGeometry::default()).is_err());
    }

    #[test]
    fn im2col_matches_direct_on_strided_padded_cases() {
        let mut rng = crate::rng::seeded(5);
        for &(stride, pad, k) in &[(1, 0, 3), (2, 1, 3), (1, 1, 1), (2, 0, 1), (3, 2, 5)] {
            let x = Tensor::<f64>::randn(&[2, 3, 9, 7], &mut rng);
            let w = Tensor::<f64>::randn(&[4, 3, k, k], &mut rng);
            let b = Tensor::<f64>::randn(&[4], &mut rng);
            let g = ConvGeometry::new(stride, pad);
            let fast = conv2d(&x, &w, Some(&b), g).unwrap();
            let slow = conv2d_direct(&x, &w, Some(&b), g).unwrap();
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x, w), g> == <x, dX(g)> == <w, dW(g)> by bilinearity.
        let mut rng = crate::rng::seeded(9);
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1)] {
            let x = Tensor::<f64>::randn(&[2, 2, 6, 5], &mut rng);
            let w = Tensor::<f64>::randn(&[3, 2, k, k], &mut rng);
            let geom = ConvGeometry::new(stride, pad);
            let y = conv2d(&x, &w, None, geom).unwrap();
            let g = Tensor::<f64>::randn(y.shape(), &mut rng);
            let grads = conv2d_backward(&x, &w, &g, geom, true, true).unwrap();
            let lhs = y.mul(&g).unwrap().sum();
            let via_x = x.mul(grads.input.as_ref().unwrap()).unwrap().sum();
            let via_w = w.mul(grads.weight.as_ref().unwrap()).unwrap().sum();
            assert!((lhs - via_x).abs() < 1e-9 * lhs.abs().max(1.0));
            assert!((lhs - via_w).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }
}
