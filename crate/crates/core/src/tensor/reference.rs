//! Slow, obviously-correct kernels kept as oracles for the fast paths.

use super::{conv_output_extent, ConvGeometry, Scalar, Tensor};
use crate::error::{Error, Result};

/// Direct sliding-window cross-correlation.
pub fn conv2d_direct<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if cin != wcin {
        return Err(Error::shape("conv2d_direct: channel mismatch"));
    }
    let ho = conv_output_extent(h, kh, geom.stride.0, geom.padding.0)
        .ok_or_else(|| Error::shape("conv2d_direct: empty output"))?;
    let wo = conv_output_extent(w, kw, geom.stride.1, geom.padding.1)
        .ok_or_else(|| Error::shape("conv2d_direct: empty output"))?;
    let x = input.data();
    let k = weight.data();
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let o = out.data_mut();
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(T::zero(), |bv| bv.data()[co]);
                    for ci in 0..cin {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy * geom.stride.0 + ki) as isize - geom.padding.0 as isize;
                                let ix = (ox * geom.stride.1 + kj) as isize - geom.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * cin + ci) * h + iy as usize) * w + ix as usize];
                                let kv = k[((co * cin + ci) * kh + ki) * kw + kj];
                                acc = acc + xv * kv;
                            }
                        }
                    }
                    o[((b * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}
