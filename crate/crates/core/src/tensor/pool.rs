use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Mean over each `H×W` plane: `(N,C,H,W) -> (N,C)`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    let inv = T::of(1.0 / plane as f64);
    let data = input
        .data()
        .chunks(plane)
        .map(|p| {
            // constant planes map to the constant exactly
            let first = p[0];
            if p.iter().all(|&v| v == first) {
                first
            } else {
                p.iter().fold(T::zero(), |a, &v| a + v) * inv
            }
        })
        .collect();
    Ok(Tensor::from_parts(vec![n, c], data))
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index that won.
pub fn max_pool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "max_pool2x2 needs even extents, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, ho, wo], out), arg))
}

/// Nearest-neighbour ×2 upsampling of the two spatial axes.
pub fn upsample_nearest2x<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let (ho, wo) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        for oy in 0..ho {
            let row = &x[plane * h * w + (oy / 2) * w..plane * h * w + (oy / 2 + 1) * w];
            for ox in 0..wo {
                out.push(row[ox / 2]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, ho, wo], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_examples() {
        let c = Tensor::<f32>::full(&[2, 3, 4, 5], 0.3);
        assert_eq!(global_avg_pool(&c).unwrap(), Tensor::full(&[2, 3], 0.3));
        let p = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(global_avg_pool(&p).unwrap().data(), &[2.5]);
        let one = Tensor::<f64>::from_f64(&[1, 2, 1, 1], &[7., -1.]).unwrap();
        assert_eq!(global_avg_pool(&one).unwrap().data(), &[7., -1.]);
    }

    #[test]
    fn max_pool_picks_window_maxima() {
        let x = Tensor::<f64>::from_f64(
            &[1, 1, 2, 4],
            &[1., 5., 2., 0., 3., 4., 8., 1.],
        )
        .unwrap();
        let (y, arg) = max_pool2x2(&x).unwrap();
        assert_eq!(y.data(), &[5., 8.]);
        assert_eq!(arg, vec![1, 6]);
        assert!(max_pool2x2(&Tensor::<f64>::zeros(&[1, 1, 3, 2])).is_err());
    }

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 1, 2], &[1., 2.]).unwrap();
        let y = upsample_nearest2x(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
    }
}
