//! Fixed algebra matrices and the explicit quaternion construction.

use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeometry, Scalar, Tensor};

/// Sign matrices of the Hamilton product, as an `(4,4,4)` algebra tensor.
pub struct QuaternionAlgebra;

impl QuaternionAlgebra {
    /// Nonzero entries `(k, row, col, sign)`.
    const ENTRIES: [(usize, usize, usize, f64); 16] = [
        (0, 0, 0, 1.0),
        (0, 1, 1, 1.0),
        (0, 2, 2, 1.0),
        (0, 3, 3, 1.0),
        (1, 0, 1, -1.0),
        (1, 1, 0, 1.0),
        (1, 2, 3, -1.0),
        (1, 3, 2, 1.0),
        (2, 0, 2, -1.0),
        (2, 1, 3, 1.0),
        (2, 2, 0, 1.0),
        (2, 3, 1, -1.0),
        (3, 0, 3, -1.0),
        (3, 1, 2, -1.0),
        (3, 2, 1, 1.0),
        (3, 3, 0, 1.0),
    ];

    pub fn tensor<T: Scalar>() -> Tensor<T> {
        let mut a = Tensor::zeros(&[4, 4, 4]);
        for (k, r, c, s) in Self::ENTRIES {
            a.data_mut()[(k * 4 + r) * 4 + c] = T::of(s);
        }
        a
    }
}

/// Canonical algebra for `n ∈ {1, 2, 4}`: reals, complex numbers, quaternions.
pub fn fixed_algebra<T: Scalar>(n: usize) -> Result<Tensor<T>> {
    match n {
        1 => Ok(Tensor::ones(&[1, 1, 1])),
        2 => Tensor::from_f64(&[2, 2, 2], &[1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 1.0, 0.0]),
        4 => Ok(QuaternionAlgebra::tensor()),
        _ => Err(Error::config(format!(
            "no fixed algebra for n={n}; use random-algebra initialization"
        ))),
    }
}

/// The `(4d, 4c, Kh, Kw)` block weight
///
/// ```text
/// [ W0 -W1 -W2 -W3 ]
/// [ W1  W0 -W3  W2 ]
/// [ W2  W3  W0 -W1 ]
/// [ W3 -W2  W1  W0 ]
/// ```
///
/// assembled by direct block assignment.
pub fn hamilton_weight<T: Scalar>(w: [&Tensor<T>; 4]) -> Result<Tensor<T>> {
    let (d, c, kh, kw) = w[0].dims4()?;
    if w.iter().any(|t| t.shape() != w[0].shape()) {
        return Err(Error::shape("hamilton_weight: components differ in shape"));
    }
    // (component index, sign) per block position
    let layout: [[(usize, f64); 4]; 4] = [
        [(0, 1.0), (1, -1.0), (2, -1.0), (3, -1.0)],
        [(1, 1.0), (0, 1.0), (3, -1.0), (2, 1.0)],
        [(2, 1.0), (3, 1.0), (0, 1.0), (1, -1.0)],
        [(3, 1.0), (2, -1.0), (1, 1.0), (0, 1.0)],
    ];
    let s = kh * kw;
    let mut out = Tensor::zeros(&[4 * d, 4 * c, kh, kw]);
    for (br, row) in layout.iter().enumerate() {
        for (bc, &(comp, sign)) in row.iter().enumerate() {
            let src = w[comp].data();
            for o in 0..d {
                for i in 0..c {
                    for p in 0..s {
                        let dst = ((br * d + o) * 4 * c + bc * c + i) * s + p;
                        out.data_mut()[dst] = T::of(sign) * src[(o * c + i) * s + p];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Quaternion convolution of `(N, 4c, H, W)` with components `W0..W3`.
pub fn hamilton_conv<T: Scalar>(
    x: &Tensor<T>,
    w: [&Tensor<T>; 4],
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let (_, cin, _, _) = x.dims4()?;
    let (_, c, _, _) = w[0].dims4()?;
    if cin % 4 != 0 || cin != 4 * c {
        return Err(Error::shape(format!(
            "hamilton_conv: {cin} input channels for components with {c} channels"
        )));
    }
    tensor::conv2d(x, &hamilton_weight(w)?, None, geom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quaternion_units_multiply_like_hamilton() {
        // A_k acting on the basis vector e_j gives the coefficient vector of
        // (unit k) * (unit j) under left multiplication
        let a = QuaternionAlgebra::tensor::<f64>();
        let col = |k: usize, j: usize| -> Vec<f64> { (0..4).map(|r| a.data()[(k * 4 + r) * 4 + j]).collect() };
        // i*i = -1, i*j = k, j*k = i, k*i = j
        assert_eq!(col(1, 1), vec![-1.0, 0.0, 0.0, 0.0]);
        assert_eq!(col(1, 2), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(col(2, 3), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(col(3, 1), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn unsupported_fixed_order() {
        assert!(matches!(fixed_algebra::<f32>(3), Err(Error::Config(_))));
    }

    #[test]
    fn zero_imaginary_parts_give_block_diagonal() {
        let mut rng = crate::rng::seeded(1);
        let w0 = Tensor::<f64>::randn(&[2, 3, 3, 3], &mut rng);
        let z = Tensor::zeros(&[2, 3, 3, 3]);
        let x = Tensor::<f64>::randn(&[2, 12, 5, 5], &mut rng);
        let geom = ConvGeometry::new(1, 1);
        let y = hamilton_conv(&x, [&w0, &z, &z, &z], geom).unwrap();
        for q in 0..4 {
            let xs = x.slice_channels(3 * q, 3).unwrap();
            let expect = tensor::conv2d(&xs, &w0, None, geom).unwrap();
            let got = y.slice_channels(2 * q, 2).unwrap();
            assert!(got.max_abs_diff(&expect).unwrap() < 1e-12);
        }
    }

    #[test]
    fn real_unit_is_identity() {
        let one = Tensor::<f64>::ones(&[1, 1, 1, 1]);
        let z = Tensor::zeros(&[1, 1, 1, 1]);
        let mut rng = crate::rng::seeded(2);
        let x = Tensor::<f64>::randn(&[3, 4, 6, 6], &mut rng);
        let y = hamilton_conv(&x, [&one, &z, &z, &z], ConvGeometry::new(1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn channel_mismatch() {
        let w = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        let x = Tensor::<f32>::zeros(&[1, 6, 2, 2]);
        assert!(hamilton_conv(&x, [&w, &w, &w, &w], ConvGeometry::new(1, 0)).is_err());
    }
}
