use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

/// Kronecker product of a `(p,q)` matrix with a tensor whose two leading
/// axes are treated as the matrix axes; trailing axes of `b` are carried.
///
/// `out[i·r + u, j·s + v, ..] = a[i,j] · b[u,v,..]`
pub fn kron<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (p, q) = a.dims2()?;
    if b.rank() < 2 {
        return Err(Error::shape(format!(
            "kron: right operand needs rank >= 2, got {:?}",
            b.shape()
        )));
    }
    let (r, s) = (b.shape()[0], b.shape()[1]);
    let trailing = numel(&b.shape()[2..]);
    let mut shape = vec![p * r, q * s];
    shape.extend_from_slice(&b.shape()[2..]);
    let mut out = vec![T::zero(); numel(&shape)];
    let row_len = q * s * trailing;
    for i in 0..p {
        for j in 0..q {
            let aij = a.data()[i * q + j];
            if aij == T::zero() {
                continue;
            }
            for u in 0..r {
                let dst_row = (i * r + u) * row_len + j * s * trailing;
                let src_row = u * s * trailing;
                let dst = &mut out[dst_row..dst_row + s * trailing];
                let src = &b.data()[src_row..src_row + s * trailing];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = aij * v;
                }
            }
        }
    }
    Ok(Tensor::from_parts(shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[rows, cols], v).unwrap()
    }

    #[test]
    fn identity_gives_block_diagonal() {
        let out = kron(&Tensor::eye(2), &m(2, 2, &[5., 6., 7., 8.])).unwrap();
        assert_eq!(
            out.data(),
            &[5., 6., 0., 0., 7., 8., 0., 0., 0., 0., 5., 6., 0., 0., 7., 8.]
        );
    }

    #[test]
    fn swap_matrix_moves_blocks() {
        let out = kron(&m(2, 2, &[0., 1., 1., 0.]), &m(2, 2, &[1., 2., 3., 4.])).unwrap();
        assert_eq!(
            out.data(),
            &[0., 0., 1., 2., 0., 0., 3., 4., 1., 2., 0., 0., 3., 4., 0., 0.]
        );
    }

    #[test]
    fn one_by_one_scales() {
        let out = kron(&m(1, 1, &[2.]), &m(2, 2, &[1., 1., 1., 1.])).unwrap();
        assert_eq!(out, m(2, 2, &[2., 2., 2., 2.]));
    }

    #[test]
    fn trailing_axes_are_carried() {
        let b = Tensor::<f64>::from_f64(&[1, 1, 2], &[3., 4.]).unwrap();
        let out = kron(&m(1, 2, &[1., -1.]), &b).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[3., 4., -3., -4.]);
        assert!(kron(&m(1, 1, &[1.]), &Tensor::<f64>::ones(&[3])).is_err());
    }

    fn int_matrix(max: usize) -> impl Strategy<Value = Tensor<f64>> {
        (1..=max, 1..=max).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-5i32..=5, r * c)
                .prop_map(move |v| Tensor::new(&[r, c], v.into_iter().map(f64::from).collect()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn associative_on_integer_matrices(a in int_matrix(3), b in int_matrix(3), c in int_matrix(3)) {
            let left = kron(&a, &kron(&b, &c).unwrap()).unwrap();
            let right = kron(&kron(&a, &b).unwrap(), &c).unwrap();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn identity_kron_is_block_diagonal(n in 1usize..4, f in int_matrix(3)) {
            let out = kron(&Tensor::eye(n), &f).unwrap();
            let (r, s) = f.dims2().unwrap();
            for i in 0..n * r {
                for j in 0..n * s {
                    let v = out.data()[i * n * s + j];
                    if i / r == j / s {
                        prop_assert_eq!(v, f.data()[(i % r) * s + j % s]);
                    } else {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }
}
