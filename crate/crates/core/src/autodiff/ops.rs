//! Forward kernels and their vector-Jacobian products.
//!
//! Every function checks shapes at its boundary; nothing broadcasts
//! implicitly.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// `c[m×n] (+)= a[m×k] · b[k×n]`, all row-major.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.iter_mut().for_each(|v| *v = T::zero());
    }
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m×n] (+)= a[k×m]ᵀ · b[k×n]`.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.iter_mut().for_each(|v| *v = T::zero());
    }
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m×n] (+)= a[m×k] · b[n×k]ᵀ`.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let s = dot(arow, brow);
            let cv = &mut c[i * n + j];
            *cv = if accumulate { *cv + s } else { s };
        }
    }
}

/// Dot product with eight independent partial sums so it vectorizes; the
/// summation order is fixed, so results are still deterministic.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s = s + x * y;
    }
    s
}

/// Matrix product of two rank-2 tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (m, k) = (a.dim(0), a.dim(1));
    let (k2, n) = (b.dim(0), b.dim(1));
    if k != k2 {
        return Err(Error::dim(format!("matmul inner dimensions disagree: {:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = Tensor::zeros(&[m, n]);
    let (ad, bd) = (a.data(), b.data());
    par::for_each_chunk_mut(out.data_mut(), n, |i, row| {
        gemm_nn(1, k, n, &ad[i * k..(i + 1) * k], bd, row, false);
    });
    Ok(out)
}

/// Returns `(dL/dA, dL/dB)` for `Y = A·B` given `dL/dY`.
pub fn matmul_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
    dy.expect_shape(&[m, n])?;
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    gemm_nt(m, n, k, dy.data(), b.data(), da.data_mut(), false);
    gemm_tn(k, m, n, a.data(), dy.data(), db.data_mut(), false);
    Ok((da, db))
}

/// Max-stabilized softmax along the last axis with temperature.
pub fn softmax_lastdim<T: Scalar>(t: &Tensor<T>, temperature: f64) -> Result<Tensor<T>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::config(format!("softmax temperature must be positive, got {temperature}")));
    }
    t.check_finite("softmax input")?;
    let n = *t.shape().last().expect("rank >= 1");
    let mut out = t.detached();
    let inv_t = T::of(1.0 / temperature);
    for row in out.data_mut().chunks_mut(n) {
        softmax_in_place(row, inv_t);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T], inv_t: T) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = ((*v - max) * inv_t).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// VJP of [`softmax_lastdim`] given its output `y`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, temperature: f64) -> Result<Tensor<T>> {
    dy.expect_shape(y.shape())?;
    let n = *y.shape().last().expect("rank >= 1");
    let mut dx = Tensor::zeros(y.shape());
    let inv_t = T::of(1.0 / temperature);
    for ((yr, gr), dr) in y.data().chunks(n).zip(dy.data().chunks(n)).zip(dx.data_mut().chunks_mut(n)) {
        softmax_row_backward(yr, gr, dr, inv_t);
    }
    Ok(dx)
}

pub(crate) fn softmax_row_backward<T: Scalar>(y: &[T], dy: &[T], dx: &mut [T], inv_t: T) {
    let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    for ((d, &yv), &g) in dx.iter_mut().zip(y).zip(dy) {
        *d = yv * (g - dot) * inv_t;
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Transpose of a rank-2 tensor.
pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    a.expect_rank(2, "transpose")?;
    let (m, n) = (a.dim(0), a.dim(1));
    let d = a.data();
    Ok(Tensor::from_fn(&[n, m], |i| d[(i % m) * n + i / m]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: &[&[f64]]) -> Tensor<f64> {
        let n = rows[0].len();
        Tensor::new(&[rows.len(), n], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let y = matmul(&Tensor::eye(2), &t2(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_projector() {
        let p = t2(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let y = matmul(&p, &t2(&[&[5.0, 6.0], &[7.0, 8.0]])).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::<f64>::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[4, 2], -1.0, 1.0, &mut rng);
        let r = Tensor::<f64>::uniform(&[3, 2], -1.0, 1.0, &mut rng);
        let loss = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 { matmul(a, b).unwrap().data().iter().zip(r.data()).map(|(x, y)| x * y).sum() };
        let (da, db) = matmul_backward(&a, &b, &r).unwrap();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..a.len() {
            let (mut p, mut m) = (a.clone(), a.clone());
            p.data_mut()[i] += eps;
            m.data_mut()[i] -= eps;
            let fd = (loss(&p, &b) - loss(&m, &b)) / (2.0 * eps);
            worst = worst.max((fd - da.data()[i]).abs() / fd.abs().max(da.data()[i].abs()).max(1e-3));
        }
        for i in 0..b.len() {
            let (mut p, mut m) = (b.clone(), b.clone());
            p.data_mut()[i] += eps;
            m.data_mut()[i] -= eps;
            let fd = (loss(&a, &p) - loss(&a, &m)) / (2.0 * eps);
            worst = worst.max((fd - db.data()[i]).abs() / fd.abs().max(db.data()[i].abs()).max(1e-3));
        }
        assert!(worst < 1e-4, "max rel err {worst}");
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_lastdim(&Tensor::<f64>::zeros(&[3]), 1.0).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let y = softmax_lastdim(&Tensor::<f64>::new(&[2], vec![2f64.ln(), 0.0]).unwrap(), 1.0).unwrap();
        assert!((y.data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0 / 3.0).abs() < 1e-12);
        let y = softmax_lastdim(&Tensor::<f64>::new(&[2], vec![10.0, 0.0]).unwrap(), 1e6).unwrap();
        assert!((y.data()[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax_lastdim(&Tensor::<f64>::zeros(&[3]), 0.0).is_err());
        let bad = Tensor::<f64>::new(&[2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(softmax_lastdim(&bad, 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &tau in &[1.0, 0.5, 3.0] {
            let x = Tensor::<f64>::uniform(&[2, 5], -1.0, 1.0, &mut rng);
            let r = Tensor::<f64>::uniform(&[2, 5], -1.0, 1.0, &mut rng);
            let f = |x: &Tensor<f64>| -> f64 { softmax_lastdim(x, tau).unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum() };
            let y = softmax_lastdim(&x, tau).unwrap();
            let dx = softmax_backward(&y, &r, tau).unwrap();
            for i in 0..x.len() {
                let (mut p, mut m) = (x.clone(), x.clone());
                p.data_mut()[i] += 1e-6;
                m.data_mut()[i] -= 1e-6;
                let fd = (f(&p) - f(&m)) / 2e-6;
                assert!((fd - dx.data()[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gemm_variants_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::<f64>::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[4, 5], -1.0, 1.0, &mut rng);
        let c = matmul(&a, &b).unwrap();
        let at = transpose(&a).unwrap();
        let bt = transpose(&b).unwrap();
        let mut c2 = vec![0.0; 15];
        gemm_tn(3, 4, 5, at.data(), b.data(), &mut c2, false);
        let mut c3 = vec![0.0; 15];
        gemm_nt(3, 4, 5, a.data(), bt.data(), &mut c3, false);
        for i in 0..15 {
            assert!((c.data()[i] - c2[i]).abs() < 1e-12);
            assert!((c.data()[i] - c3[i]).abs() < 1e-12);
        }
    }
}
