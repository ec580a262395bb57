//! Dense row-major tensors.
//!
//! `Tensor<f32>` is the working precision for training; `Tensor<f64>` exists so
//! gradient checks can run at tight tolerances. There is no broadcasting: every
//! binary operation requires identical shapes.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Scalar types a tensor can hold.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` on strided row/column views.
    ///
    /// # Safety
    /// The pointers and strides must describe in-bounds `m x k`, `k x n` and
    /// `m x n` views, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("real converts to f64")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A matrix view over a slice: `rows x cols` with explicit strides.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major contiguous view.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `out = alpha * a * b + beta * out`, with `out` row-major `a.rows x b.cols`.
pub(crate) fn gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v = *v * beta;
        }
        return;
    }
    assert!(a.max_index() < a.data.len(), "gemm lhs view out of bounds");
    assert!(b.max_index() < b.data.len(), "gemm rhs view out of bounds");
    // SAFETY: views were bounds-checked above; `out` is a distinct &mut slice.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZipOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor rank must be at least 1"));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::shape(format!(
            "dimension {pos} of {shape:?} is zero"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(format!("element count of {shape:?} overflows")))
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("tensor values must be finite"));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Construction from buffers the caller has already sized to `shape`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn from_vec(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn zip_map(&self, other: &Tensor<T>, op: ZipOp) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise {op:?} of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let f: fn(T, T) -> T = match op {
            ZipOp::Add => |a, b| a + b,
            ZipOp::Sub => |a, b| a - b,
            ZipOp::Mul => |a, b| a * b,
        };
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::shape(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            T::one(),
            MatRef::new(&self.data, m, k),
            MatRef::new(&other.data, k, n),
            T::zero(),
            &mut out,
        );
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>> {
        self.clone().into_reshape(new_shape)
    }

    pub fn into_reshape(self, new_shape: &[usize]) -> Result<Tensor<T>> {
        let len = check_shape(new_shape)?;
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} values) to {new_shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data: self.data,
        })
    }

    /// Glorot/Xavier uniform initialization on `[-b, b]`, `b = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot_uniform(
        rng: &mut Rng,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Tensor<T>> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::param(format!(
                "glorot fans must be positive (fan_in={fan_in}, fan_out={fan_out})"
            )));
        }
        let len = check_shape(shape)?;
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..len)
            .map(|_| T::from_f64_lossy(rng.uniform(-bound, bound)))
            .collect();
        Ok(Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn zeros_shapes() {
        let t = Tensor::<f32>::zeros(&[2, 2]).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(Tensor::<f32>::zeros(&[1]).unwrap().data(), &[0.0]);
        assert!(matches!(Tensor::<f32>::zeros(&[0]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::<f32>::zeros(&[]), Err(Error::Shape(_))));
    }

    #[test]
    fn zip_map_examples() {
        let a = Tensor::from_vec(vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::from_vec(vec![3.0f32, 4.0]).unwrap();
        assert_eq!(a.zip_map(&b, ZipOp::Add).unwrap().data(), &[4.0, 6.0]);
        let c = Tensor::from_vec(vec![2.0f32, 3.0]).unwrap();
        let d = Tensor::from_vec(vec![0.0f32, 5.0]).unwrap();
        assert_eq!(c.zip_map(&d, ZipOp::Mul).unwrap().data(), &[0.0, 15.0]);
        let e = Tensor::<f32>::zeros(&[3]).unwrap();
        assert!(matches!(a.zip_map(&e, ZipOp::Add), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_examples() {
        let id = Tensor::new(&[2, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(&[2, 2], vec![5.0f32, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(id.matmul(&b).unwrap(), b);

        let a = Tensor::new(&[2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let expected = naive_matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2);
        assert_eq!(expected, vec![19.0, 22.0, 43.0, 50.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);

        let x = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        assert!(matches!(x.matmul(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn reshape_examples() {
        let t = Tensor::new(&[2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let r = t.reshape(&[4]).unwrap();
        assert_eq!(r.shape(), &[4]);
        assert_eq!(r.data(), t.data());
        let big = Tensor::<f32>::zeros(&[4, 4, 256]).unwrap();
        assert_eq!(big.reshape(&[4096]).unwrap().shape(), &[4 * 4 * 256]);
        assert!(matches!(t.reshape(&[3]), Err(Error::Shape(_))));
    }

    #[test]
    fn glorot_examples() {
        let mut rng = Rng::new(1);
        let t = Tensor::<f32>::glorot_uniform(&mut rng, &[50, 50], 3, 3).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));

        let a = Tensor::<f32>::glorot_uniform(&mut Rng::new(5), &[10], 4, 4).unwrap();
        let b = Tensor::<f32>::glorot_uniform(&mut Rng::new(5), &[10], 4, 4).unwrap();
        assert_eq!(a, b);

        let m = Tensor::<f64>::glorot_uniform(&mut Rng::new(9), &[100_000], 3, 3).unwrap();
        let mean = m.sum() / m.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");

        assert!(matches!(
            Tensor::<f32>::glorot_uniform(&mut rng, &[2], 0, 3),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor::from_vec(vec![1.0f32, f32::NAN]).is_err());
    }

    fn dims() -> impl Strategy<Value = (usize, usize, usize, u64)> {
        (1usize..=8, 1usize..=8, 1usize..=8, any::<u64>())
    }

    proptest! {
        #[test]
        fn matmul_matches_triple_loop((m, k, n, seed) in dims()) {
            let mut rng = Rng::new(seed);
            let a64: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let b64: Vec<f64> = (0..k * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let want = naive_matmul(&a64, &b64, m, k, n);

            let a = Tensor::new(&[m, k], a64.clone()).unwrap();
            let b = Tensor::new(&[k, n], b64.clone()).unwrap();
            let got = a.matmul(&b).unwrap();
            for (g, w) in got.data().iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
            }

            let a32: Tensor<f32> = a.cast();
            let b32: Tensor<f32> = b.cast();
            let want32 = naive_matmul(
                &a32.cast::<f64>().into_data(), &b32.cast::<f64>().into_data(), m, k, n);
            let got32 = a32.matmul(&b32).unwrap();
            for (g, w) in got32.data().iter().zip(&want32) {
                prop_assert!((*g as f64 - w).abs() <= 1e-5 * w.abs().max(1.0));
            }
        }

        #[test]
        fn reshape_round_trip_is_bitwise(seed in any::<u64>(), split in 0usize..4) {
            let mut rng = Rng::new(seed);
            let t = Tensor::<f32>::glorot_uniform(&mut rng, &[2, 3, 4], 5, 5).unwrap();
            let shapes: [&[usize]; 4] = [&[24], &[6, 4], &[4, 2, 3], &[1, 24, 1]];
            let back = t.reshape(shapes[split]).unwrap().reshape(&[2, 3, 4]).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn add_zeros_is_identity(seed in any::<u64>(), n in 1usize..64) {
            let t = Tensor::<f32>::glorot_uniform(&mut Rng::new(seed), &[n], 2, 2).unwrap();
            let z = Tensor::zeros(&[n]).unwrap();
            let s = t.zip_map(&z, ZipOp::Add).unwrap();
            prop_assert!(s.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn glorot_never_exceeds_bound(seed in any::<u64>(), fi in 1usize..600, fo in 1usize..600) {
            let t = Tensor::<f32>::glorot_uniform(&mut Rng::new(seed), &[256], fi, fo).unwrap();
            let bound = (6.0 / (fi + fo) as f64).sqrt() as f32;
            prop_assert!(t.data().iter().all(|v| v.abs() <= bound));
        }
    }
}
