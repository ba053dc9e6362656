use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type for tensors: `f32` for training, `f64` for gradient checks.
pub trait Scalar: Float + Default + Debug + Send + Sync + Sum + 'static {
    /// `c = alpha · a·b + beta · c` on strided row-major views; `a` is m×k,
    /// `b` is k×n, `c` is m×n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_row_stride: isize,
    );

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                beta: Self,
                c: &mut [Self],
                rsc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    ((rows as isize - 1) * rs + (cols as isize - 1) * cs) as usize
                };
                if k > 0 {
                    assert!(last(m, k, rsa, csa) < a.len(), "gemm: a too small");
                    assert!(last(k, n, rsb, csb) < b.len(), "gemm: b too small");
                }
                assert!(last(m, n, rsc, 1) < c.len(), "gemm: c too small");
                // SAFETY: the asserts above keep every strided access in bounds.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        1,
                    );
                }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense row-major tensor.
///
/// Feature maps are `[C, H, W]` for one image or channel-major `[C, N, H, W]`
/// for a batch of N images, so a batch of one has the same memory layout as
/// a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::arg(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::arg(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// Largest absolute element-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Interprets a feature-map shape as (channels, batch, height, width).
pub(crate) fn feature_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, 1, h, w)),
        [c, n, h, w] => Ok((c, n, h, w)),
        _ => Err(Error::arg(format!("{what}: expected [C,H,W] or [C,N,H,W], got {shape:?}"))),
    }
}

/// Shape with the same rank as `like` and the given dimensions.
pub(crate) fn shape_like(like: &[usize], c: usize, n: usize, h: usize, w: usize) -> Vec<usize> {
    if like.len() == 3 {
        vec![c, h, w]
    } else {
        vec![c, n, h, w]
    }
}
