//! Dense rank-4 tensors and trainable parameters.
//!
//! Layout is row-major `(n, c, h, w)`. Rank-2 matrices used by the linear
//! layers are carried as `(rows, cols, 1, 1)`.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{contract, Result};

/// Floating-point element type of the kernel.
///
/// The model runs in `f32`; `f64` exists so gradient checks can be run at
/// higher precision against the same code path.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    /// `c = a · b (+ c if accumulate)` for row-major `a: m×k`, `b: k×n`.
    /// `a_t` / `b_t` mean the slice holds the transpose (`k×m` / `n×k`).
    #[allow(clippy::too_many_arguments)]
    fn matmul(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite conversion")
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // Logical (rows × cols) view over row-major storage.
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn matmul(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        c[..m * n].iter_mut().for_each(|x| *x = 0.0);
                    }
                    return;
                }
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: slice lengths are checked above against the
                // logical shapes, and all strides stay within them.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense `(n, c, h, w)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T = f32> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn filled(dims: [usize; 4], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(contract(format!(
                "tensor of dims {dims:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Rank-2 `(rows, cols)` matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec([rows, cols, 1, 1], data)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }
    pub fn n(&self) -> usize {
        self.dims[0]
    }
    pub fn c(&self) -> usize {
        self.dims[1]
    }
    pub fn h(&self) -> usize {
        self.dims[2]
    }
    pub fn w(&self) -> usize {
        self.dims[3]
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
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// Elements of one batch item.
    pub fn item(&self, n: usize) -> &[T] {
        let stride = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let stride = self.dims[1] * self.dims[2] * self.dims[3];
        &mut self.data[n * stride..(n + 1) * stride]
    }

    /// Batch item `n` as its own `(1, c, h, w)` tensor.
    pub fn select(&self, n: usize) -> Self {
        Self {
            dims: [1, self.dims[1], self.dims[2], self.dims[3]],
            data: self.item(n).to_vec(),
        }
    }

    /// Concatenate along the batch axis. All parts must share `(c, h, w)`.
    pub fn stack(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| contract("cannot stack zero tensors"))?;
        let [_, c, h, w] = first.dims;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut n = 0;
        for p in parts {
            if p.dims[1..] != [c, h, w] {
                return Err(contract(format!(
                    "stack: dims {:?} do not match {:?}",
                    p.dims, first.dims
                )));
            }
            data.extend_from_slice(&p.data);
            n += p.dims[0];
        }
        Ok(Self {
            dims: [n, c, h, w],
            data,
        })
    }

    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    /// Spatial crop `[y0, y0+h) × [x0, x0+w)` of every item and channel.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let [n, c, sh, sw] = self.dims;
        if y0 + h > sh || x0 + w > sw {
            return Err(contract(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {sh}x{sw}"
            )));
        }
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in y0..y0 + h {
                    let start = self.offset(b, ch, y, x0);
                    data.extend_from_slice(&self.data[start..start + w]);
                }
            }
        }
        Ok(Self {
            dims: [n, c, h, w],
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|x| U::from_f64_lossy(x.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// A trainable tensor with its gradient and Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    pub adam_m: Tensor4<T>,
    pub adam_v: Tensor4<T>,
    pub step_count: u64,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor4<T>) -> Self {
        let dims = value.dims();
        Self {
            value,
            grad: Tensor4::zeros(dims),
            adam_m: Tensor4::zeros(dims),
            adam_v: Tensor4::zeros(dims),
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            value: self.value.cast(),
            grad: self.grad.cast(),
            adam_m: self.adam_m.cast(),
            adam_v: self.adam_v.cast(),
            step_count: self.step_count,
        }
    }
}
