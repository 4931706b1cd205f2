use std::fmt;
use std::iter::Sum;
use std::sync::Arc;

use num_traits::Float;

use super::AutodiffError;

/// Floating-point element type the engine runs on.
///
/// Implemented for `f32` (training) and `f64` (gradient checks).
pub trait Element:
    Float + Default + Sum + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;

    /// `c = alpha * a * b + beta * c` over row/column-strided matrices.
    ///
    /// # Safety
    ///
    /// Strides and extents must describe memory inside the given pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    unsafe fn gemm(
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

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    unsafe fn gemm(
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

/// Row-major `a[m×k] · b[k×n]`, accumulated into `out` with `beta`.
pub(crate) fn matmul_into<T: Element>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
    beta: T,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: extents checked above; all three slices are dense row-major.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Immutable n-dimensional array. Cloning shares the buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, AutodiffError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(AutodiffError::Shape(format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n]).expect("positive extents")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self, AutodiffError> {
        Self::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, AutodiffError> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(AutodiffError::Shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)))
                    .collect(),
            ),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.numel() as f64)
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::Shape("concat of nothing".into()))?;
        let (n, h, w) = dims_nchw(first.shape())
            .map(|(n, _, h, w)| (n, h, w))
            .ok_or_else(|| AutodiffError::Shape("concat needs 4-d tensors".into()))?;
        let mut total_c = 0;
        for p in parts {
            match dims_nchw(p.shape()) {
                Some((pn, pc, ph, pw)) if pn == n && ph == h && pw == w => total_c += pc,
                _ => {
                    return Err(AutodiffError::Shape(format!(
                        "concat shape mismatch: {:?} vs {:?}",
                        first.shape(),
                        p.shape()
                    )))
                }
            }
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for p in parts {
                let c = p.shape()[1];
                out.extend_from_slice(&p.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        Self::new(&[n, total_c, h, w], out)
    }

    /// Channels `[start, start + len)` of an NCHW tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self, AutodiffError> {
        let (n, c, h, w) = dims_nchw(&self.shape)
            .ok_or_else(|| AutodiffError::Shape("channel slice needs a 4-d tensor".into()))?;
        if len == 0 || start + len > c {
            return Err(AutodiffError::Shape(format!(
                "channel range {start}..{} outside {c} channels",
                start + len
            )));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Self::new(&[n, len, h, w], out)
    }

    /// Single batch item `b` of an NCHW tensor, keeping the batch axis.
    pub fn batch_item(&self, b: usize) -> Result<Self, AutodiffError> {
        let n = self.shape[0];
        if b >= n {
            return Err(AutodiffError::Shape(format!("batch index {b} of {n}")));
        }
        let stride = self.numel() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Self::new(&shape, self.data[b * stride..(b + 1) * stride].to_vec())
    }

    /// Stacks equally shaped tensors along axis 0.
    pub fn stack_batch(items: &[Self]) -> Result<Self, AutodiffError> {
        let first = items
            .first()
            .ok_or_else(|| AutodiffError::Shape("stack of nothing".into()))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut count = 0;
        for it in items {
            if it.shape[1..] != first.shape[1..] {
                return Err(AutodiffError::Shape(format!(
                    "stack shape mismatch {:?} vs {:?}",
                    first.shape, it.shape
                )));
            }
            count += it.shape[0];
            data.extend_from_slice(it.data());
        }
        let mut shape = first.shape.clone();
        shape[0] = count;
        Self::new(&shape, data)
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("head", &preview)
            .finish()
    }
}

pub(crate) fn dims_nchw(shape: &[usize]) -> Option<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Some((n, c, h, w)),
        _ => None,
    }
}
