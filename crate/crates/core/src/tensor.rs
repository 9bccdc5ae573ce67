//! Dense row-major `f64` tensors and the forward kernels shared by the
//! autodiff tape.

use std::fmt;
use std::sync::Arc;

use crate::error::TensorError;

/// Immutable, cheaply clonable dense tensor.
///
/// Storage is reference counted so that recording a parameter on a tape does
/// not copy it; mutation goes through [`Tensor::data_mut`], which copies on
/// write if the buffer is shared.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data.as_slice())
        } else {
            write!(f, "[{} elements]", self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    /// Builds a tensor whose shape is known to be valid.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    /// Builds a `[rows.len() × width]` matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, TensorError> {
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(TensorError::RaggedRows);
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// True for any tensor holding exactly one element.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    /// Product of all extents except the last.
    pub fn rows(&self) -> usize {
        self.len() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Gathers the given rows of a matrix into a new `[idx.len() × cols]` matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::Rank {
                op: "select_rows",
                expected: 2,
                got: self.rank(),
            });
        }
        if idx.is_empty() {
            return Err(TensorError::ZeroExtent(vec![0, self.cols()]));
        }
        let c = self.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= self.shape[0] {
                return Err(TensorError::IndexOutOfRange {
                    index: i,
                    len: self.shape[0],
                });
            }
            out.extend_from_slice(self.row(i));
        }
        Ok(Self::from_parts(vec![idx.len(), c], out))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape != b.shape {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(())
}

fn require_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<(), TensorError> {
    if t.rank() != rank {
        return Err(TensorError::Rank {
            op,
            expected: rank,
            got: t.rank(),
        });
    }
    Ok(())
}

/// `C = op(A) · op(B)` with optional transposes, via a blocked GEMM kernel.
///
/// `a` is `[m × k]` (or `[k × m]` when `trans_a`), `b` is `[k × n]` (or
/// `[n × k]` when `trans_b`).
pub(crate) fn gemm(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Result<Tensor, TensorError> {
    require_rank("matmul", a, 2)?;
    require_rank("matmul", b, 2)?;
    let (ar, ac) = (a.shape[0], a.shape[1]);
    let (br, bc) = (b.shape[0], b.shape[1]);
    let (m, k, rsa, csa) = if trans_a {
        (ac, ar, 1isize, ac as isize)
    } else {
        (ar, ac, ac as isize, 1isize)
    };
    let (k2, n, rsb, csb) = if trans_b {
        (bc, br, 1isize, bc as isize)
    } else {
        (br, bc, bc as isize, 1isize)
    };
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut c = vec![0.0; m * n];
    // SAFETY: extents and strides describe buffers of exactly ar*ac, br*bc
    // and m*n elements respectively, all of which are live for the call.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(vec![m, n], c))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    gemm(a, false, b, false)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    same_shape("add", a, b)?;
    Ok(a.zip_map(b, |x, y| x + y))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    same_shape("subtract", a, b)?;
    Ok(a.zip_map(b, |x, y| x - y))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    same_shape("multiply", a, b)?;
    Ok(a.zip_map(b, |x, y| x * y))
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|x| if x > 0.0 { x } else { 0.0 })
}

pub fn exp(a: &Tensor) -> Tensor {
    a.map(f64::exp)
}

pub fn ln(a: &Tensor) -> Result<Tensor, TensorError> {
    if let Some(&bad) = a.data.iter().find(|&&x| x <= 0.0 || x.is_nan()) {
        return Err(TensorError::Domain { op: "log", value: bad });
    }
    Ok(a.map(f64::ln))
}

pub fn sqrt(a: &Tensor) -> Result<Tensor, TensorError> {
    if let Some(&bad) = a.data.iter().find(|&&x| x < 0.0 || x.is_nan()) {
        return Err(TensorError::Domain { op: "sqrt", value: bad });
    }
    Ok(a.map(f64::sqrt))
}

pub fn square(a: &Tensor) -> Tensor {
    a.map(|x| x * x)
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum())
}

pub fn mean(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum::<f64>() / a.len() as f64)
}

/// Sums over the last axis, keeping it with extent 1.
pub fn sum_last_axis(a: &Tensor) -> Tensor {
    let c = a.cols();
    let data: Vec<f64> = a.data.chunks_exact(c).map(|r| r.iter().sum()).collect();
    let mut shape = a.shape.clone();
    *shape.last_mut().unwrap() = 1;
    Tensor::from_parts(shape, data)
}

pub fn concat_last_axis(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
    let first = parts.first().ok_or(TensorError::EmptyInputs("concat"))?;
    let lead = &first.shape[..first.rank() - 1];
    for p in parts {
        if &p.shape[..p.rank() - 1] != lead {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape.clone(),
                rhs: p.shape.clone(),
            });
        }
    }
    let rows = first.rows();
    let width: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    let mut shape = first.shape.clone();
    *shape.last_mut().unwrap() = width;
    Ok(Tensor::from_parts(shape, data))
}

pub fn slice_last_axis(a: &Tensor, start: usize, end: usize) -> Result<Tensor, TensorError> {
    let c = a.cols();
    if start >= end || end > c {
        return Err(TensorError::SliceRange { start, end, extent: c });
    }
    let data: Vec<f64> = a
        .data
        .chunks_exact(c)
        .flat_map(|r| r[start..end].iter().copied())
        .collect();
    let mut shape = a.shape.clone();
    *shape.last_mut().unwrap() = end - start;
    Ok(Tensor::from_parts(shape, data))
}

/// Adds a rank-1 bias `[n]` to every row of `[.. × n]`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    if bias.rank() != 1 || bias.len() != x.cols() {
        return Err(TensorError::ShapeMismatch {
            op: "broadcast_add_bias",
            lhs: x.shape.clone(),
            rhs: bias.shape.clone(),
        });
    }
    let b = bias.data();
    let mut data = x.data.as_ref().clone();
    for r in data.chunks_exact_mut(b.len()) {
        for (v, bv) in r.iter_mut().zip(b) {
            *v += bv;
        }
    }
    Ok(Tensor::from_parts(x.shape.clone(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let i = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(matmul(&a, &i).unwrap(), a);
    }

    #[test]
    fn gemm_transposes_match_naive() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[2, 4], &[1.0, -1.0, 0.5, 2.0, 0.0, 3.0, 1.0, -2.0]);
        // aᵀ·b : [3×4]
        let c = gemm(&a, true, &b, false).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = (0..2).map(|k| a.row(k)[i] * b.row(k)[j]).sum();
                assert_eq!(c.row(i)[j], want);
            }
        }
        // a·aᵀ : [2×2]
        let d = gemm(&a, false, &a, true).unwrap();
        assert_eq!(d.data(), &[14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn relu_and_sum() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sum(&Tensor::full(&[2, 2], 1.0)).item(), 4.0);
    }

    #[test]
    fn invalid_construction() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn shape_errors() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 3], &[0.0; 6]);
        assert!(matches!(matmul(&a, &b), Err(TensorError::ShapeMismatch { .. })));
        assert!(add(&a, &t(&[3, 2], &[0.0; 6])).is_err());
        assert!(add_bias(&a, &t(&[2], &[0.0; 2])).is_err());
        assert!(slice_last_axis(&a, 2, 2).is_err());
    }

    #[test]
    fn log_rejects_non_positive() {
        assert!(matches!(
            ln(&t(&[2], &[1.0, 0.0])),
            Err(TensorError::Domain { op: "log", .. })
        ));
    }

    #[test]
    fn concat_then_slice() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[9.0, 8.0]);
        let c = concat_last_axis(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        assert_eq!(slice_last_axis(&c, 0, 2).unwrap(), a);
        assert_eq!(slice_last_axis(&c, 2, 3).unwrap(), b);
    }

    #[test]
    fn copy_on_write() {
        let a = Tensor::zeros(&[2]);
        let mut b = a.clone();
        b.data_mut()[0] = 1.0;
        assert_eq!(a.data(), &[0.0, 0.0]);
        assert_eq!(b.data(), &[1.0, 0.0]);
    }
}
