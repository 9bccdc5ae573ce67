//! Closed-form linear least-squares regression between modalities, the
//! reference point for lifting accuracy.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hand::Handedness;
use crate::tensor::Tensor;

/// `y ≈ [x, h, 1] · W`, where `h` is the ±1 handedness column when used.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressor {
    /// `[(in + h + 1) × out]`, row-major.
    pub weights: DMatrix<f64>,
    pub uses_handedness: bool,
}

fn design(x: &Tensor, handedness: Option<&[Handedness]>) -> Result<DMatrix<f64>> {
    let (n, d) = (x.rows(), x.cols());
    if let Some(h) = handedness {
        if h.len() != n {
            return Err(Error::InvalidArgument(format!("{} handedness flags for {n} rows", h.len())));
        }
    }
    let extra = usize::from(handedness.is_some());
    Ok(DMatrix::from_fn(n, d + extra + 1, |i, j| {
        if j < d {
            x.row(i)[j]
        } else if j < d + extra {
            handedness.map_or(0.0, |h| h[i].sign())
        } else {
            1.0
        }
    }))
}

impl LinearRegressor {
    /// Ridge-regularized normal equations solved by Cholesky. `ridge` is
    /// relative to the mean diagonal of `AᵀA`.
    pub fn fit(x: &Tensor, handedness: Option<&[Handedness]>, y: &Tensor, ridge: f64) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::InvalidArgument(format!("{} inputs for {} targets", x.rows(), y.rows())));
        }
        let a = design(x, handedness)?;
        let b = DMatrix::from_row_slice(y.rows(), y.cols(), y.data());
        let mut ata = a.transpose() * &a;
        let k = ata.nrows();
        let lambda = ridge.max(0.0) * ata.trace() / k as f64 + f64::MIN_POSITIVE;
        for i in 0..k {
            ata[(i, i)] += lambda;
        }
        let atb = a.transpose() * b;
        let chol = ata
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("normal equations are not positive definite".into()))?;
        Ok(Self {
            weights: chol.solve(&atb),
            uses_handedness: handedness.is_some(),
        })
    }

    pub fn predict(&self, x: &Tensor, handedness: Option<&[Handedness]>) -> Result<Tensor> {
        if handedness.is_some() != self.uses_handedness {
            return Err(Error::InvalidArgument("handedness usage differs from the fit".into()));
        }
        let a = design(x, handedness)?;
        if a.ncols() != self.weights.nrows() {
            return Err(Error::InvalidArgument(format!(
                "input width {} does not match the fit",
                x.cols()
            )));
        }
        let p = a * &self.weights;
        let (n, m) = p.shape();
        let data = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| p[(i, j)]).collect();
        Ok(Tensor::new(vec![n, m], data)?)
    }

    pub fn bias(&self) -> DVector<f64> {
        self.weights.row(self.weights.nrows() - 1).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_exact_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200;
        let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hand: Vec<Handedness> = (0..n)
            .map(|i| if i % 3 == 0 { Handedness::Left } else { Handedness::Right })
            .collect();
        let y: Vec<f64> = (0..n)
            .flat_map(|i| {
                let r = &x[3 * i..3 * i + 3];
                let h = hand[i].sign();
                [2.0 * r[0] - r[2] + 0.5 * h + 1.0, r[1] + 3.0]
            })
            .collect();
        let xt = Tensor::new(vec![n, 3], x).unwrap();
        let yt = Tensor::new(vec![n, 2], y).unwrap();
        let m = LinearRegressor::fit(&xt, Some(&hand), &yt, 0.0).unwrap();
        let p = m.predict(&xt, Some(&hand)).unwrap();
        for (a, b) in p.data().iter().zip(yt.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((m.bias()[0] - 1.0).abs() < 1e-9);
        assert!((m.weights[(3, 0)] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn mismatched_inputs() {
        let x = Tensor::zeros(&[4, 2]);
        let y = Tensor::zeros(&[3, 1]);
        assert!(LinearRegressor::fit(&x, None, &y, 1e-6).is_err());
        let m = LinearRegressor::fit(&x, None, &Tensor::zeros(&[4, 1]), 1e-6).unwrap();
        assert!(m.predict(&Tensor::zeros(&[4, 3]), None).is_err());
        assert!(m.predict(&x, Some(&[Handedness::Left; 4])).is_err());
    }
}
