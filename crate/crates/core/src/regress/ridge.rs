use nalgebra::{DMatrix, DVector};

use super::{check_labels, check_matrix, read_standardizer, write_standardizer, Standardizer};
use crate::error::{invalid, mismatch, Error, Result};
use crate::io::{NamedTensor, TensorContainer};

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub standardizer: Standardizer,
    /// Labels were all equal; the model predicts their value everywhere.
    pub constant: bool,
}

/// Minimizes `||Z w - (y - mean y)||^2 + lambda ||w||^2` where `Z` holds the
/// standardized features; the intercept is the label mean.
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeModel> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid!(
            "ridge lambda must be positive and finite, got {lambda}"
        ));
    }
    let d = check_matrix(x)?;
    check_labels(x, y)?;
    let standardizer = Standardizer::fit(x)?;
    let n = x.len();
    let intercept = y.iter().sum::<f64>() / n as f64;
    if y.iter().all(|v| *v == y[0]) {
        return Ok(RidgeModel {
            weights: vec![0.0; d],
            intercept: y[0],
            lambda,
            standardizer,
            constant: true,
        });
    }
    let z = DMatrix::from_fn(n, d, |i, j| {
        (x[i][j] - standardizer.mean[j]) / standardizer.scale[j]
    });
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - intercept));
    let mut a = z.transpose() * &z;
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    let rhs = z.transpose() * yc;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("ridge normal matrix is not positive definite".into()))?;
    let w = chol.solve(&rhs);
    Ok(RidgeModel {
        weights: w.iter().copied().collect(),
        intercept,
        lambda,
        standardizer,
        constant: false,
    })
}

impl RidgeModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .zip(&self.standardizer.mean)
                .zip(&self.standardizer.scale)
                .zip(&self.weights)
                .map(|(((v, m), s), w)| w * (v - m) / s)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let d = self.weights.len();
        if let Some(r) = x.iter().find(|r| r.len() != d) {
            return Err(mismatch!("feature dimension {} vs model {d}", r.len()));
        }
        Ok(x.iter().map(|r| self.predict_row(r)).collect())
    }

    /// Weights in the original feature units.
    pub fn raw_weights(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.standardizer.scale)
            .map(|(w, s)| w / s)
            .collect()
    }

    pub(crate) fn write_tensors(&self, c: &mut TensorContainer) {
        let d = self.weights.len();
        c.push(NamedTensor::f64(
            "ridge.weights",
            vec![d],
            self.weights.clone(),
        ));
        c.push(NamedTensor::scalar("ridge.intercept", self.intercept));
        c.push(NamedTensor::scalar("ridge.lambda", self.lambda));
        c.push(NamedTensor::scalar(
            "ridge.constant",
            self.constant as u8 as f64,
        ));
        write_standardizer(c, &self.standardizer);
    }

    pub(crate) fn read_tensors(c: &TensorContainer) -> Result<Self> {
        let weights = c.values("ridge.weights")?.to_vec();
        let standardizer = read_standardizer(c)?;
        if standardizer.dim() != weights.len() {
            return Err(mismatch!(
                "ridge weights and standardizer dimensions differ"
            ));
        }
        Ok(RidgeModel {
            weights,
            intercept: c.scalar("ridge.intercept")?,
            lambda: c.scalar("ridge.lambda")?,
            constant: c.scalar("ridge.constant")? != 0.0,
            standardizer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huge_lambda_predicts_the_mean() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i % 2) as f64]).collect();
        let y = [1.0, 2.0, 4.0, 3.0, 6.0, 2.0];
        let m = ridge_fit(&x, &y, 1e14).unwrap();
        for p in m.predict(&x).unwrap() {
            assert!((p - 3.0).abs() < 1e-9);
        }
        assert!(m.weights.iter().all(|w| w.abs() < 1e-10));
    }

    #[test]
    fn constant_labels_flagged() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let m = ridge_fit(&x, &[2.5; 3], 1.0).unwrap();
        assert!(m.constant);
        assert_eq!(m.predict(&[vec![10.0]]).unwrap(), vec![2.5]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(ridge_fit(&x, &[1.0, 2.0], 0.0).is_err());
        assert!(ridge_fit(&x, &[1.0], 1.0).is_err());
        assert!(ridge_fit(&x[..1], &[1.0], 1.0).is_err());
        assert!(ridge_fit(&[vec![1.0], vec![f64::NAN]], &[1.0, 2.0], 1.0).is_err());
    }
}
