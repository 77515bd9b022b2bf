//! Regressors on frozen clip features: closed-form ridge, RBF-kernel
//! epsilon-SVR, and content-disjoint grid-search cross-validation.

mod cv;
mod ridge;
mod svr;

pub use cv::{
    content_folds, default_epsilon, grid_search_cv, scale_gamma, CvCell, CvResult, SvrGrid,
};
pub use ridge::{ridge_fit, RidgeModel};
pub use svr::{rbf, svr_fit, SvrModel, SvrParams, KKT_TOL};

use std::path::Path;

use crate::error::{invalid, mismatch, parse_err, Result};
use crate::io::{NamedTensor, TensorContainer};

/// Per-feature affine standardization. Constant features get scale 1 so
/// they map to zero instead of dividing by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let d = check_matrix(x)?;
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(r) = x.iter().find(|r| r.len() != self.dim()) {
            return Err(mismatch!("feature dimension {} vs {}", r.len(), self.dim()));
        }
        Ok(x.iter().map(|r| self.apply_row(r)).collect())
    }
}

/// Checks a non-empty rectangular finite matrix; returns its width.
pub(crate) fn check_matrix(x: &[Vec<f64>]) -> Result<usize> {
    let first = x.first().ok_or_else(|| invalid!("no samples"))?;
    let d = first.len();
    if d == 0 {
        return Err(invalid!("zero-dimensional features"));
    }
    for r in x {
        if r.len() != d {
            return Err(mismatch!("feature dimension {} vs {d}", r.len()));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("non-finite feature value"));
        }
    }
    Ok(d)
}

pub(crate) fn check_labels(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(mismatch!("{} samples but {} labels", x.len(), y.len()));
    }
    if y.len() < 2 {
        return Err(invalid!("need at least 2 samples, got {}", y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("non-finite label"));
    }
    Ok(())
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressorKind {
    Ridge,
    Svr,
}

impl RegressorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "ridge" => Ok(RegressorKind::Ridge),
            "svr" => Ok(RegressorKind::Svr),
            other => Err(invalid!(
                "unknown regressor '{other}' (expected ridge or svr)"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegressorKind::Ridge => "ridge",
            RegressorKind::Svr => "svr",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regressor {
    Ridge(RidgeModel),
    Svr(SvrModel),
}

impl Regressor {
    pub fn kind(&self) -> RegressorKind {
        match self {
            Regressor::Ridge(_) => RegressorKind::Ridge,
            Regressor::Svr(_) => RegressorKind::Svr,
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Regressor::Ridge(m) => m.predict(x),
            Regressor::Svr(m) => m.predict(x),
        }
    }

    pub fn to_container(&self) -> TensorContainer {
        let mut c = TensorContainer::default();
        let kind = match self {
            Regressor::Ridge(_) => 0.0,
            Regressor::Svr(_) => 1.0,
        };
        c.push(NamedTensor::scalar("meta.kind", kind));
        match self {
            Regressor::Ridge(m) => m.write_tensors(&mut c),
            Regressor::Svr(m) => m.write_tensors(&mut c),
        }
        c
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        match c.scalar("meta.kind")? {
            k if k == 0.0 => Ok(Regressor::Ridge(RidgeModel::read_tensors(c)?)),
            k if k == 1.0 => Ok(Regressor::Svr(SvrModel::read_tensors(c)?)),
            k => Err(parse_err!("unknown regressor kind code {k}")),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&TensorContainer::load(path)?)
    }
}

pub(crate) fn write_standardizer(c: &mut TensorContainer, s: &Standardizer) {
    c.push(NamedTensor::f64("std.mean", vec![s.dim()], s.mean.clone()));
    c.push(NamedTensor::f64(
        "std.scale",
        vec![s.dim()],
        s.scale.clone(),
    ));
}

pub(crate) fn read_standardizer(c: &TensorContainer) -> Result<Standardizer> {
    let mean = c.values("std.mean")?.to_vec();
    let scale = c.values("std.scale")?.to_vec();
    if mean.len() != scale.len() {
        return Err(parse_err!("standardizer mean/scale lengths differ"));
    }
    Ok(Standardizer { mean, scale })
}
