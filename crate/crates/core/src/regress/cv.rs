use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{check_labels, check_matrix, mean_std, svr_fit, Standardizer, SvrModel, SvrParams};
use crate::error::{invalid, mismatch, Result};
use crate::eval::srcc;
use crate::rng::{self, tag};

/// Candidate SVR hyperparameters. `epsilon` is fixed across the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrGrid {
    pub cs: Vec<f64>,
    pub gammas: Vec<f64>,
    pub epsilon: f64,
}

impl SvrGrid {
    /// `C in {0.1, 1, 10, 100}`, `gamma in {1/(D var), 0.01, 0.1, 1}` with
    /// `var` the variance of the standardized training features, and
    /// `epsilon = 0.1 std(labels)`.
    pub fn default_for(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        Ok(SvrGrid {
            cs: vec![0.1, 1.0, 10.0, 100.0],
            gammas: vec![scale_gamma(x)?, 0.01, 0.1, 1.0],
            epsilon: default_epsilon(y),
        })
    }

    pub fn single(c: f64, gamma: f64, epsilon: f64) -> Self {
        SvrGrid {
            cs: vec![c],
            gammas: vec![gamma],
            epsilon,
        }
    }
}

/// `1 / (D var)` over standardized features; falls back to `1/D` when
/// every feature is constant.
pub fn scale_gamma(x: &[Vec<f64>]) -> Result<f64> {
    let d = check_matrix(x)?;
    let z = Standardizer::fit(x)?.apply(x)?;
    let flat: Vec<f64> = z.into_iter().flatten().collect();
    let (_, sd) = mean_std(&flat);
    let var = sd * sd;
    Ok(if var > 0.0 {
        1.0 / (d as f64 * var)
    } else {
        1.0 / d as f64
    })
}

pub fn default_epsilon(y: &[f64]) -> f64 {
    0.1 * mean_std(y).1
}

/// Assigns each sample a fold so that no content id spans two folds.
/// Returns the per-sample fold index and the fold count actually used,
/// which is below `k` when there are fewer than `k` contents.
pub fn content_folds(contents: &[u32], k: usize, seed: u64) -> Result<(Vec<usize>, usize)> {
    let mut ids: Vec<u32> = contents.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(invalid!(
            "cross-validation needs at least 2 distinct contents, got {}",
            ids.len()
        ));
    }
    if k < 2 {
        return Err(invalid!("cross-validation needs at least 2 folds"));
    }
    let k = k.min(ids.len());
    ids.shuffle(&mut rng::stream(seed, &[tag::FOLDS]));
    let fold_of: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, c)| (*c, i % k)).collect();
    Ok((contents.iter().map(|c| fold_of[c]).collect(), k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvCell {
    pub c: f64,
    pub gamma: f64,
    /// Validation SRCC per fold; `None` when undefined.
    pub fold_srcc: Vec<Option<f64>>,
    /// Mean over folds, counting undefined folds as zero.
    pub mean_srcc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub c: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Refit on all supplied samples with the selected cell.
    pub model: SvrModel,
    pub cells: Vec<CvCell>,
    pub folds: usize,
    /// Fewer contents than requested folds.
    pub reduced_folds: bool,
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|i| v[*i].clone()).collect()
}

/// Content-disjoint k-fold grid search maximizing mean validation SRCC.
/// Ties go to the smaller C, then the smaller gamma.
pub fn grid_search_cv(
    x: &[Vec<f64>],
    y: &[f64],
    contents: &[u32],
    grid: &SvrGrid,
    n_folds: usize,
    seed: u64,
) -> Result<CvResult> {
    check_matrix(x)?;
    check_labels(x, y)?;
    if contents.len() != y.len() {
        return Err(mismatch!(
            "{} content ids for {} samples",
            contents.len(),
            y.len()
        ));
    }
    if grid.cs.is_empty() || grid.gammas.is_empty() {
        return Err(invalid!("empty hyperparameter grid"));
    }
    let (fold, k) = content_folds(contents, n_folds, seed)?;
    let mut cs = grid.cs.clone();
    let mut gammas = grid.gammas.clone();
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let cells: Vec<(f64, f64)> = cs
        .iter()
        .flat_map(|c| gammas.iter().map(move |g| (*c, *g)))
        .collect();

    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..k)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|i| fold[*i] == f);
            (train, val)
        })
        .collect();

    let scored = cells
        .par_iter()
        .map(|(c, gamma)| {
            let params = SvrParams {
                c: *c,
                gamma: *gamma,
                epsilon: grid.epsilon,
            };
            let fold_srcc = splits
                .iter()
                .map(|(train, val)| {
                    let m = svr_fit(&pick(x, train), &pick(y, train), params)?;
                    let pred = m.predict(&pick(x, val))?;
                    Ok(srcc(&pred, &pick(y, val)))
                })
                .collect::<Result<Vec<_>>>()?;
            let mean_srcc = fold_srcc.iter().map(|s| s.unwrap_or(0.0)).sum::<f64>() / k as f64;
            Ok(CvCell {
                c: *c,
                gamma: *gamma,
                fold_srcc,
                mean_srcc,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (i, cell) in scored.iter().enumerate() {
        if cell.mean_srcc > scored[best].mean_srcc {
            best = i;
        }
    }
    let (c, gamma) = (scored[best].c, scored[best].gamma);
    let model = svr_fit(
        x,
        y,
        SvrParams {
            c,
            gamma,
            epsilon: grid.epsilon,
        },
    )?;
    Ok(CvResult {
        c,
        gamma,
        epsilon: grid.epsilon,
        model,
        cells: scored,
        folds: k,
        reduced_folds: k < n_folds,
    })
}
