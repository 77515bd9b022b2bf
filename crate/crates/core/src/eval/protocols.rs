use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{CorrelationReport, MedianReport};
use crate::autodiff::{Graph, ParamStore};
use crate::error::{invalid, mismatch, Result};
use crate::io::{FeatureTable, LabelTable};
use crate::model::{add_head, head_forward, head_predict};
use crate::regress::{
    grid_search_cv, ridge_fit, svr_fit, Regressor, RegressorKind, Standardizer, SvrGrid, SvrParams,
};
use crate::rng::{self, tag};
use crate::trainer::Sgd;

/// Clip-level features with labels and content identity.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalData {
    pub clip_ids: Vec<u64>,
    pub contents: Vec<u32>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl EvalData {
    pub fn new(
        clip_ids: Vec<u64>,
        contents: Vec<u32>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if clip_ids.len() != n || contents.len() != n || x.len() != n {
            return Err(mismatch!(
                "{} clip ids, {} contents, {} feature rows, {} labels",
                clip_ids.len(),
                contents.len(),
                x.len(),
                n
            ));
        }
        if n == 0 {
            return Err(invalid!("empty evaluation set"));
        }
        crate::regress::check_matrix(&x)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("non-finite label"));
        }
        Ok(EvalData {
            clip_ids,
            contents,
            x,
            y,
        })
    }

    /// Joins features with labels by clip id.
    pub fn from_tables(features: &FeatureTable, labels: &LabelTable) -> Result<Self> {
        let y = labels.aligned(features)?;
        Self::new(
            features.rows.iter().map(|r| r.clip_id).collect(),
            features.content_ids(),
            features.matrix(),
            y,
        )
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn distinct_contents(&self) -> Vec<u32> {
        let s: BTreeSet<u32> = self.contents.iter().copied().collect();
        s.into_iter().collect()
    }

    pub fn subset(&self, idx: &[usize]) -> EvalData {
        EvalData {
            clip_ids: idx.iter().map(|i| self.clip_ids[*i]).collect(),
            contents: idx.iter().map(|i| self.contents[*i]).collect(),
            x: idx.iter().map(|i| self.x[*i].clone()).collect(),
            y: idx.iter().map(|i| self.y[*i]).collect(),
        }
    }
}

/// One train/test partition of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub run_id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_contents: Vec<u32>,
    pub test_contents: Vec<u32>,
}

impl SplitPlan {
    /// Checks that no content id appears on both sides.
    pub fn is_content_disjoint(&self, data: &EvalData) -> bool {
        let train: BTreeSet<u32> = self.train.iter().map(|i| data.contents[*i]).collect();
        self.test
            .iter()
            .all(|i| !train.contains(&data.contents[*i]))
    }
}

/// 80/20 content-disjoint partitions; the test side holds
/// `round(0.2 * contents)` contents (at least one).
pub fn plan_splits(data: &EvalData, n_runs: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    let contents = data.distinct_contents();
    if contents.len() < 5 {
        return Err(invalid!(
            "standard split needs at least 5 distinct contents, got {}",
            contents.len()
        ));
    }
    let n_test = ((0.2 * contents.len() as f64).round() as usize).max(1);
    Ok((0..n_runs)
        .map(|run| {
            let mut c = contents.clone();
            c.shuffle(&mut rng::stream(seed, &[tag::SPLIT, run as u64]));
            let mut test_contents = c[..n_test].to_vec();
            let mut train_contents = c[n_test..].to_vec();
            test_contents.sort_unstable();
            train_contents.sort_unstable();
            let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len())
                .partition(|i| test_contents.binary_search(&data.contents[*i]).is_ok());
            SplitPlan {
                run_id: run,
                train,
                test,
                train_contents,
                test_contents,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub run_id: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Selected SVR hyperparameters, when an SVR was fitted.
    pub c: Option<f64>,
    pub gamma: Option<f64>,
    pub report: CorrelationReport,
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardResult {
    pub plans: Vec<SplitPlan>,
    pub runs: Vec<RunRow>,
    pub median: MedianReport,
    /// Some run had fewer training contents than CV folds.
    pub reduced_folds: bool,
}

/// Repeated content-disjoint 80/20 splits. Each run selects SVR
/// hyperparameters by 5-fold content-disjoint CV on its training side,
/// refits, and scores the held-out contents.
pub fn standard_split_protocol(
    data: &EvalData,
    n_runs: usize,
    seed: u64,
) -> Result<StandardResult> {
    if n_runs == 0 {
        return Err(invalid!("n_runs must be at least 1"));
    }
    let plans = plan_splits(data, n_runs, seed)?;
    let results = plans
        .par_iter()
        .map(|plan| {
            let train = data.subset(&plan.train);
            let test = data.subset(&plan.test);
            let grid = SvrGrid::default_for(&train.x, &train.y)?;
            let cv = grid_search_cv(
                &train.x,
                &train.y,
                &train.contents,
                &grid,
                5,
                rng::derive_seed(seed, &[tag::FOLDS, plan.run_id as u64]),
            )?;
            let pred = cv.model.predict(&test.x)?;
            Ok((
                RunRow {
                    run_id: plan.run_id,
                    n_train: train.len(),
                    n_test: test.len(),
                    c: Some(cv.c),
                    gamma: Some(cv.gamma),
                    report: CorrelationReport::compute(&pred, &test.y),
                    predictions: pred,
                    labels: test.y,
                },
                cv.reduced_folds,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let reduced_folds = results.iter().any(|(_, r)| *r);
    let runs: Vec<RunRow> = results.into_iter().map(|(r, _)| r).collect();
    let median = MedianReport::from_reports(runs.iter().map(|r| &r.report));
    Ok(StandardResult {
        plans,
        runs,
        median,
        reduced_folds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotResult {
    pub k: usize,
    pub kind: RegressorKind,
    pub runs: Vec<RunRow>,
    pub median: MedianReport,
}

/// Fits a regressor on `k` randomly drawn clips and scores the rest,
/// `n_samplings` times. Ridge uses `ridge_lambda` on standardized
/// features; SVR uses fixed defaults (C = 1, gamma = 1/(D var),
/// epsilon = 0.1 std of the drawn labels) because `k` is too small for
/// nested CV.
pub fn few_shot_protocol(
    data: &EvalData,
    k: usize,
    kind: RegressorKind,
    n_samplings: usize,
    seed: u64,
    ridge_lambda: f64,
) -> Result<FewShotResult> {
    if k < 2 || k >= data.len() {
        return Err(invalid!(
            "few-shot K must satisfy 2 <= K < {}, got {k}",
            data.len()
        ));
    }
    if n_samplings == 0 {
        return Err(invalid!("n_samplings must be at least 1"));
    }
    let runs = (0..n_samplings)
        .into_par_iter()
        .map(|s| {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng::stream(seed, &[tag::FEWSHOT, k as u64, s as u64]));
            let (train_idx, test_idx) = idx.split_at(k);
            let train = data.subset(train_idx);
            let test = data.subset(test_idx);
            let (model, c, gamma) = match kind {
                RegressorKind::Ridge => (
                    Regressor::Ridge(ridge_fit(&train.x, &train.y, ridge_lambda)?),
                    None,
                    None,
                ),
                RegressorKind::Svr => {
                    let params = SvrParams {
                        c: 1.0,
                        gamma: crate::regress::scale_gamma(&train.x)?,
                        epsilon: crate::regress::default_epsilon(&train.y),
                    };
                    (
                        Regressor::Svr(svr_fit(&train.x, &train.y, params)?),
                        Some(params.c),
                        Some(params.gamma),
                    )
                }
            };
            let pred = model.predict(&test.x)?;
            Ok(RunRow {
                run_id: s,
                n_train: train.len(),
                n_test: test.len(),
                c,
                gamma,
                report: CorrelationReport::compute(&pred, &test.y),
                predictions: pred,
                labels: test.y,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let median = MedianReport::from_reports(runs.iter().map(|r| &r.report));
    Ok(FewShotResult {
        k,
        kind,
        runs,
        median,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        ZeroShotConfig {
            hidden: 32,
            epochs: 200,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotResult {
    pub report: CorrelationReport,
    pub predictions: Vec<f64>,
    /// Mean training loss per epoch on the source set.
    pub epoch_losses: Vec<f64>,
}

/// Trains a two-layer MLP head on source features (standardized, with
/// standardized labels) and applies it unchanged to the target set.
pub fn zero_shot_protocol(
    source: &EvalData,
    target: &EvalData,
    cfg: &ZeroShotConfig,
) -> Result<ZeroShotResult> {
    if source.dim() != target.dim() {
        return Err(mismatch!(
            "source features have dimension {}, target {}",
            source.dim(),
            target.dim()
        ));
    }
    if cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(invalid!(
            "zero-shot head needs batch_size and hidden at least 1"
        ));
    }
    let std = Standardizer::fit(&source.x)?;
    let xs = std.apply(&source.x)?;
    let n = source.len() as f64;
    let my = source.y.iter().sum::<f64>() / n;
    let sy = (source.y.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / n).sqrt();
    let sy = if sy > 0.0 { sy } else { 1.0 };
    let ys: Vec<f64> = source.y.iter().map(|v| (v - my) / sy).collect();

    let mut store = ParamStore::new();
    let head = add_head(
        &mut store,
        "quality",
        None,
        source.dim(),
        cfg.hidden,
        &mut rng::stream(cfg.seed, &[tag::HEAD]),
    );
    let mut opt = Sgd::new(&store, cfg.learning_rate, cfg.momentum);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[tag::HEAD, epoch as u64 + 1]));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let losses = chunk
                .iter()
                .map(|i| {
                    let z = g.input(vec![xs[*i].len()], xs[*i].clone())?;
                    let p = head_forward(&mut g, &store, &head, z)?;
                    g.smooth_l1(p, ys[*i], 1.0)
                })
                .collect::<Result<Vec<_>>>()?;
            let loss = g.mean(&losses)?;
            total += g.scalar(loss) * chunk.len() as f64;
            store.zero_grad();
            g.backward(loss, &mut store)?;
            opt.apply(&mut store);
        }
        epoch_losses.push(total / n);
    }
    let predictions = std
        .apply(&target.x)?
        .iter()
        .map(|z| head_predict(&store, &head, z).map(|p| my + sy * p))
        .collect::<Result<Vec<_>>>()?;
    Ok(ZeroShotResult {
        report: CorrelationReport::compute(&predictions, &target.y),
        predictions,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(n_contents: u32, per: u32, seed: u64) -> EvalData {
        use rand::Rng;
        let mut r = rng::stream(seed, &[99]);
        let mut ids = Vec::new();
        let mut contents = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..n_contents {
            for l in 0..per {
                let f: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
                y.push(2.0 * f[0] + 1.0);
                x.push(f);
                ids.push((c * 10 + l) as u64);
                contents.push(c);
            }
        }
        EvalData::new(ids, contents, x, y).unwrap()
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let d = planted(12, 3, 1);
        let plans = plan_splits(&d, 10, 3).unwrap();
        for p in &plans {
            assert!(p.is_content_disjoint(&d));
            assert_eq!(p.test_contents.len(), 2);
            assert_eq!(p.train.len() + p.test.len(), d.len());
        }
        assert!(plan_splits(&planted(4, 3, 1), 1, 0).is_err());
    }

    #[test]
    fn standard_split_on_planted_signal() {
        let d = planted(15, 4, 2);
        let r = standard_split_protocol(&d, 3, 7).unwrap();
        assert!(r.median.srcc.unwrap() >= 0.95, "{:?}", r.median);
        let again = standard_split_protocol(&d, 3, 7).unwrap();
        assert_eq!(r, again);
        let one = standard_split_protocol(&d, 1, 7).unwrap();
        assert_eq!(one.median.srcc, one.runs[0].report.srcc);
    }

    #[test]
    fn few_shot_ridge_on_planted_signal() {
        let d = planted(40, 3, 4);
        let r = few_shot_protocol(&d, 50, RegressorKind::Ridge, 10, 1, 1.0).unwrap();
        assert!(r.median.srcc.unwrap() >= 0.9);
        assert!(few_shot_protocol(&d, d.len(), RegressorKind::Ridge, 1, 1, 1.0).is_err());
    }

    #[test]
    fn zero_shot_reports_with_untrained_head() {
        let d = planted(6, 3, 5);
        let cfg = ZeroShotConfig {
            epochs: 0,
            ..ZeroShotConfig::default()
        };
        let r = zero_shot_protocol(&d, &d, &cfg).unwrap();
        assert_eq!(r.report.n, d.len());
        assert!(r.epoch_losses.is_empty());
        let bad = EvalData::new(
            vec![0, 1],
            vec![0, 1],
            vec![vec![1.0], vec![2.0]],
            vec![1.0, 2.0],
        )
        .unwrap();
        assert!(zero_shot_protocol(&d, &bad, &cfg).is_err());
    }
}
