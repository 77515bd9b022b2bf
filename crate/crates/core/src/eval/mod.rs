//! Agreement metrics between predictions and labels, and the standard,
//! few-shot and zero-shot evaluation protocols built on them.
//!
//! Undefined quantities (a constant input vector, too few samples) are
//! `None` and are written as empty cells; medians skip them.

mod logistic;
mod protocols;
mod svg;

pub use logistic::{linear_fit, logistic, logistic_fit, nelder_mead, LogisticFit, Mapping};
pub use protocols::{
    few_shot_protocol, standard_split_protocol, zero_shot_protocol, EvalData, FewShotResult,
    RunRow, SplitPlan, StandardResult, ZeroShotConfig, ZeroShotResult,
};
pub use svg::scatter_svg;

/// Middle value (mean of the two middle values for even length); `None`
/// for an empty slice. Input order does not matter.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Median over the defined entries.
pub fn median_defined(values: &[Option<f64>]) -> Option<f64> {
    median(&values.iter().flatten().copied().collect::<Vec<_>>())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Pearson correlation; `None` when fewer than 3 samples, lengths differ,
/// or either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 3 || is_constant(a) || is_constant(b) {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let r = sab / (saa * sbb).sqrt();
    r.is_finite().then(|| r.clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average ranks.
pub fn srcc(pred: &[f64], labels: &[f64]) -> Option<f64> {
    if pred.len() != labels.len() || pred.len() < 3 || is_constant(pred) || is_constant(labels) {
        return None;
    }
    pearson(&average_ranks(pred), &average_ranks(labels))
}

/// Kendall tau-b.
pub fn krcc(pred: &[f64], labels: &[f64]) -> Option<f64> {
    let n = pred.len();
    if n != labels.len() || n < 3 || is_constant(pred) || is_constant(labels) {
        return None;
    }
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_a, mut ties_b) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = pred[i].total_cmp(&pred[j]) as i64;
            let db = labels[i].total_cmp(&labels[j]) as i64;
            if da == 0 {
                ties_a += 1;
            }
            if db == 0 {
                ties_b += 1;
            }
            match da * db {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = (((n0 - ties_a) * (n0 - ties_b)) as f64).sqrt();
    Some((concordant - discordant) as f64 / denom)
}

/// Pearson and RMSE between already-mapped predictions and labels.
pub fn plcc_rmse(mapped: &[f64], labels: &[f64]) -> (Option<f64>, f64) {
    let n = mapped.len().min(labels.len());
    let mse = mapped
        .iter()
        .zip(labels)
        .map(|(m, y)| (m - y) * (m - y))
        .sum::<f64>()
        / n.max(1) as f64;
    (pearson(mapped, labels), mse.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub srcc: Option<f64>,
    pub krcc: Option<f64>,
    pub plcc: Option<f64>,
    pub rmse: Option<f64>,
    pub mapping: Mapping,
    pub n: usize,
}

impl CorrelationReport {
    /// SRCC/KRCC on raw predictions; PLCC/RMSE after mapping predictions
    /// onto the label scale.
    pub fn compute(pred: &[f64], labels: &[f64]) -> Self {
        let n = pred.len().min(labels.len());
        if pred.len() != labels.len() || n == 0 {
            return CorrelationReport {
                srcc: None,
                krcc: None,
                plcc: None,
                rmse: None,
                mapping: Mapping::Constant(f64::NAN),
                n,
            };
        }
        let fit = logistic::map_for_report(pred, labels);
        let (plcc, rmse) = plcc_rmse(&fit.mapped, labels);
        CorrelationReport {
            srcc: srcc(pred, labels),
            krcc: krcc(pred, labels),
            plcc,
            rmse: rmse.is_finite().then_some(rmse),
            mapping: fit.mapping,
            n,
        }
    }

    pub fn values(&self) -> [Option<f64>; 4] {
        [self.srcc, self.krcc, self.plcc, self.rmse]
    }
}

/// Per-metric medians over a set of runs, each over its defined values.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianReport {
    pub srcc: Option<f64>,
    pub krcc: Option<f64>,
    pub plcc: Option<f64>,
    pub rmse: Option<f64>,
    pub runs: usize,
}

impl MedianReport {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a CorrelationReport>) -> Self {
        let reports: Vec<&CorrelationReport> = reports.into_iter().collect();
        let col = |f: fn(&CorrelationReport) -> Option<f64>| {
            median_defined(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        MedianReport {
            srcc: col(|r| r.srcc),
            krcc: col(|r| r.krcc),
            plcc: col(|r| r.plcc),
            rmse: col(|r| r.rmse),
            runs: reports.len(),
        }
    }

    pub fn values(&self) -> [Option<f64>; 4] {
        [self.srcc, self.krcc, self.plcc, self.rmse]
    }
}

/// Renders an optional metric for CSV output; undefined is empty.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
