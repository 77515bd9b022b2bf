use super::pearson;
use crate::error::{invalid, mismatch, Result};

/// Monotone map from raw predictions onto the label scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mapping {
    /// `b1 (1/2 - 1/(1 + exp(b2 (s - b3)))) + b4`
    Logistic([f64; 4]),
    Linear {
        slope: f64,
        intercept: f64,
    },
    /// Used when predictions or labels carry no variation.
    Constant(f64),
}

impl Mapping {
    pub fn apply(&self, s: f64) -> f64 {
        match *self {
            Mapping::Logistic(b) => logistic(&b, s),
            Mapping::Linear { slope, intercept } => slope * s + intercept,
            Mapping::Constant(c) => c,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mapping::Logistic(_) => "logistic",
            Mapping::Linear { .. } => "linear",
            Mapping::Constant(_) => "constant",
        }
    }

    /// Four parameters for reporting: the logistic betas, or
    /// `(slope, intercept, 0, 0)`, or `(0, 0, 0, c)`.
    pub fn params(&self) -> [f64; 4] {
        match *self {
            Mapping::Logistic(b) => b,
            Mapping::Linear { slope, intercept } => [slope, intercept, 0.0, 0.0],
            Mapping::Constant(c) => [0.0, 0.0, 0.0, c],
        }
    }
}

pub fn logistic(b: &[f64; 4], s: f64) -> f64 {
    b[0] * (0.5 - 1.0 / (1.0 + (b[1] * (s - b[2])).exp())) + b[3]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub mapping: Mapping,
    pub mapped: Vec<f64>,
    pub sse: f64,
    /// The logistic fit failed or lost to the linear least-squares map.
    pub linear_fallback: bool,
}

/// Derivative-free simplex minimization. Returns the best point and value.
pub fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    max_evals: usize,
    ftol: f64,
) -> (Vec<f64>, f64) {
    let d = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += step[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    let mut evals = d + 1;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|a, b| vals[*a].total_cmp(&vals[*b]));
        pts = order.iter().map(|i| pts[*i].clone()).collect();
        vals = order.iter().map(|i| vals[*i]).collect();
        let (best, worst) = (vals[0], vals[d]);
        if worst.is_finite() && (worst - best).abs() <= ftol * (best.abs() + ftol) {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|k| pts[..d].iter().map(|p| p[k]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..d)
                .map(|k| centroid[k] + t * (pts[d][k] - centroid[k]))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            evals += 1;
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
        } else {
            let (xc, fc) = if fr < vals[d] {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < vals[d].min(fr) {
                pts[d] = xc;
                vals[d] = fc;
            } else {
                for i in 1..=d {
                    let p: Vec<f64> = (0..d)
                        .map(|k| pts[0][k] + 0.5 * (pts[i][k] - pts[0][k]))
                        .collect();
                    vals[i] = eval(&p);
                    pts[i] = p;
                }
                evals += d;
            }
        }
    }
    let mut best = 0;
    for i in 1..vals.len() {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    (pts[best].clone(), vals[best])
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (
        m,
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt(),
    )
}

/// Ordinary least-squares line `labels ~ slope * pred + intercept`.
pub fn linear_fit(pred: &[f64], labels: &[f64]) -> (f64, f64) {
    let (mp, _) = mean_sd(pred);
    let (my, _) = mean_sd(labels);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (p, y) in pred.iter().zip(labels) {
        sxy += (p - mp) * (y - my);
        sxx += (p - mp) * (p - mp);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mp)
}

fn sse(mapped: &[f64], labels: &[f64]) -> f64 {
    mapped
        .iter()
        .zip(labels)
        .map(|(m, y)| (m - y) * (m - y))
        .sum()
}

/// Fits the 4-parameter logistic by Nelder-Mead on internally
/// standardized predictions and labels, from several starts whose slope
/// sign follows the raw Pearson correlation. The linear least-squares map
/// (the flat limit of the logistic family) replaces the fit when the fit
/// fails or when it achieves lower squared error.
pub fn logistic_fit(pred: &[f64], labels: &[f64]) -> Result<LogisticFit> {
    if pred.len() != labels.len() {
        return Err(mismatch!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        ));
    }
    if pred.len() < 5 {
        return Err(invalid!(
            "logistic mapping needs at least 5 samples, got {}",
            pred.len()
        ));
    }
    if labels.iter().all(|v| *v == labels[0]) {
        return Err(invalid!("logistic mapping needs non-constant labels"));
    }
    if pred.iter().any(|v| !v.is_finite()) || labels.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("non-finite predictions or labels"));
    }
    let (ms, ss) = mean_sd(pred);
    let (my, sy) = mean_sd(labels);
    let (slope, intercept) = linear_fit(pred, labels);
    let linear_mapped: Vec<f64> = pred.iter().map(|p| slope * p + intercept).collect();
    let linear_sse = sse(&linear_mapped, labels);
    let linear = LogisticFit {
        mapping: Mapping::Linear { slope, intercept },
        mapped: linear_mapped,
        sse: linear_sse,
        linear_fallback: true,
    };
    if !(ss > 0.0) {
        let mapped = vec![my; pred.len()];
        return Ok(LogisticFit {
            mapping: Mapping::Constant(my),
            sse: sse(&mapped, labels),
            mapped,
            linear_fallback: false,
        });
    }

    let s: Vec<f64> = pred.iter().map(|p| (p - ms) / ss).collect();
    let y: Vec<f64> = labels.iter().map(|v| (v - my) / sy).collect();
    let objective = |b: &[f64]| -> f64 {
        let b = [b[0], b[1], b[2], b[3]];
        s.iter()
            .zip(&y)
            .map(|(si, yi)| {
                let r = logistic(&b, *si) - yi;
                r * r
            })
            .sum()
    };
    let sign = if pearson(pred, labels).unwrap_or(1.0) < 0.0 {
        -1.0
    } else {
        1.0
    };
    let range = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - y.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut best: (Vec<f64>, f64) = (vec![0.0; 4], f64::INFINITY);
    for (k1, k2) in [(1.0, 2.0), (2.0, 1.0), (4.0, 0.5), (0.5, 4.0), (8.0, 0.25)] {
        let x0 = [k1 * range, sign * k2, 0.0, 0.0];
        let step: Vec<f64> = x0
            .iter()
            .map(|v| if *v != 0.0 { 0.2 * v.abs() } else { 0.2 })
            .collect();
        let r = nelder_mead(&objective, &x0, &step, 4000, 1e-13);
        if r.1 < best.1 {
            best = r;
        }
    }
    // Restart from the best point to escape a collapsed simplex.
    let step: Vec<f64> = best.0.iter().map(|v| 0.05 * v.abs().max(0.1)).collect();
    let r = nelder_mead(&objective, &best.0, &step, 4000, 1e-15);
    if r.1 < best.1 {
        best = r;
    }
    let b = &best.0;
    let raw = [sy * b[0], b[1] / ss, ms + ss * b[2], my + sy * b[3]];
    let mapped: Vec<f64> = s
        .iter()
        .map(|si| my + sy * logistic(&[b[0], b[1], b[2], b[3]], *si))
        .collect();
    let fit_sse = sse(&mapped, labels);
    if !fit_sse.is_finite() || raw.iter().any(|v| !v.is_finite()) || linear_sse < fit_sse {
        return Ok(linear);
    }
    Ok(LogisticFit {
        mapping: Mapping::Logistic(raw),
        mapped,
        sse: fit_sse,
        linear_fallback: false,
    })
}

/// Mapping used by the reports: the logistic fit where it is defined, a
/// constant at the label mean for constant predictions or labels, and
/// the linear map below five samples.
pub(crate) fn map_for_report(pred: &[f64], labels: &[f64]) -> LogisticFit {
    let n = labels.len() as f64;
    let my = labels.iter().sum::<f64>() / n;
    let constant = || {
        let mapped = vec![my; labels.len()];
        LogisticFit {
            mapping: Mapping::Constant(my),
            sse: sse(&mapped, labels),
            mapped,
            linear_fallback: false,
        }
    };
    if pred.iter().all(|v| *v == pred[0]) || labels.iter().all(|v| *v == labels[0]) {
        return constant();
    }
    if pred.len() < 5 {
        let (slope, intercept) = linear_fit(pred, labels);
        let mapped: Vec<f64> = pred.iter().map(|p| slope * p + intercept).collect();
        return LogisticFit {
            mapping: Mapping::Linear { slope, intercept },
            sse: sse(&mapped, labels),
            mapped,
            linear_fallback: true,
        };
    }
    logistic_fit(pred, labels).unwrap_or_else(|_| constant())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2);
        let (x, v) = nelder_mead(&f, &[0.0, 0.0], &[0.5, 0.5], 5000, 1e-15);
        assert!(
            (x[0] - 1.0).abs() < 1e-5 && (x[1] + 2.0).abs() < 1e-5,
            "{x:?}"
        );
        assert!(v < 1e-9);
    }

    #[test]
    fn recovers_planted_logistic() {
        let b = [4.0, 1.5, 0.3, 3.0];
        let s: Vec<f64> = (0..40).map(|i| -3.0 + i as f64 * 0.15).collect();
        let y: Vec<f64> = s.iter().map(|v| logistic(&b, *v)).collect();
        let fit = logistic_fit(&s, &y).unwrap();
        let p = pearson(&fit.mapped, &y).unwrap();
        assert!(p >= 0.999, "{p}");
        assert!(fit.sse < 1e-6);
    }

    #[test]
    fn rejects_constant_labels_and_short_input() {
        assert!(logistic_fit(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0; 5]).is_err());
        assert!(logistic_fit(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn linear_data_keeps_pearson() {
        let s: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let y: Vec<f64> = s.iter().map(|v| 2.0 - 0.5 * v).collect();
        let fit = logistic_fit(&s, &y).unwrap();
        let p = pearson(&fit.mapped, &y).unwrap();
        assert!(p >= 1.0 - 1e-6);
    }
}
