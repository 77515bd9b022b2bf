//! Minimum-norm point in the convex hull of per-task gradients.
//!
//! Everything past Gram construction runs on the T×T matrix of pairwise
//! dot products, so the cost of a solve is independent of the parameter
//! count once the Gram matrix exists.

use std::path::Path;

use crate::autodiff::{Graph, NodeId};
use crate::error::{invalid, mismatch, Result};
use crate::io::{write_csv, Provenance};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 250;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub tasks: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    gram: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GradientBundle {
    pub fn new(tasks: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(invalid!("gradient bundle needs at least one task"));
        }
        if tasks.len() != vectors.len() {
            return Err(mismatch!(
                "{} task names for {} gradients",
                tasks.len(),
                vectors.len()
            ));
        }
        let p = vectors[0].len();
        if let Some(v) = vectors.iter().find(|v| v.len() != p) {
            return Err(mismatch!("gradient lengths {} and {}", p, v.len()));
        }
        let t = vectors.len();
        let mut gram = vec![vec![0.0; t]; t];
        for i in 0..t {
            for j in i..t {
                let d = dot(&vectors[i], &vectors[j]);
                gram[i][j] = d;
                gram[j][i] = d;
            }
        }
        Ok(GradientBundle {
            tasks,
            vectors,
            gram,
        })
    }

    /// Bundle with placeholder task names `t0, t1, ...`.
    pub fn unnamed(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let tasks = (0..vectors.len()).map(|i| format!("t{i}")).collect();
        Self::new(tasks, vectors)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn gram(&self) -> &[Vec<f64>] {
        &self.gram
    }

    /// `sum_t alpha_t g_t`.
    pub fn combine(&self, alpha: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vectors[0].len()];
        for (a, v) in alpha.iter().zip(&self.vectors) {
            out.iter_mut().zip(v).for_each(|(o, x)| *o += a * x);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights {
    pub alpha: Vec<f64>,
    pub achieved_norm_sq: f64,
    pub iterations: usize,
    /// Set when every gradient was zero and the weights are uniform.
    pub degenerate: bool,
}

impl SimplexWeights {
    fn uniform(t: usize) -> Self {
        SimplexWeights {
            alpha: vec![1.0 / t as f64; t],
            achieved_norm_sq: 0.0,
            iterations: 0,
            degenerate: true,
        }
    }
}

/// Line search between two points given their squared norms and inner
/// product. Returns the weight on the first point. Equal points resolve
/// to the first.
fn pair_gamma(v12: f64, v22: f64, dist_sq: f64) -> f64 {
    if dist_sq <= 0.0 {
        return 1.0;
    }
    ((v22 - v12) / dist_sq).clamp(0.0, 1.0)
}

fn pair_norm_sq(gamma: f64, v11: f64, v12: f64, v22: f64) -> f64 {
    let d = 1.0 - gamma;
    (gamma * gamma * v11 + 2.0 * gamma * d * v12 + d * d * v22).max(0.0)
}

pub fn min_norm_pair(g1: &[f64], g2: &[f64]) -> Result<SimplexWeights> {
    if g1.len() != g2.len() {
        return Err(mismatch!("gradient lengths {} and {}", g1.len(), g2.len()));
    }
    if g1.iter().chain(g2).all(|v| *v == 0.0) {
        return Ok(SimplexWeights::uniform(2));
    }
    let (v11, v12, v22) = (dot(g1, g1), dot(g1, g2), dot(g2, g2));
    let mut dist_sq = 0.0;
    let mut numer = 0.0;
    for (a, b) in g1.iter().zip(g2) {
        dist_sq += (a - b) * (a - b);
        numer += (b - a) * b;
    }
    let gamma = if dist_sq > 0.0 {
        (numer / dist_sq).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(SimplexWeights {
        alpha: vec![gamma, 1.0 - gamma],
        achieved_norm_sq: pair_norm_sq(gamma, v11, v12, v22),
        iterations: 1,
        degenerate: false,
    })
}

/// One Frank-Wolfe iterate, kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub alpha: Vec<f64>,
    pub achieved_norm_sq: f64,
}

pub fn min_norm_solve(
    bundle: &GradientBundle,
    tol: f64,
    max_iter: usize,
) -> Result<SimplexWeights> {
    min_norm_solve_traced(bundle, tol, max_iter).map(|(w, _)| w)
}

pub fn min_norm_solve_traced(
    bundle: &GradientBundle,
    tol: f64,
    max_iter: usize,
) -> Result<(SimplexWeights, Vec<TraceStep>)> {
    if !(tol >= 0.0) {
        return Err(invalid!("tolerance must be nonnegative, got {tol}"));
    }
    let t = bundle.len();
    if t == 1 {
        let w = SimplexWeights {
            alpha: vec![1.0],
            achieved_norm_sq: bundle.gram[0][0],
            iterations: 0,
            degenerate: bundle.vectors[0].iter().all(|v| *v == 0.0),
        };
        let trace = vec![TraceStep {
            step: 0,
            alpha: w.alpha.clone(),
            achieved_norm_sq: w.achieved_norm_sq,
        }];
        return Ok((w, trace));
    }
    if t == 2 {
        let w = min_norm_pair(&bundle.vectors[0], &bundle.vectors[1])?;
        let trace = vec![TraceStep {
            step: 0,
            alpha: w.alpha.clone(),
            achieved_norm_sq: w.achieved_norm_sq,
        }];
        return Ok((w, trace));
    }
    let (w, trace) = frank_wolfe(&bundle.gram, tol, max_iter);
    Ok((w, trace))
}

/// Frank-Wolfe on the simplex for `min alpha' G alpha`, started from the
/// best two-vertex solution.
pub fn frank_wolfe(
    gram: &[Vec<f64>],
    tol: f64,
    max_iter: usize,
) -> (SimplexWeights, Vec<TraceStep>) {
    let t = gram.len();
    if (0..t).all(|i| gram[i][i] == 0.0) {
        let w = SimplexWeights::uniform(t);
        let trace = vec![TraceStep {
            step: 0,
            alpha: w.alpha.clone(),
            achieved_norm_sq: 0.0,
        }];
        return (w, trace);
    }

    let mut best = (f64::INFINITY, 0, 0, 1.0);
    for i in 0..t {
        for j in i + 1..t {
            let (v11, v12, v22) = (gram[i][i], gram[i][j], gram[j][j]);
            let g = pair_gamma(v12, v22, v11 + v22 - 2.0 * v12);
            let n = pair_norm_sq(g, v11, v12, v22);
            if n < best.0 {
                best = (n, i, j, g);
            }
        }
    }
    let mut alpha = vec![0.0; t];
    alpha[best.1] = best.3;
    alpha[best.2] = 1.0 - best.3;
    let mut norm_sq = best.0;
    let mut trace = vec![TraceStep {
        step: 0,
        alpha: alpha.clone(),
        achieved_norm_sq: norm_sq,
    }];

    let mut iterations = 0;
    while iterations < max_iter {
        let g_alpha: Vec<f64> = (0..t).map(|i| dot(&gram[i], &alpha)).collect();
        let v11 = dot(&alpha, &g_alpha).max(0.0);
        // Lowest index wins ties.
        let mut k = 0;
        for i in 1..t {
            if g_alpha[i] < g_alpha[k] {
                k = i;
            }
        }
        if g_alpha[k] >= v11 {
            break;
        }
        let (v12, v22) = (g_alpha[k], gram[k][k]);
        let gamma = pair_gamma(v12, v22, v11 + v22 - 2.0 * v12);
        let next = pair_norm_sq(gamma, v11, v12, v22);
        iterations += 1;
        if next > norm_sq {
            break;
        }
        alpha.iter_mut().for_each(|a| *a *= gamma);
        alpha[k] += 1.0 - gamma;
        let decrease = norm_sq - next;
        norm_sq = next;
        trace.push(TraceStep {
            step: iterations,
            alpha: alpha.clone(),
            achieved_norm_sq: norm_sq,
        });
        if decrease < tol {
            break;
        }
    }

    // Recompute from the final weights so the reported norm is exact for
    // them rather than the running update.
    let g_alpha: Vec<f64> = (0..t).map(|i| dot(&gram[i], &alpha)).collect();
    let achieved = dot(&alpha, &g_alpha).max(0.0);
    (
        SimplexWeights {
            alpha,
            achieved_norm_sq: achieved,
            iterations,
            degenerate: false,
        },
        trace,
    )
}

/// `sum_t alpha_t L_t` with the weights held constant.
pub fn compose_joint_loss(
    graph: &mut Graph,
    alpha: &SimplexWeights,
    losses: &[NodeId],
) -> Result<NodeId> {
    if alpha.alpha.len() != losses.len() {
        return Err(mismatch!(
            "{} weights for {} losses",
            alpha.alpha.len(),
            losses.len()
        ));
    }
    let terms: Vec<(NodeId, f64)> = losses
        .iter()
        .copied()
        .zip(alpha.alpha.iter().copied())
        .collect();
    graph.weighted_sum(&terms)
}

/// Writes the per-step solver trace as CSV: `step, alpha_<task>..., achieved_norm`.
pub fn write_trace_csv(
    path: &Path,
    prov: &Provenance,
    tasks: &[String],
    trace: &[TraceStep],
) -> Result<()> {
    let mut header = vec!["step".to_string()];
    header.extend(tasks.iter().map(|t| format!("alpha_{t}")));
    header.push("achieved_norm".to_string());
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|s| {
            let mut r = vec![s.step.to_string()];
            r.extend(s.alpha.iter().map(|a| a.to_string()));
            r.push(s.achieved_norm_sq.sqrt().to_string());
            r
        })
        .collect();
    write_csv(path, prov, &header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pair_examples() {
        let w = min_norm_pair(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(w.alpha, vec![0.5, 0.5]);
        assert!(close(w.achieved_norm_sq, 0.5, 1e-15));

        let w = min_norm_pair(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert_eq!(w.alpha, vec![1.0, 0.0]);
        assert!(close(w.achieved_norm_sq, 5.0, 1e-12));

        let w = min_norm_pair(&[1.0, 1.0], &[1.0, -1.0]).unwrap();
        assert_eq!(w.alpha, vec![0.5, 0.5]);
        assert!(close(w.achieved_norm_sq, 1.0, 1e-15));
    }

    #[test]
    fn pair_ties_and_zeros() {
        let w = min_norm_pair(&[0.3, -0.2], &[0.3, -0.2]).unwrap();
        assert_eq!(w.alpha, vec![1.0, 0.0]);
        let w = min_norm_pair(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(w.alpha, vec![0.5, 0.5]);
        assert!(w.degenerate);
        assert_eq!(w.achieved_norm_sq, 0.0);
        let w = min_norm_pair(&[1.0, -3.0], &[-1.0, 3.0]).unwrap();
        assert!(w.achieved_norm_sq <= 1e-10);
        assert!(min_norm_pair(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn solve_dispatch() {
        let b = GradientBundle::unnamed(vec![vec![3.0, 4.0]]).unwrap();
        let w = min_norm_solve(&b, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(w.alpha, vec![1.0]);
        assert_eq!(w.achieved_norm_sq, 25.0);

        let e = |i: usize| {
            (0..3)
                .map(|j| if i == j { 1.0 } else { 0.0 })
                .collect::<Vec<f64>>()
        };
        let b = GradientBundle::unnamed(vec![e(0), e(1), e(2)]).unwrap();
        let w = min_norm_solve(&b, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        for a in &w.alpha {
            assert!(close(*a, 1.0 / 3.0, 1e-6), "{:?}", w.alpha);
        }
        assert!(close(w.achieved_norm_sq, 1.0 / 3.0, 1e-6));

        let b = GradientBundle::unnamed(vec![vec![0.0; 4]; 3]).unwrap();
        let w = min_norm_solve(&b, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(w.degenerate);
        assert_eq!(w.alpha, vec![1.0 / 3.0; 3]);

        assert!(GradientBundle::unnamed(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(GradientBundle::unnamed(vec![]).is_err());
    }

    #[test]
    fn gram_is_symmetric_dot_products() {
        let b =
            GradientBundle::unnamed(vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0]]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(
                    b.gram()[i][j],
                    dot(&b.vectors[i], &b.vectors[j]),
                    1e-12
                ));
                assert_eq!(b.gram()[i][j], b.gram()[j][i]);
            }
        }
    }

    #[test]
    fn joint_loss_weights_losses() {
        let mut g = Graph::new();
        let a = g.input(vec![1], vec![2.0]).unwrap();
        let b = g.input(vec![1], vec![5.0]).unwrap();
        let w = SimplexWeights {
            alpha: vec![1.0, 0.0],
            achieved_norm_sq: 0.0,
            iterations: 0,
            degenerate: false,
        };
        let j = compose_joint_loss(&mut g, &w, &[a, b]).unwrap();
        assert_eq!(g.scalar(j), 2.0);
        let u = SimplexWeights {
            alpha: vec![0.5, 0.5],
            ..w.clone()
        };
        let c = g.input(vec![1], vec![2.0]).unwrap();
        let j = compose_joint_loss(&mut g, &u, &[a, c]).unwrap();
        assert_eq!(g.scalar(j), 2.0);
        assert!(compose_joint_loss(&mut g, &w, &[a]).is_err());
    }
}
