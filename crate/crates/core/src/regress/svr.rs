use super::{check_labels, check_matrix, read_standardizer, write_standardizer, Standardizer};
use crate::error::{invalid, mismatch, Result};
use crate::io::{NamedTensor, TensorContainer};

const TAU: f64 = 1e-12;
/// A fit counts as converged once its KKT gap is below this.
pub const KKT_TOL: f64 = 1e-3;
const MAX_ITER: usize = 1_000_000;
/// Gap the solver iterates down to.
const SOLVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrParams {
    pub c: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    pub params: SvrParams,
    pub standardizer: Standardizer,
    /// Standardized support vectors.
    pub support: Vec<Vec<f64>>,
    /// `alpha_i - alpha*_i`, each in `[-C, C]`.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Maximal KKT violation `m - M` when the solver stopped.
    pub kkt_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Dual objective `1/2 b'Qb + p'b` over the 2n-variable formulation.
    pub dual_objective: f64,
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

/// Epsilon-SVR on standardized features, solved by SMO with second-order
/// working-set selection over the 2n-variable dual
///
/// ```text
/// min 1/2 b'Qb + p'b   s.t.  y'b = 0,  0 <= b <= C
/// ```
///
/// with `y = (1..1, -1..-1)`, `p = (eps - z, eps + z)`, `Q_ij = y_i y_j K`.
pub fn svr_fit(x: &[Vec<f64>], z: &[f64], params: SvrParams) -> Result<SvrModel> {
    if !(params.c > 0.0) || !(params.gamma > 0.0) || !(params.epsilon >= 0.0) {
        return Err(invalid!(
            "svr needs C > 0, gamma > 0, epsilon >= 0 (got {}, {}, {})",
            params.c,
            params.gamma,
            params.epsilon
        ));
    }
    check_matrix(x)?;
    check_labels(x, z)?;
    let standardizer = Standardizer::fit(x)?;
    let xs = standardizer.apply(x)?;
    let n = xs.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = rbf(&xs[i], &xs[j], params.gamma);
            k[i][j] = v;
            k[j][i] = v;
        }
    }

    let l = 2 * n;
    let c = params.c;
    let y: Vec<f64> = (0..l).map(|t| if t < n { 1.0 } else { -1.0 }).collect();
    let p: Vec<f64> = (0..l)
        .map(|t| {
            if t < n {
                params.epsilon - z[t]
            } else {
                params.epsilon + z[t - n]
            }
        })
        .collect();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i % n][j % n];
    let qd: Vec<f64> = (0..l).map(|t| k[t % n][t % n]).collect();
    let mut alpha = vec![0.0; l];
    let mut g = p.clone();

    let mut iterations = 0;
    let mut converged = false;
    let mut gap;
    loop {
        // Working set selection: i maximizes -y G over I_up, j minimizes
        // the second-order decrease bound over I_low.
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for t in 0..l {
            if y[t] > 0.0 {
                if alpha[t] < c && -g[t] >= gmax {
                    gmax = -g[t];
                    gmax_idx = Some(t);
                }
            } else if alpha[t] > 0.0 && g[t] >= gmax {
                gmax = g[t];
                gmax_idx = Some(t);
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut gmin_idx = None;
        let mut obj_diff_min = f64::INFINITY;
        if let Some(i) = gmax_idx {
            for t in 0..l {
                if y[t] > 0.0 {
                    if alpha[t] > 0.0 {
                        let grad_diff = gmax + g[t];
                        gmax2 = gmax2.max(g[t]);
                        if grad_diff > 0.0 {
                            let quad = qd[i] + qd[t] - 2.0 * y[i] * q(i, t);
                            let od = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                            if od <= obj_diff_min {
                                gmin_idx = Some(t);
                                obj_diff_min = od;
                            }
                        }
                    }
                } else if alpha[t] < c {
                    let grad_diff = gmax - g[t];
                    gmax2 = gmax2.max(-g[t]);
                    if grad_diff > 0.0 {
                        let quad = qd[i] + qd[t] + 2.0 * y[i] * q(i, t);
                        let od = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                        if od <= obj_diff_min {
                            gmin_idx = Some(t);
                            obj_diff_min = od;
                        }
                    }
                }
            }
        }
        gap = gmax + gmax2;
        let (Some(i), Some(j)) = (gmax_idx, gmin_idx) else {
            converged = true;
            break;
        };
        if gap < SOLVE_TOL {
            converged = true;
            break;
        }
        if iterations >= MAX_ITER {
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (da_i, da_j) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..l {
            g[t] += q(i, t) * da_i + q(j, t) * da_j;
        }
    }

    converged |= gap < KKT_TOL;

    // Offset from free variables, or the middle of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..l {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    let dual_objective = 0.5 * (0..l).map(|t| alpha[t] * (g[t] + p[t])).sum::<f64>();

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for i in 0..n {
        let a = alpha[i] - alpha[i + n];
        if a != 0.0 {
            support.push(xs[i].clone());
            coef.push(a);
        }
    }
    Ok(SvrModel {
        params,
        standardizer,
        support,
        coef,
        bias: -rho,
        kkt_gap: gap.max(0.0),
        iterations,
        converged,
        dual_objective,
    })
}

impl SvrModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let s = self.standardizer.apply_row(row);
        self.bias
            + self
                .support
                .iter()
                .zip(&self.coef)
                .map(|(sv, a)| a * rbf(sv, &s, self.params.gamma))
                .sum::<f64>()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let d = self.standardizer.dim();
        if let Some(r) = x.iter().find(|r| r.len() != d) {
            return Err(mismatch!("feature dimension {} vs model {d}", r.len()));
        }
        Ok(x.iter().map(|r| self.predict_row(r)).collect())
    }

    pub(crate) fn write_tensors(&self, c: &mut TensorContainer) {
        let d = self.standardizer.dim();
        let n = self.coef.len();
        c.push(NamedTensor::scalar("svr.c", self.params.c));
        c.push(NamedTensor::scalar("svr.gamma", self.params.gamma));
        c.push(NamedTensor::scalar("svr.epsilon", self.params.epsilon));
        c.push(NamedTensor::scalar("svr.bias", self.bias));
        c.push(NamedTensor::scalar("svr.kkt_gap", self.kkt_gap));
        c.push(NamedTensor::scalar(
            "svr.iterations",
            self.iterations as f64,
        ));
        c.push(NamedTensor::scalar(
            "svr.converged",
            self.converged as u8 as f64,
        ));
        c.push(NamedTensor::scalar(
            "svr.dual_objective",
            self.dual_objective,
        ));
        c.push(NamedTensor::f64("svr.coef", vec![n], self.coef.clone()));
        c.push(NamedTensor::f64(
            "svr.support",
            vec![n, d],
            self.support.iter().flatten().copied().collect(),
        ));
        write_standardizer(c, &self.standardizer);
    }

    pub(crate) fn read_tensors(c: &TensorContainer) -> Result<Self> {
        let standardizer = read_standardizer(c)?;
        let d = standardizer.dim();
        let coef = c.values("svr.coef")?.to_vec();
        let flat = c.values("svr.support")?;
        if flat.len() != coef.len() * d {
            return Err(mismatch!(
                "svr support block does not match {} x {d}",
                coef.len()
            ));
        }
        let support = if d == 0 {
            Vec::new()
        } else {
            flat.chunks(d).map(<[f64]>::to_vec).collect()
        };
        Ok(SvrModel {
            params: SvrParams {
                c: c.scalar("svr.c")?,
                gamma: c.scalar("svr.gamma")?,
                epsilon: c.scalar("svr.epsilon")?,
            },
            standardizer,
            support,
            coef,
            bias: c.scalar("svr.bias")?,
            kkt_gap: c.scalar("svr.kkt_gap")?,
            iterations: c.scalar("svr.iterations")? as usize,
            converged: c.scalar("svr.converged")? != 0.0,
            dual_objective: c.scalar("svr.dual_objective")?,
        })
    }
}
