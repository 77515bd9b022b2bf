//! Slow, direct reference implementations shared by the integration tests
//! and the acceptance harness. None of these reuse library internals.

#![allow(dead_code)]

use proxyvqa::synth::Frame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Frames

/// Smooth random field plus white noise, clamped to [0, 1].
pub fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Frame {
    let (fx, fy, ph) = (
        rng.random_range(0.02..0.3),
        rng.random_range(0.02..0.3),
        rng.random_range(0.0..6.3),
    );
    let amp = rng.random_range(0.1..0.4);
    let noise = rng.random_range(0.0..0.2);
    let luma = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let v = 0.5
                + amp * (fx * x + ph).sin() * (fy * y).cos()
                + noise * (rng.random::<f64>() - 0.5);
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    Frame::new(w, h, luma).unwrap()
}

/// A distorted copy: box blur of random radius plus noise.
pub fn perturbed(rng: &mut ChaCha8Rng, f: &Frame) -> Frame {
    let (w, h) = (f.width, f.height);
    let r = rng.random_range(0..3usize) as isize;
    let sigma = rng.random_range(0.0..0.15);
    let src = f.to_f64();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut s, mut n) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx >= 0 && yy >= 0 && xx < w as isize && yy < h as isize {
                        s += src[yy as usize * w + xx as usize];
                        n += 1.0;
                    }
                }
            }
            let v = s / n + sigma * (rng.random::<f64>() - 0.5);
            out.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Frame::new(w, h, out).unwrap()
}

// ---------------------------------------------------------------------------
// SSIM / MS-SSIM by direct windowing

const WIN: usize = 11;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window_weights() -> Vec<f64> {
    let mut w = vec![0.0; WIN * WIN];
    for i in 0..WIN {
        for j in 0..WIN {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            w[i * WIN + j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Mean SSIM and mean contrast-structure over every fully contained
/// window, with two-pass (centered) local moments.
pub fn naive_ssim(a: &[f64], b: &[f64], w: usize, h: usize) -> (f64, f64) {
    let g = window_weights();
    let (mut ssim, mut cs, mut n) = (0.0, 0.0, 0.0);
    for y0 in 0..=h - WIN {
        for x0 in 0..=w - WIN {
            let at = |v: &[f64], i: usize, j: usize| v[(y0 + i) * w + x0 + j];
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..WIN {
                for j in 0..WIN {
                    ma += g[i * WIN + j] * at(a, i, j);
                    mb += g[i * WIN + j] * at(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..WIN {
                for j in 0..WIN {
                    let (da, db) = (at(a, i, j) - ma, at(b, i, j) - mb);
                    va += g[i * WIN + j] * da * da;
                    vb += g[i * WIN + j] * db * db;
                    cov += g[i * WIN + j] * da * db;
                }
            }
            let c = (2.0 * cov + C2) / (va + vb + C2);
            let l = (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1);
            ssim += l * c;
            cs += c;
            n += 1.0;
        }
    }
    (ssim / n, cs / n)
}

fn halve(v: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (w2, h2) = (w / 2, h / 2);
    let mut out = vec![0.0; w2 * h2];
    for y in 0..h2 {
        for x in 0..w2 {
            let mut s = 0.0;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                s += v[(2 * y + dy) * w + 2 * x + dx];
            }
            out[y * w2 + x] = s / 4.0;
        }
    }
    (out, w2, h2)
}

/// MS-SSIM with as many of the five standard scales as hold an 11x11
/// window, negative terms clamped to zero. Exponents are renormalized
/// only when fewer than five scales fit.
pub fn naive_ms_ssim(r: &Frame, d: &Frame) -> f64 {
    let weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let (mut w, mut h) = (r.width, r.height);
    let mut scales = 0;
    while scales < 5 && w >= WIN && h >= WIN {
        scales += 1;
        w /= 2;
        h /= 2;
    }
    let total: f64 = if scales == 5 {
        1.0
    } else {
        weights[..scales].iter().sum()
    };
    let (mut a, mut b) = (r.to_f64(), d.to_f64());
    let (mut w, mut h) = (r.width, r.height);
    let mut out = 1.0;
    for s in 0..scales {
        let (ss, cs) = naive_ssim(&a, &b, w, h);
        let term: f64 = if s + 1 == scales { ss } else { cs };
        out *= term.max(0.0).powf(weights[s] / total);
        let (a2, w2, h2) = halve(&a, w, h);
        b = halve(&b, w, h).0;
        a = a2;
        w = w2;
        h = h2;
    }
    out
}

// ---------------------------------------------------------------------------
// Simplex quadratic

pub fn norm_sq_at(vectors: &[Vec<f64>], alpha: &[f64]) -> f64 {
    let d = vectors[0].len();
    (0..d)
        .map(|k| {
            let s: f64 = vectors.iter().zip(alpha).map(|(v, a)| a * v[k]).sum();
            s * s
        })
        .sum()
}

/// Two-vector min-norm weight on the first vector from Gram entries:
/// `(g22 - g12) / (g11 + g22 - 2 g12)`, clamped to [0, 1].
pub fn pair_weight_oracle(a: &[f64], b: &[f64]) -> f64 {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let (g11, g12, g22) = (dot(a, a), dot(a, b), dot(b, b));
    let den = g11 + g22 - 2.0 * g12;
    if den <= 0.0 {
        return 1.0;
    }
    ((g22 - g12) / den).clamp(0.0, 1.0)
}

/// Minimum of `|sum a_t g_t|^2` over the three-simplex grid with step 0.01.
pub fn simplex_grid_min(vectors: &[Vec<f64>]) -> f64 {
    assert_eq!(vectors.len(), 3);
    let mut best = f64::INFINITY;
    for i in 0..=100 {
        for j in 0..=100 - i {
            let a = [
                i as f64 / 100.0,
                j as f64 / 100.0,
                (100 - i - j) as f64 / 100.0,
            ];
            best = best.min(norm_sq_at(vectors, &a));
        }
    }
    best
}

/// Uniform point on the probability simplex.
pub fn random_simplex(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..t).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|i, j| a[*i][col].abs().total_cmp(&a[*j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Column-standardized copy of `x` (population std, constant columns
/// left centered) with the per-column means and scales.
pub fn standardize(x: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (n, d) = (x.len() as f64, x[0].len());
    let mean: Vec<f64> = (0..d)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let z = x
        .iter()
        .map(|r| (0..d).map(|j| (r[j] - mean[j]) / scale[j]).collect())
        .collect();
    (z, mean, scale)
}

/// Ridge on standardized features with an unpenalized intercept, solved
/// from the normal equations. Returns raw-unit weights and intercept.
pub fn ridge_oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let (z, mean, scale) = standardize(x);
    let d = mean.len();
    let ym = y.iter().sum::<f64>() / y.len() as f64;
    let mut a = vec![vec![0.0; d]; d];
    let mut b = vec![0.0; d];
    for (row, yi) in z.iter().zip(y) {
        for i in 0..d {
            b[i] += row[i] * (yi - ym);
            for j in 0..d {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += lambda;
    }
    let w = gauss_solve(a, b);
    let raw: Vec<f64> = w.iter().zip(&scale).map(|(w, s)| w / s).collect();
    let intercept = ym - raw.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    (raw, intercept)
}

// ---------------------------------------------------------------------------
// SVR dual by projected gradient

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

/// Projects `(u, v)` onto `{0 <= a, a* <= c, sum a = sum a*}` by bisecting
/// the multiplier of the equality constraint.
fn project(u: &[f64], v: &[f64], c: f64) -> (Vec<f64>, Vec<f64>) {
    let at = |nu: f64| {
        let a: Vec<f64> = u.iter().map(|x| (x - nu).clamp(0.0, c)).collect();
        let s: Vec<f64> = v.iter().map(|x| (x + nu).clamp(0.0, c)).collect();
        let gap = a.iter().sum::<f64>() - s.iter().sum::<f64>();
        (a, s, gap)
    };
    let span = u.iter().chain(v).fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).2 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, s, _) = at(0.5 * (lo + hi));
    (a, s)
}

/// Minimum of `1/2 b'Kb + eps sum(a + a*) - y'b`, `b = a - a*`, by
/// accelerated projected gradient. `x` is used as given (no scaling).
pub fn svr_dual_oracle(
    x: &[Vec<f64>],
    y: &[f64],
    c: f64,
    gamma: f64,
    eps: f64,
    iters: usize,
) -> f64 {
    let n = y.len();
    let k: Vec<Vec<f64>> = x
        .iter()
        .map(|a| x.iter().map(|b| rbf(a, b, gamma)).collect())
        .collect();
    let obj = |a: &[f64], s: &[f64]| {
        let b: Vec<f64> = a.iter().zip(s).map(|(p, q)| p - q).collect();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += b[i] * k[i][j] * b[j];
            }
        }
        0.5 * q + eps * (a.iter().sum::<f64>() + s.iter().sum::<f64>())
            - y.iter().zip(&b).map(|(yy, bb)| yy * bb).sum::<f64>()
    };
    // Lipschitz constant of the gradient in (a, a*) is 2 lambda_max(K) <= 2n.
    let step = 1.0 / (2.0 * n as f64);
    let (mut a, mut s) = (vec![0.0; n], vec![0.0; n]);
    let (mut pa, mut ps) = (a.clone(), s.clone());
    let mut t = 1.0f64;
    for _ in 0..iters {
        let b: Vec<f64> = pa.iter().zip(&ps).map(|(p, q)| p - q).collect();
        let kb: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| k[i][j] * b[j]).sum())
            .collect();
        let ga: Vec<f64> = (0..n)
            .map(|i| pa[i] - step * (kb[i] + eps - y[i]))
            .collect();
        let gs: Vec<f64> = (0..n)
            .map(|i| ps[i] - step * (-kb[i] + eps + y[i]))
            .collect();
        let (na, ns) = project(&ga, &gs, c);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let m = (t - 1.0) / tn;
        pa = (0..n).map(|i| na[i] + m * (na[i] - a[i])).collect();
        ps = (0..n).map(|i| ns[i] + m * (ns[i] - s[i])).collect();
        a = na;
        s = ns;
        t = tn;
    }
    obj(&a, &s)
}

// ---------------------------------------------------------------------------
// Rank correlations by counting

/// Spearman for tie-free data: `1 - 6 sum d^2 / (n (n^2 - 1))`.
pub fn spearman_no_ties(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let rank = |v: &[f64]| -> Vec<usize> {
        v.iter()
            .map(|x| v.iter().filter(|y| *y < x).count())
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let d2: i64 = ra
        .iter()
        .zip(&rb)
        .map(|(p, q)| (*p as i64 - *q as i64).pow(2))
        .sum();
    let n = n as i64;
    1.0 - 6.0 * d2 as f64 / (n * (n * n - 1)) as f64
}

/// Kendall tau-b from concordant/discordant/tie pair counts.
pub fn kendall_pairs(a: &[f64], b: &[f64]) -> f64 {
    let (mut c, mut d, mut ta, mut tb) = (0i64, 0i64, 0i64, 0i64);
    let n = a.len();
    for i in 0..n {
        for j in i + 1..n {
            let (sa, sb) = ((a[i] - a[j]).signum(), (b[i] - b[j]).signum());
            let (za, zb) = (a[i] == a[j], b[i] == b[j]);
            if za && zb {
                continue;
            }
            if za {
                ta += 1;
            } else if zb {
                tb += 1;
            } else if sa == sb {
                c += 1;
            } else {
                d += 1;
            }
        }
    }
    (c - d) as f64 / (((c + d + ta) as f64) * ((c + d + tb) as f64)).sqrt()
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, v: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(v.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, v, out);
            let j = if k % 2 == 0 { i } else { 0 };
            v.swap(j, k - 1);
        }
    }
    let mut v: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut v, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Finite differences

/// Relative gradient error with denominator floor `floor`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between backprop and central differences over
/// every scalar in `store`. `build` records the loss on a fresh graph.
pub fn grad_check(
    store: &mut proxyvqa::autodiff::ParamStore,
    build: &dyn Fn(
        &mut proxyvqa::autodiff::Graph,
        &proxyvqa::autodiff::ParamStore,
    ) -> proxyvqa::autodiff::NodeId,
    h: f64,
    floor: f64,
) -> f64 {
    use proxyvqa::autodiff::Graph;
    store.zero_grad();
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    g.backward(loss, store).unwrap();
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    let mut worst = 0.0f64;
    for id in ids {
        let analytic = store.flat_grad(&[id]);
        for k in 0..analytic.len() {
            let orig = store.get(id).values[k];
            let mut eval = |v: f64| {
                store.get_mut(id).values[k] = v;
                let mut g = Graph::new();
                let l = build(&mut g, store);
                g.scalar(l)
            };
            let numeric = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            store.get_mut(id).values[k] = orig;
            worst = worst.max(rel_err(analytic[k], numeric, floor));
        }
    }
    worst
}

/// Largest KKT violation of an SVR fit, measured on the training points.
pub fn svr_kkt_residual(x: &[Vec<f64>], y: &[f64], m: &proxyvqa::regress::SvrModel) -> f64 {
    let c = m.params.c;
    let pred = m.predict(x).unwrap();
    let mut worst = 0.0f64;
    for ((xi, yi), fi) in x.iter().zip(y).zip(&pred) {
        let z = m.standardizer.apply_row(xi);
        let beta = m
            .support
            .iter()
            .position(|s| *s == z)
            .map_or(0.0, |j| m.coef[j]);
        let resid = yi - fi;
        let eps = m.params.epsilon;
        let v = if beta.abs() < 1e-12 {
            (resid.abs() - eps).max(0.0)
        } else if beta.abs() > c - 1e-12 {
            (eps - resid * beta.signum()).max(0.0)
        } else {
            (resid - eps * beta.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}
