//! Full-reference metrics used as proxy supervision targets.
//!
//! All metrics operate on luma in `[0, 1]` (peak value 1) and are computed
//! in `f64`.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, mismatch, Error, Result};
use crate::synth::{Clip, Frame};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

const C1: f64 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
const C2: f64 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);

/// A proxy target. The set used for pretraining is configurable; the
/// default multi-task configuration uses all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Ssim,
    MsSsim,
    PsnrNorm,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Ssim, Task::MsSsim, Task::PsnrNorm];

    pub fn name(self) -> &'static str {
        match self {
            Task::Ssim => "ssim",
            Task::MsSsim => "ms_ssim",
            Task::PsnrNorm => "psnr_norm",
        }
    }

    pub fn score(self, reference: &Frame, distorted: &Frame) -> Result<f64> {
        match self {
            Task::Ssim => ssim(reference, distorted),
            Task::MsSsim => ms_ssim(reference, distorted),
            Task::PsnrNorm => psnr_norm(reference, distorted),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ssim" => Ok(Task::Ssim),
            "ms_ssim" => Ok(Task::MsSsim),
            "psnr_norm" => Ok(Task::PsnrNorm),
            other => Err(invalid!(
                "unknown task '{other}' (expected ssim|ms_ssim|psnr_norm)"
            )),
        }
    }
}

/// Parses a comma-separated task list, rejecting duplicates and empty lists.
pub fn parse_tasks(s: &str) -> Result<Vec<Task>> {
    let tasks = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(Task::from_str)
        .collect::<Result<Vec<_>>>()?;
    if tasks.is_empty() {
        return Err(invalid!("task list is empty"));
    }
    for (i, t) in tasks.iter().enumerate() {
        if tasks[..i].contains(t) {
            return Err(invalid!("task '{t}' listed twice"));
        }
    }
    Ok(tasks)
}

pub fn task_list_string(tasks: &[Task]) -> String {
    tasks.iter().map(|t| t.name()).collect::<Vec<_>>().join(",")
}

fn check_pair(reference: &Frame, distorted: &Frame) -> Result<()> {
    if !reference.same_dims(distorted) {
        return Err(mismatch!(
            "frame sizes differ: {}x{} vs {}x{}",
            reference.width,
            reference.height,
            distorted.width,
            distorted.height
        ));
    }
    Ok(())
}

pub fn mse(reference: &Frame, distorted: &Frame) -> Result<f64> {
    check_pair(reference, distorted)?;
    let sum: f64 = reference
        .luma
        .iter()
        .zip(&distorted.luma)
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum();
    Ok(sum / reference.luma.len() as f64)
}

/// PSNR in dB with peak 1.0, saturating at `cap_db`.
pub fn psnr_with_cap(reference: &Frame, distorted: &Frame, cap_db: f64) -> Result<f64> {
    let e = mse(reference, distorted)?;
    if e == 0.0 {
        return Ok(cap_db);
    }
    Ok((10.0 * (1.0 / e).log10()).min(cap_db))
}

pub fn psnr(reference: &Frame, distorted: &Frame) -> Result<f64> {
    psnr_with_cap(reference, distorted, PSNR_CAP_DB)
}

/// Maps dB onto `[0, 1]` for regression: `clamp(psnr / 100, 0, 1)`.
pub fn normalize_psnr(db: f64) -> f64 {
    (db / 100.0).clamp(0.0, 1.0)
}

pub fn psnr_norm(reference: &Frame, distorted: &Frame) -> Result<f64> {
    Ok(normalize_psnr(psnr(reference, distorted)?))
}

/// Normalized 1-D Gaussian taps for the SSIM window.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-region separable filtering: output is
/// `(width - 10) x (height - 10)`.
fn filter_valid(data: &[f64], width: usize, height: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * height];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..ow {
            tmp[y * ow + x] = k
                .iter()
                .zip(&row[x..x + SSIM_WINDOW])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, a)| a * tmp[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term over the valid region.
pub(crate) fn ssim_components(
    a: &[f64],
    b: &[f64],
    width: usize,
    height: usize,
) -> Result<(f64, f64)> {
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(invalid!(
            "frame {width}x{height} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        ));
    }
    let k = ssim_kernel();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, width, height, &k);
    let mu_b = filter_valid(b, width, height, &k);
    let e_aa = filter_valid(&aa, width, height, &k);
    let e_bb = filter_valid(&bb, width, height, &k);
    let e_ab = filter_valid(&ab, width, height, &k);

    let n = mu_a.len();
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs = (2.0 * cov + C2) / (var_a + var_b + C2);
        let lum = (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    Ok((ssim_sum / n as f64, cs_sum / n as f64))
}

/// Mean of the local SSIM map (11x11 Gaussian window, sigma 1.5,
/// K1 = 0.01, K2 = 0.03, L = 1), valid region only.
pub fn ssim(reference: &Frame, distorted: &Frame) -> Result<f64> {
    check_pair(reference, distorted)?;
    let (s, _) = ssim_components(
        &reference.to_f64(),
        &distorted.to_f64(),
        reference.width,
        reference.height,
    )?;
    Ok(s)
}

/// 2x2 mean pooling; odd trailing rows/columns are dropped.
pub fn downsample2(data: &[f64], width: usize, height: usize) -> (Vec<f64>, usize, usize) {
    let (w2, h2) = (width / 2, height / 2);
    let mut out = Vec::with_capacity(w2 * h2);
    for y in 0..h2 {
        for x in 0..w2 {
            let i = 2 * y * width + 2 * x;
            out.push(0.25 * (data[i] + data[i + 1] + data[i + width] + data[i + width + 1]));
        }
    }
    (out, w2, h2)
}

/// Number of MS-SSIM scales that fit: the coarsest scale must still hold a
/// full SSIM window.
pub fn ms_ssim_scale_count(width: usize, height: usize) -> usize {
    let (mut w, mut h) = (width, height);
    let mut scales = 0;
    while scales < MS_SSIM_WEIGHTS.len() && w >= SSIM_WINDOW && h >= SSIM_WINDOW {
        scales += 1;
        w /= 2;
        h /= 2;
    }
    scales
}

/// Exponents for `scales` scales, renormalized to sum to one when fewer
/// than five scales fit.
pub fn ms_ssim_weights(scales: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..scales];
    if scales == MS_SSIM_WEIGHTS.len() {
        return w.to_vec();
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Multi-scale SSIM together with the number of scales used.
///
/// Per-scale terms are clamped at zero before exponentiation so that the
/// product stays real for anti-correlated content.
pub fn ms_ssim_with_scales(reference: &Frame, distorted: &Frame) -> Result<(f64, usize)> {
    check_pair(reference, distorted)?;
    let scales = ms_ssim_scale_count(reference.width, reference.height);
    if scales < 2 {
        return Err(invalid!(
            "frame {}x{} too small for two MS-SSIM scales",
            reference.width,
            reference.height
        ));
    }
    let weights = ms_ssim_weights(scales);
    let (mut a, mut b) = (reference.to_f64(), distorted.to_f64());
    let (mut w, mut h) = (reference.width, reference.height);
    let mut product = 1.0;
    for (s, weight) in weights.iter().enumerate() {
        let (ssim_val, cs) = ssim_components(&a, &b, w, h)?;
        let term = if s + 1 == scales { ssim_val } else { cs };
        product *= term.max(0.0).powf(*weight);
        if s + 1 < scales {
            let (a2, w2, h2) = downsample2(&a, w, h);
            let (b2, _, _) = downsample2(&b, w, h);
            a = a2;
            b = b2;
            w = w2;
            h = h2;
        }
    }
    Ok((product, scales))
}

pub fn ms_ssim(reference: &Frame, distorted: &Frame) -> Result<f64> {
    ms_ssim_with_scales(reference, distorted).map(|(v, _)| v)
}

/// Per-frame and clip-mean proxy targets for one distorted clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyScores {
    pub tasks: Vec<Task>,
    /// `per_frame[frame][task]`.
    pub per_frame: Vec<Vec<f64>>,
    pub clip_mean: Vec<f64>,
    /// Scale count used for MS-SSIM, when that task was requested.
    pub ms_ssim_scales: Option<usize>,
}

impl ProxyScores {
    pub fn from_per_frame(tasks: Vec<Task>, per_frame: Vec<Vec<f64>>) -> Self {
        let n = per_frame.len() as f64;
        let clip_mean = (0..tasks.len())
            .map(|t| per_frame.iter().map(|row| row[t]).sum::<f64>() / n)
            .collect();
        ProxyScores {
            tasks,
            per_frame,
            clip_mean,
            ms_ssim_scales: None,
        }
    }

    pub fn task_index(&self, task: Task) -> Option<usize> {
        self.tasks.iter().position(|t| *t == task)
    }
}

pub fn compute_proxy_targets(
    reference: &Clip,
    distorted: &Clip,
    tasks: &[Task],
) -> Result<ProxyScores> {
    if tasks.is_empty() {
        return Err(invalid!("no tasks requested"));
    }
    if reference.content_id != distorted.content_id {
        return Err(mismatch!(
            "content ids differ: {} vs {}",
            reference.content_id,
            distorted.content_id
        ));
    }
    if reference.frames.len() != distorted.frames.len() {
        return Err(mismatch!(
            "frame counts differ: {} vs {}",
            reference.frames.len(),
            distorted.frames.len()
        ));
    }
    let per_frame = reference
        .frames
        .iter()
        .zip(&distorted.frames)
        .map(|(r, d)| {
            tasks
                .iter()
                .map(|t| t.score(r, d))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = ProxyScores::from_per_frame(tasks.to_vec(), per_frame);
    if tasks.contains(&Task::MsSsim) {
        scores.ms_ssim_scales = Some(ms_ssim_scale_count(reference.width(), reference.height()));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{distort_ladder, generate_contents, LadderSpec};

    fn frame(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> Frame {
        let luma = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Frame::new(w, h, luma).unwrap()
    }

    fn checker(w: usize, h: usize) -> Frame {
        frame(w, h, |x, y| ((x + y) % 2) as f32)
    }

    #[test]
    fn psnr_cases() {
        let x = frame(32, 32, |x, y| ((x * 7 + y * 3) % 13) as f32 / 20.0);
        assert_eq!(psnr(&x, &x).unwrap(), 100.0);
        // Dark base values keep the f32 rounding of `x + 0.1` below 1e-8.
        let dark = frame(32, 32, |x, y| ((x * 7 + y * 3) % 9) as f32 / 256.0);
        let shifted = frame(32, 32, |x, y| ((x * 7 + y * 3) % 9) as f32 / 256.0 + 0.1);
        assert!((psnr(&dark, &shifted).unwrap() - 20.0).abs() < 1e-6);
        let c = checker(32, 32);
        let inv = frame(32, 32, |x, y| 1.0 - ((x + y) % 2) as f32);
        assert_eq!(psnr(&c, &inv).unwrap(), 0.0);
    }

    #[test]
    fn psnr_norm_map() {
        assert_eq!(normalize_psnr(100.0), 1.0);
        assert!((normalize_psnr(20.0) - 0.2).abs() < 1e-15);
        assert_eq!(normalize_psnr(0.0), 0.0);
        assert_eq!(normalize_psnr(140.0), 1.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = checker(32, 32);
        let b = checker(32, 33);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
        assert!(ms_ssim(&a, &b).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let x = frame(32, 32, |x, y| {
            (0.5 + 0.4 * ((x as f32) * 0.9).sin() * ((y as f32) * 0.7).cos()).clamp(0.0, 1.0)
        });
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        let c = checker(32, 32);
        let inv = frame(32, 32, |x, y| 1.0 - ((x + y) % 2) as f32);
        assert!(ssim(&c, &inv).unwrap() < 0.0);
    }

    #[test]
    fn ssim_window_too_large() {
        // Frames cannot be smaller than 16 pixels, so exercise the raw path.
        assert!(ssim_components(&[0.0; 100], &[0.0; 100], 10, 10).is_err());
    }

    #[test]
    fn ms_ssim_scales_and_weights() {
        assert_eq!(ms_ssim_scale_count(176, 176), 5);
        assert_eq!(ms_ssim_scale_count(175, 200), 4);
        assert_eq!(ms_ssim_scale_count(96, 96), 4);
        assert_eq!(ms_ssim_scale_count(64, 64), 3);
        assert_eq!(ms_ssim_scale_count(21, 64), 1);
        assert!((MS_SSIM_WEIGHTS.iter().sum::<f64>() - 1.0).abs() <= 1e-4);
        for s in 2..=4 {
            assert!((ms_ssim_weights(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let a = checker(21, 32);
        assert!(ms_ssim(&a, &a).is_err());
        let x = checker(64, 64);
        let (v, s) = ms_ssim_with_scales(&x, &x).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        assert_eq!(s, 3);
    }

    #[test]
    fn ms_ssim_decreases_along_ladder() {
        let clip = &generate_contents(4, 1, 2, 96, 96).unwrap()[0];
        let ladder = distort_ladder(clip, &LadderSpec::default_source(), 4).unwrap();
        let scores: Vec<f64> = ladder
            .iter()
            .map(|d| ms_ssim(&clip.frames[0], &d.frames[0]).unwrap())
            .collect();
        assert!(scores.windows(2).all(|w| w[0] > w[1]), "{scores:?}");
    }

    #[test]
    fn proxy_targets_identity_and_means() {
        let clip = &generate_contents(4, 1, 3, 64, 64).unwrap()[0];
        let mut d = clip.clone();
        d.distortion_level = 1;
        let s = compute_proxy_targets(clip, &d, &Task::ALL).unwrap();
        for row in &s.per_frame {
            for v in row {
                assert!((v - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(s.ms_ssim_scales, Some(3));

        let m = ProxyScores::from_per_frame(vec![Task::Ssim], vec![vec![0.9], vec![0.7]]);
        assert!((m.clip_mean[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn proxy_targets_reject_misaligned() {
        let clips = generate_contents(4, 2, 3, 32, 32).unwrap();
        assert!(compute_proxy_targets(&clips[0], &clips[1], &[Task::Ssim]).is_err());
        let mut short = clips[0].clone();
        short.frames.pop();
        assert!(compute_proxy_targets(&clips[0], &short, &[Task::Ssim]).is_err());
    }

    #[test]
    fn task_parsing() {
        assert_eq!(
            parse_tasks("ssim,ms_ssim,psnr_norm").unwrap(),
            Task::ALL.to_vec()
        );
        assert!(parse_tasks("ssim,ssim").is_err());
        assert!(parse_tasks("vmaf").is_err());
        assert!(parse_tasks("").is_err());
    }
}
