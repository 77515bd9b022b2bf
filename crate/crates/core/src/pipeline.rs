//! Stage functions behind the command-line tool. Each stage reads its
//! inputs from artifacts, writes its outputs as artifacts, and stamps every
//! CSV with a provenance header derived from its settings and the digests
//! of its inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{invalid, mismatch, parse_err, Result};
use crate::eval::{
    few_shot_protocol, fmt_opt, scatter_svg, standard_split_protocol, zero_shot_protocol,
    CorrelationReport, EvalData, MedianReport, RunRow, ZeroShotConfig,
};
use crate::fr::{compute_proxy_targets, ms_ssim_scale_count, task_list_string, Task};
use crate::io::{
    clip_id, read_csv_rows, read_manifest, write_clips, write_csv_with_notes, write_text,
    FeatureRow, FeatureTable, LabelRow, LabelTable, Manifest, ManifestEntry, Provenance,
    TargetsTable,
};
use crate::model::{Model, ModelConfig};
use crate::regress::{grid_search_cv, ridge_fit, CvResult, Regressor, RegressorKind, SvrGrid};
use crate::synth::{distort_ladder, generate_contents_styled, mos_from_ms_ssim, Domain};
use crate::trainer::{pretrain, TrainConfig, TrainLog, TrainSample};

/// First 8 bytes of the SHA-256 of a file, as hex.
pub fn file_digest(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(crate::Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        )));
    }
    let d = Sha256::digest(fs::read(path)?);
    Ok(d[..8].iter().map(|b| format!("{b:02x}")).collect())
}

fn settings(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

/// Loads a manifest and checks every clip file before any work starts.
pub fn open_manifest(path: &Path) -> Result<Manifest> {
    let m = read_manifest(path)?;
    m.validate()?;
    Ok(m)
}

// ---------------------------------------------------------------------------
// generate

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSpec {
    pub seed: u64,
    pub contents: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub domain: Domain,
    pub first_id: u32,
}

impl GenerateSpec {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        GenerateSpec {
            seed: cfg.seed,
            contents: cfg.data.contents,
            frames: cfg.data.frames,
            width: cfg.data.width,
            height: cfg.data.height,
            domain: cfg.data.domain,
            first_id: cfg.data.first_id,
        }
    }
}

/// Writes reference clips and their five distorted versions to `out`.
pub fn generate(out: &Path, spec: &GenerateSpec) -> Result<Manifest> {
    let refs = generate_contents_styled(
        spec.seed,
        spec.first_id,
        spec.contents,
        spec.frames,
        spec.width,
        spec.height,
        &spec.domain.style(),
    )?;
    let ladder = spec.domain.ladder();
    let per_content = refs
        .into_par_iter()
        .map(|r| {
            let mut clips = distort_ladder(&r, &ladder, spec.seed)?;
            clips.insert(0, r);
            Ok(clips)
        })
        .collect::<Result<Vec<_>>>()?;
    let clips: Vec<_> = per_content.into_iter().flatten().collect();
    let comments = vec![
        format!("seed={}", spec.seed),
        format!("domain={}", spec.domain.name()),
        format!("resolution={}x{}", spec.width, spec.height),
        "metrics are computed at the stored resolution".to_string(),
    ];
    write_clips(out, &clips, &comments)
}

// ---------------------------------------------------------------------------
// compute-fr

/// Proxy targets for every distorted clip plus an MS-SSIM-derived label
/// for every clip (references included).
pub fn compute_fr(manifest: &Manifest, tasks: &[Task]) -> Result<(TargetsTable, LabelTable)> {
    if tasks.is_empty() {
        return Err(invalid!("no tasks requested"));
    }
    let mut entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    entries.sort_by_key(|e| (e.content_id, e.level));
    let scored = entries
        .par_iter()
        .map(|e| {
            let reference = manifest.load(
                manifest
                    .find(e.content_id, 0)
                    .ok_or_else(|| invalid!("content {} has no reference clip", e.content_id))?,
            )?;
            let clip = manifest.load(e)?;
            let ms = compute_proxy_targets(&reference, &clip, &[Task::MsSsim])?;
            let label = mos_from_ms_ssim(ms.clip_mean[0]);
            let scores = if e.level > 0 {
                Some(compute_proxy_targets(&reference, &clip, tasks)?)
            } else {
                None
            };
            Ok((e.content_id, e.level, scores, label))
        })
        .collect::<Result<Vec<_>>>()?;
    let with_scores: Vec<_> = scored
        .iter()
        .filter_map(|(c, l, s, _)| s.as_ref().map(|s| (*c, *l, s)))
        .collect();
    if with_scores.is_empty() {
        return Err(invalid!("manifest has no distorted clips"));
    }
    let targets = TargetsTable::from_scores(&with_scores)?;
    let labels = LabelTable {
        rows: scored
            .iter()
            .map(|(c, l, _, label)| LabelRow {
                clip_id: clip_id(*c, *l),
                content_id: *c,
                level: *l,
                label: *label,
            })
            .collect(),
    };
    Ok((targets, labels))
}

/// Labels are MOS surrogates derived from MS-SSIM, not subjective scores.
/// Every table built from them carries this note.
pub const SURROGATE_NOTE: &str = "labels=surrogate_mos (1 + 4 * clip-mean MS-SSIM)";

/// Metadata lines for the targets table: the MS-SSIM scale count used at
/// each stored resolution.
pub fn targets_notes(manifest: &Manifest) -> Vec<String> {
    let mut sizes: Vec<(usize, usize)> = manifest
        .entries
        .iter()
        .map(|e| (e.width, e.height))
        .collect();
    sizes.sort();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|(w, h)| format!("ms_ssim_scales={} at {w}x{h}", ms_ssim_scale_count(w, h)))
        .collect()
}

pub fn compute_fr_provenance(manifest: &Manifest, tasks: &[Task]) -> Result<Provenance> {
    let s = settings(&[
        ("stage", "compute-fr".into()),
        ("manifest", file_digest(&manifest.path())?),
        ("tasks", task_list_string(tasks)),
    ]);
    Ok(Provenance::new(&s, 0))
}

// ---------------------------------------------------------------------------
// pretrain

/// One sample per kept frame of every distorted clip. Frames are kept when
/// their index is a multiple of `stride`.
pub fn training_samples(
    manifest: &Manifest,
    targets: &TargetsTable,
    tasks: &[Task],
    stride: usize,
) -> Result<Vec<TrainSample>> {
    if stride == 0 {
        return Err(invalid!("frame stride must be at least 1"));
    }
    let cols = tasks
        .iter()
        .map(|t| {
            targets
                .tasks
                .iter()
                .position(|x| x == t)
                .ok_or_else(|| mismatch!("targets lack task {}", t.name()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries: Vec<&ManifestEntry> =
        manifest.entries.iter().filter(|e| e.level > 0).collect();
    entries.sort_by_key(|e| (e.content_id, e.level));
    // Check coverage up front so a bad targets file fails before any clip I/O.
    for e in &entries {
        let n = targets.per_frame(e.content_id, e.level).len();
        if n != e.frames {
            return Err(mismatch!(
                "clip c{} l{} has {} frames but {n} target rows",
                e.content_id,
                e.level,
                e.frames
            ));
        }
    }
    let per_clip = entries
        .par_iter()
        .map(|e| {
            let clip = manifest.load(e)?;
            let rows = targets.per_frame(e.content_id, e.level);
            Ok(clip
                .frames
                .into_iter()
                .zip(rows)
                .enumerate()
                .filter(|(i, _)| i % stride == 0)
                .map(|(i, (frame, row))| TrainSample {
                    content_id: e.content_id,
                    level: e.level,
                    frame_index: i,
                    frame,
                    targets: cols.iter().map(|c| row.values[*c]).collect(),
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<_> = per_clip.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(invalid!("no training samples in manifest"));
    }
    Ok(samples)
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.bin")
}

pub const FINAL_CHECKPOINT: &str = "final.bin";
pub const TRAIN_LOG: &str = "train_log.csv";

/// Trains a fresh model and writes per-epoch checkpoints, `final.bin` and
/// the step log into `out_dir`. Returns the model as reloaded from
/// `final.bin`, so callers see exactly the stored weights.
pub fn run_pretrain(
    manifest: &Manifest,
    targets_path: &Path,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<(Model, TrainLog)> {
    config.validate()?;
    let targets = TargetsTable::read(targets_path)?;
    let first = manifest
        .entries
        .first()
        .ok_or_else(|| invalid!("empty manifest"))?;
    let samples = training_samples(manifest, &targets, &config.tasks, config.frame_stride)?;
    let mut s = settings(&[
        ("stage", "pretrain".into()),
        ("manifest", file_digest(&manifest.path())?),
        ("targets", file_digest(targets_path)?),
    ]);
    for (k, v) in config.pairs() {
        s.insert(format!("train.{k}"), v);
    }
    let prov = Provenance::new(&s, config.seed);

    fs::create_dir_all(out_dir)?;
    let mut model = Model::new(
        ModelConfig::desk(first.width, first.height),
        &config.tasks,
        config.seed,
    )?;
    let log = pretrain(&mut model, &samples, config, |epoch, m, _| {
        m.save(&out_dir.join(checkpoint_name(epoch)))
    })?;
    model.save(&out_dir.join(FINAL_CHECKPOINT))?;
    log.write_csv(&out_dir.join(TRAIN_LOG), &prov)?;
    let stored = Model::load(&out_dir.join(FINAL_CHECKPOINT))?;
    Ok((stored, log))
}

// ---------------------------------------------------------------------------
// extract-features

/// Mean-pooled embedding of each clip over the frames whose index is a
/// multiple of `stride`. References are skipped unless `include_reference`.
pub fn extract_features(
    manifest: &Manifest,
    model: &Model,
    include_reference: bool,
    stride: usize,
) -> Result<FeatureTable> {
    if stride == 0 {
        return Err(invalid!("frame stride must be at least 1"));
    }
    let mut entries: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| include_reference || e.level > 0)
        .collect();
    entries.sort_by_key(|e| (e.content_id, e.level));
    if entries.is_empty() {
        return Err(invalid!("no clips to embed"));
    }
    let rows = entries
        .par_iter()
        .map(|e| {
            let clip = manifest.load(e)?;
            let frames: Vec<_> = clip.frames.into_iter().step_by(stride).collect();
            Ok(FeatureRow {
                clip_id: clip_id(e.content_id, e.level),
                content_id: e.content_id,
                level: e.level,
                values: model.embed_clip(&frames)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureTable { rows })
}

pub fn features_provenance(
    manifest: &Manifest,
    checkpoint: &Path,
    include_reference: bool,
    stride: usize,
) -> Result<Provenance> {
    let s = settings(&[
        ("stage", "extract-features".into()),
        ("manifest", file_digest(&manifest.path())?),
        ("checkpoint", file_digest(checkpoint)?),
        ("include_reference", include_reference.to_string()),
        ("stride", stride.to_string()),
    ]);
    Ok(Provenance::new(&s, 0))
}

// ---------------------------------------------------------------------------
// fit-head

/// Fits a head on all labeled clips. SVR selects C and gamma by
/// content-disjoint CV and returns the search table.
pub fn fit_head(
    data: &EvalData,
    kind: RegressorKind,
    lambda: f64,
    folds: usize,
    seed: u64,
) -> Result<(Regressor, Option<CvResult>)> {
    match kind {
        RegressorKind::Ridge => Ok((Regressor::Ridge(ridge_fit(&data.x, &data.y, lambda)?), None)),
        RegressorKind::Svr => {
            let grid = SvrGrid::default_for(&data.x, &data.y)?;
            let cv = grid_search_cv(&data.x, &data.y, &data.contents, &grid, folds, seed)?;
            Ok((Regressor::Svr(cv.model.clone()), Some(cv)))
        }
    }
}

pub fn write_cv_table(path: &Path, prov: &Provenance, cv: &CvResult) -> Result<()> {
    let header: Vec<String> = ["c", "gamma", "epsilon", "mean_srcc", "selected"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = cv
        .cells
        .iter()
        .map(|cell| {
            vec![
                cell.c.to_string(),
                cell.gamma.to_string(),
                cv.epsilon.to_string(),
                cell.mean_srcc.to_string(),
                (cell.c == cv.c && cell.gamma == cv.gamma).to_string(),
            ]
        })
        .collect();
    write_csv_with_notes(path, prov, &[SURROGATE_NOTE.into()], &header, &rows)
}

// ---------------------------------------------------------------------------
// evaluate

pub const REPORT_COLUMNS: [&str; 12] = [
    "protocol", "k", "run", "n_train", "n_test", "c", "gamma", "mapping", "srcc", "krcc", "plcc",
    "rmse",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Protocol {
    Standard {
        runs: usize,
    },
    FewShot {
        ks: Vec<usize>,
        samplings: usize,
        kind: RegressorKind,
        lambda: f64,
    },
    ZeroShot {
        source: EvalData,
        config: ZeroShotConfig,
    },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Standard { .. } => "standard",
            Protocol::FewShot { .. } => "fewshot",
            Protocol::ZeroShot { .. } => "zeroshot",
        }
    }
}

/// Evaluation output: one CSV row per run plus one `median` row per K.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: &'static str,
    pub rows: Vec<Vec<String>>,
    /// `(k, median)` per evaluated K; `k` is 0 outside few-shot.
    pub medians: Vec<(usize, MedianReport)>,
    /// Predictions and labels of the first run, for plotting.
    pub scatter: Option<(Vec<f64>, Vec<f64>, CorrelationReport)>,
    pub reduced_folds: bool,
}

fn run_row(protocol: &str, k: usize, r: &RunRow) -> Vec<String> {
    let [s, kr, p, rm] = r.report.values();
    vec![
        protocol.to_string(),
        k.to_string(),
        r.run_id.to_string(),
        r.n_train.to_string(),
        r.n_test.to_string(),
        fmt_opt(r.c),
        fmt_opt(r.gamma),
        r.report.mapping.name().to_string(),
        fmt_opt(s),
        fmt_opt(kr),
        fmt_opt(p),
        fmt_opt(rm),
    ]
}

fn median_row(protocol: &str, k: usize, m: &MedianReport) -> Vec<String> {
    let [s, kr, p, rm] = m.values();
    vec![
        protocol.to_string(),
        k.to_string(),
        "median".to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        fmt_opt(s),
        fmt_opt(kr),
        fmt_opt(p),
        fmt_opt(rm),
    ]
}

pub fn evaluate(data: &EvalData, protocol: &Protocol, seed: u64) -> Result<EvalReport> {
    let name = protocol.name();
    let mut out = EvalReport {
        protocol: name,
        rows: Vec::new(),
        medians: Vec::new(),
        scatter: None,
        reduced_folds: false,
    };
    match protocol {
        Protocol::Standard { runs } => {
            let r = standard_split_protocol(data, *runs, seed)?;
            out.rows
                .extend(r.runs.iter().map(|run| run_row(name, 0, run)));
            out.rows.push(median_row(name, 0, &r.median));
            out.scatter = r
                .runs
                .first()
                .map(|f| (f.predictions.clone(), f.labels.clone(), f.report.clone()));
            out.medians.push((0, r.median));
            out.reduced_folds = r.reduced_folds;
        }
        Protocol::FewShot {
            ks,
            samplings,
            kind,
            lambda,
        } => {
            for &k in ks {
                let r = few_shot_protocol(data, k, *kind, *samplings, seed, *lambda)?;
                out.rows
                    .extend(r.runs.iter().map(|run| run_row(name, k, run)));
                out.rows.push(median_row(name, k, &r.median));
                if out.scatter.is_none() {
                    out.scatter = r
                        .runs
                        .first()
                        .map(|f| (f.predictions.clone(), f.labels.clone(), f.report.clone()));
                }
                out.medians.push((k, r.median));
            }
        }
        Protocol::ZeroShot { source, config } => {
            let r = zero_shot_protocol(source, data, config)?;
            let m = MedianReport::from_reports([&r.report]);
            let row = RunRow {
                run_id: 0,
                n_train: source.len(),
                n_test: data.len(),
                c: None,
                gamma: None,
                report: r.report.clone(),
                predictions: r.predictions.clone(),
                labels: data.y.clone(),
            };
            out.rows.push(run_row(name, 0, &row));
            out.rows.push(median_row(name, 0, &m));
            out.scatter = Some((r.predictions, data.y.clone(), r.report));
            out.medians.push((0, m));
        }
    }
    Ok(out)
}

impl EvalReport {
    pub fn write(&self, path: &Path, prov: &Provenance) -> Result<()> {
        let header: Vec<String> = REPORT_COLUMNS.iter().map(|s| s.to_string()).collect();
        write_csv_with_notes(path, prov, &[SURROGATE_NOTE.into()], &header, &self.rows)
    }

    pub fn write_svg(&self, path: &Path) -> Result<()> {
        let (pred, labels, report) = self
            .scatter
            .as_ref()
            .ok_or_else(|| invalid!("no predictions to plot"))?;
        let title = format!("{} run 0: SRCC {}", self.protocol, fmt_opt(report.srcc));
        write_text(path, &scatter_svg(pred, labels, &report.mapping, &title))
    }
}

// ---------------------------------------------------------------------------
// report

/// Median rows gathered from evaluation CSVs, tagged with their file stem.
pub fn collect_medians(inputs: &[PathBuf]) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for p in inputs {
        let (header, rows) = read_csv_rows(p)?;
        if header != REPORT_COLUMNS {
            return Err(parse_err!("{}: not an evaluation report", p.display()));
        }
        let source = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for r in rows.into_iter().filter(|r| r[2] == "median") {
            let mut row = vec![source.clone(), r[0].clone(), r[1].clone()];
            row.extend(r[8..12].iter().cloned());
            out.push(row);
        }
    }
    if out.is_empty() {
        return Err(invalid!("no median rows found in the inputs"));
    }
    Ok(out)
}

pub const SUMMARY_COLUMNS: [&str; 7] = ["source", "protocol", "k", "srcc", "krcc", "plcc", "rmse"];

/// Renders rows as a fixed-width text table.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut s = line(header.to_vec());
    s.push('\n');
    for r in rows {
        s.push_str(&line(r.iter().map(String::as_str).collect()));
        s.push('\n');
    }
    s
}

// ---------------------------------------------------------------------------
// ablate

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub tasks: Vec<Task>,
    pub median: MedianReport,
}

pub const ABLATION_COLUMNS: [&str; 6] = ["variant", "tasks", "srcc", "krcc", "plcc", "rmse"];

pub const SINGLE_TASK: [Task; 1] = [Task::PsnrNorm];

/// Pretrains a single-task (PSNR only) and a multi-task encoder under the
/// same settings, embeds the evaluation clips with each, and scores both
/// with the standard-split protocol.
pub fn ablate(
    cfg: &PipelineConfig,
    train_manifest: &Manifest,
    train_targets: &Path,
    eval_manifest: &Manifest,
    eval_labels: &LabelTable,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    let variants: [(&'static str, Vec<Task>); 2] =
        [("ST", SINGLE_TASK.to_vec()), ("MTL", cfg.tasks.clone())];
    let mut rows = Vec::new();
    for (variant, tasks) in variants {
        let mut tc = cfg.train.clone();
        tc.tasks = tasks.clone();
        let dir = out_dir.join(variant.to_lowercase());
        let (model, _) = run_pretrain(train_manifest, train_targets, &tc, &dir)?;
        let features = extract_features(
            eval_manifest,
            &model,
            cfg.features.include_reference,
            cfg.features.stride,
        )?;
        let data = EvalData::from_tables(&features, eval_labels)?;
        let r = standard_split_protocol(&data, cfg.eval.runs, cfg.seed)?;
        rows.push(AblationRow {
            variant,
            tasks,
            median: r.median,
        });
    }
    Ok(rows)
}

pub fn ablation_rows(rows: &[AblationRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let mut v = vec![
                r.variant.to_string(),
                task_list_string(&r.tasks).replace(',', "+"),
            ];
            v.extend(r.median.values().iter().map(|x| fmt_opt(*x)));
            v
        })
        .collect()
}

pub fn write_ablation(path: &Path, prov: &Provenance, rows: &[AblationRow]) -> Result<()> {
    let header: Vec<String> = ABLATION_COLUMNS.iter().map(|s| s.to_string()).collect();
    write_csv_with_notes(
        path,
        prov,
        &[SURROGATE_NOTE.into()],
        &header,
        &ablation_rows(rows),
    )
}
