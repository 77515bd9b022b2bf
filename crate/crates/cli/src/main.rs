//! `proxyvqa` command-line driver. Every stage reads and writes files only;
//! see `proxyvqa help <stage>` for flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use proxyvqa::config::{parse_list, parse_size, PipelineConfig};
use proxyvqa::eval::{EvalData, ZeroShotConfig};
use proxyvqa::fr::{parse_tasks, task_list_string};
use proxyvqa::io::{FeatureTable, LabelTable, Provenance, TargetsTable};
use proxyvqa::model::Model;
use proxyvqa::pipeline::{self, GenerateSpec, Protocol};
use proxyvqa::regress::RegressorKind;
use proxyvqa::synth::Domain;
use proxyvqa::{Error, Result};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

const AFTER_HELP: &str = "\
Exit status:
  0  success
  2  validation error: bad flags or config, missing or malformed artifacts
  3  runtime error: numerical failure or I/O error during computation

Path flags marked [env: ...] can be set through the environment.";

#[derive(Parser)]
#[command(name = "proxyvqa", version, about = "Proxy-supervised quality pretraining pipeline", after_help = AFTER_HELP)]
struct Cli {
    /// Worker threads. `1` runs the serial reference path.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Sectioned key = value config file.
    #[arg(long, env = "PROXYVQA_CONFIG")]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig> {
        match &self.config {
            Some(p) => PipelineConfig::load(p),
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Standard,
    Fewshot,
    Zeroshot,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize reference clips and their distortion ladders.
    Generate {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Output directory for clips and manifest.txt.
        #[arg(long, env = "PROXYVQA_DATA")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        contents: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        /// Frame size as WxH or N.
        #[arg(long)]
        size: Option<String>,
        /// source or target.
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        first_id: Option<u32>,
    },
    /// Score distorted clips against their references; also writes labels.
    ComputeFr {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Clip directory or manifest file.
        #[arg(long, env = "PROXYVQA_DATA")]
        manifest: PathBuf,
        /// Comma-separated task list (ssim, ms_ssim, psnr_norm).
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the MS-SSIM-derived label table.
        #[arg(long)]
        labels: PathBuf,
    },
    /// Pretrain the shared encoder on proxy targets.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, env = "PROXYVQA_DATA")]
        manifest: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        tasks: Option<String>,
    },
    /// Embed clips with a frozen checkpoint and mean-pool over frames.
    ExtractFeatures {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, env = "PROXYVQA_DATA")]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also embed the level-0 reference clips.
        #[arg(long)]
        include_reference: bool,
        /// Embed every n-th frame (default from config, else 1).
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Fit a Ridge or SVR head on features and labels.
    FitHead {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// ridge or svr.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// CSV of the SVR grid search.
        #[arg(long)]
        cv_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an evaluation protocol and write per-run metrics.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Training side for the zero-shot protocol.
        #[arg(long)]
        source_features: Option<PathBuf>,
        #[arg(long)]
        source_labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Scatter plot of the first run.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        /// Comma-separated few-shot K values.
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        samplings: Option<usize>,
        /// Few-shot regressor: ridge or svr.
        #[arg(long)]
        regressor: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Collect median rows from evaluation reports into one table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-task vs multi-task pretraining under identical settings.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Pretraining clips.
        #[arg(long, env = "PROXYVQA_DATA")]
        manifest: PathBuf,
        /// Targets for the pretraining clips (all configured tasks).
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        eval_manifest: PathBuf,
        #[arg(long)]
        eval_labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn digest_settings(
    pairs: &[(&str, String)],
    cfg: &PipelineConfig,
) -> std::collections::BTreeMap<String, String> {
    let mut s = cfg.settings();
    for (k, v) in pairs {
        s.insert(k.to_string(), v.clone());
    }
    s
}

fn load_eval(features: &Path, labels: &Path) -> Result<EvalData> {
    EvalData::from_tables(&FeatureTable::read(features)?, &LabelTable::read(labels)?)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            cfg,
            out,
            seed,
            contents,
            frames,
            size,
            domain,
            first_id,
        } => {
            let mut c = cfg.load()?;
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(n) = contents {
                c.data.contents = n;
            }
            if let Some(n) = frames {
                c.data.frames = n;
            }
            if let Some(s) = size {
                (c.data.width, c.data.height) = parse_size(&s)?;
            }
            if let Some(d) = domain {
                c.data.domain = Domain::parse(&d)?;
            }
            if let Some(f) = first_id {
                c.data.first_id = f;
            }
            c.validate()?;
            let m = pipeline::generate(&out, &GenerateSpec::from_config(&c))?;
            println!("wrote {} clips to {}", m.entries.len(), out.display());
        }
        Command::ComputeFr {
            cfg,
            manifest,
            tasks,
            out,
            labels,
        } => {
            let c = cfg.load()?;
            let tasks = match tasks {
                Some(t) => parse_tasks(&t)?,
                None => c.tasks.clone(),
            };
            let m = pipeline::open_manifest(&manifest)?;
            let (targets, label_table) = pipeline::compute_fr(&m, &tasks)?;
            let prov = pipeline::compute_fr_provenance(&m, &tasks)?;
            targets.write_with_notes(&out, &prov, &pipeline::targets_notes(&m))?;
            label_table.write_with_notes(&labels, &prov, &[pipeline::SURROGATE_NOTE.into()])?;
            println!(
                "scored {} clips for {}",
                label_table.rows.len(),
                task_list_string(&tasks)
            );
        }
        Command::Pretrain {
            cfg,
            manifest,
            targets,
            out,
            seed,
            epochs,
            tasks,
        } => {
            let c = cfg.load()?;
            let mut tc = c.train.clone();
            if let Some(s) = seed {
                tc.seed = s;
            }
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            if let Some(t) = tasks {
                tc.tasks = parse_tasks(&t)?;
            }
            tc.validate()?;
            let m = pipeline::open_manifest(&manifest)?;
            let (_, log) = pipeline::run_pretrain(&m, &targets, &tc, &out)?;
            for e in 0..tc.epochs {
                if let Some(v) = log.epoch_mean_joint(e) {
                    println!("epoch {e}: mean joint loss {v}");
                }
            }
        }
        Command::ExtractFeatures {
            cfg,
            manifest,
            checkpoint,
            out,
            include_reference,
            stride,
        } => {
            let c = cfg.load()?;
            let include = include_reference || c.features.include_reference;
            let stride = stride.unwrap_or(c.features.stride);
            let m = pipeline::open_manifest(&manifest)?;
            let model = Model::load(&checkpoint)?;
            let table = pipeline::extract_features(&m, &model, include, stride)?;
            table.write(
                &out,
                &pipeline::features_provenance(&m, &checkpoint, include, stride)?,
            )?;
            println!("wrote {} x {} features", table.rows.len(), table.dim());
        }
        Command::FitHead {
            cfg,
            features,
            labels,
            model,
            out,
            cv_out,
            seed,
        } => {
            let mut c = cfg.load()?;
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(k) = model {
                c.head.model = RegressorKind::parse(&k)?;
            }
            let data = load_eval(&features, &labels)?;
            let (reg, cv) =
                pipeline::fit_head(&data, c.head.model, c.head.lambda, c.head.folds, c.seed)?;
            reg.save(&out)?;
            if let (Some(path), Some(cv)) = (cv_out, &cv) {
                let s = digest_settings(
                    &[
                        ("stage", "fit-head".into()),
                        ("features", pipeline::file_digest(&features)?),
                        ("labels", pipeline::file_digest(&labels)?),
                    ],
                    &c,
                );
                pipeline::write_cv_table(&path, &Provenance::new(&s, c.seed), cv)?;
            }
            match cv {
                Some(cv) => println!("svr: C={} gamma={} epsilon={}", cv.c, cv.gamma, cv.epsilon),
                None => println!("ridge: lambda={}", c.head.lambda),
            }
        }
        Command::Evaluate {
            cfg,
            protocol,
            features,
            labels,
            source_features,
            source_labels,
            out,
            svg,
            runs,
            k,
            samplings,
            regressor,
            seed,
        } => {
            let mut c = cfg.load()?;
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(r) = runs {
                c.eval.runs = r;
            }
            if let Some(k) = k {
                c.eval.k = parse_list(&k)?;
            }
            if let Some(s) = samplings {
                c.eval.samplings = s;
            }
            if let Some(r) = regressor {
                c.eval.regressor = RegressorKind::parse(&r)?;
            }
            c.validate()?;
            let mut inputs = vec![
                ("stage", "evaluate".to_string()),
                ("features", pipeline::file_digest(&features)?),
                ("labels", pipeline::file_digest(&labels)?),
            ];
            let proto = match protocol {
                ProtocolArg::Standard => Protocol::Standard { runs: c.eval.runs },
                ProtocolArg::Fewshot => Protocol::FewShot {
                    ks: c.eval.k.clone(),
                    samplings: c.eval.samplings,
                    kind: c.eval.regressor,
                    lambda: c.head.lambda,
                },
                ProtocolArg::Zeroshot => {
                    let (Some(sf), Some(sl)) = (&source_features, &source_labels) else {
                        return Err(Error::Invalid(
                            "zeroshot needs --source-features and --source-labels".into(),
                        ));
                    };
                    inputs.push(("source_features", pipeline::file_digest(sf)?));
                    inputs.push(("source_labels", pipeline::file_digest(sl)?));
                    Protocol::ZeroShot {
                        source: load_eval(sf, sl)?,
                        config: ZeroShotConfig {
                            hidden: c.eval.zs_hidden,
                            epochs: c.eval.zs_epochs,
                            learning_rate: c.eval.zs_learning_rate,
                            momentum: c.train.momentum,
                            batch_size: c.eval.zs_batch_size,
                            seed: c.seed,
                        },
                    }
                }
            };
            inputs.push(("protocol", proto.name().into()));
            let data = load_eval(&features, &labels)?;
            let report = pipeline::evaluate(&data, &proto, c.seed)?;
            report.write(
                &out,
                &Provenance::new(&digest_settings(&inputs, &c), c.seed),
            )?;
            if let Some(p) = svg {
                report.write_svg(&p)?;
            }
            if report.reduced_folds {
                eprintln!("note: some runs had fewer training contents than CV folds");
            }
            for (k, m) in &report.medians {
                let [s, kr, p, r] = m.values();
                let f = proxyvqa::eval::fmt_opt;
                println!(
                    "{} k={k}: SRCC {} KRCC {} PLCC {} RMSE {}",
                    report.protocol,
                    f(s),
                    f(kr),
                    f(p),
                    f(r)
                );
            }
        }
        Command::Report { inputs, out } => {
            let rows = pipeline::collect_medians(&inputs)?;
            let mut s = std::collections::BTreeMap::new();
            s.insert("stage".to_string(), "report".to_string());
            for (i, p) in inputs.iter().enumerate() {
                s.insert(format!("input{i}"), pipeline::file_digest(p)?);
            }
            let header: Vec<String> = pipeline::SUMMARY_COLUMNS
                .iter()
                .map(|h| h.to_string())
                .collect();
            proxyvqa::io::write_csv_with_notes(
                &out,
                &Provenance::new(&s, 0),
                &[pipeline::SURROGATE_NOTE.into()],
                &header,
                &rows,
            )?;
            print!(
                "{}",
                pipeline::text_table(&pipeline::SUMMARY_COLUMNS, &rows)
            );
        }
        Command::Ablate {
            cfg,
            manifest,
            targets,
            eval_manifest,
            eval_labels,
            out,
        } => {
            let c = cfg.load()?;
            let train = pipeline::open_manifest(&manifest)?;
            let eval = pipeline::open_manifest(&eval_manifest)?;
            let labels = LabelTable::read(&eval_labels)?;
            // Fail on a targets file missing a task before either run starts.
            let t = TargetsTable::read(&targets)?;
            for task in c.tasks.iter().chain(&pipeline::SINGLE_TASK) {
                if !t.tasks.contains(task) {
                    return Err(Error::Mismatch(format!(
                        "targets lack task {}",
                        task.name()
                    )));
                }
            }
            let rows = pipeline::ablate(&c, &train, &targets, &eval, &labels, &out)?;
            let s = digest_settings(
                &[
                    ("stage", "ablate".into()),
                    ("manifest", pipeline::file_digest(&train.path())?),
                    ("targets", pipeline::file_digest(&targets)?),
                    ("eval_manifest", pipeline::file_digest(&eval.path())?),
                    ("eval_labels", pipeline::file_digest(&eval_labels)?),
                ],
                &c,
            );
            let path = out.join("ablation.csv");
            pipeline::write_ablation(&path, &Provenance::new(&s, c.seed), &rows)?;
            print!(
                "{}",
                pipeline::text_table(&pipeline::ABLATION_COLUMNS, &pipeline::ablation_rows(&rows))
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(Error::Invalid("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| run(cli.command))),
        None => run(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            })
        }
    }
}
