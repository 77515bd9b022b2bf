mod common;

use std::fs;
use std::path::Path;

use common::max_abs_diff;
use proxyvqa::fr::{compute_proxy_targets, Task};
use proxyvqa::io::TargetsTable;
use proxyvqa::model::{task_loss, Model, ModelConfig};
use proxyvqa::pipeline::{
    checkpoint_name, compute_fr, compute_fr_provenance, generate, run_pretrain, GenerateSpec,
    FINAL_CHECKPOINT, TRAIN_LOG,
};
use proxyvqa::synth::{distort_ladder, generate_contents, Domain, Frame, LadderSpec};
use proxyvqa::trainer::{pretrain, train_step, Sgd, TrainConfig, TrainSample};
use proxyvqa::Error;

/// Eight distorted 32x32 clips of four frames with per-frame targets.
fn smoke_samples(tasks: &[Task]) -> Vec<TrainSample> {
    let ladder = LadderSpec::default_source();
    let mut out = Vec::new();
    for r in generate_contents(5, 2, 4, 32, 32).unwrap() {
        for d in distort_ladder(&r, &ladder, 5).unwrap().into_iter().take(4) {
            let s = compute_proxy_targets(&r, &d, tasks).unwrap();
            for (i, f) in d.frames.iter().enumerate() {
                out.push(TrainSample {
                    content_id: d.content_id,
                    level: d.distortion_level,
                    frame_index: i,
                    frame: f.clone(),
                    targets: s.per_frame[i].clone(),
                });
            }
        }
    }
    out
}

fn config(tasks: &[Task], epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs,
        frame_stride: 1,
        tasks: tasks.to_vec(),
        seed: 3,
        ..TrainConfig::default()
    }
}

fn mean_task_losses(model: &Model, samples: &[TrainSample]) -> Vec<f64> {
    model
        .tasks()
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let batch: Vec<(&Frame, f64)> = samples.iter().map(|s| (&s.frame, s.targets[t])).collect();
            let (g, l) = task_loss(model, *task, &batch, 1.0).unwrap();
            g.scalar(l)
        })
        .collect()
}

fn batch_of(samples: &[TrainSample]) -> Vec<(&Frame, &[f64])> {
    samples.iter().map(|s| (&s.frame, s.targets.as_slice())).collect()
}

#[test]
fn applied_gradient_is_alpha_combination() {
    let samples = smoke_samples(&Task::ALL);
    let cfg = config(&Task::ALL, 1);
    let mut m = Model::new(ModelConfig::desk(32, 32), &Task::ALL, 1).unwrap();
    let mut opt = Sgd::new(&m.store, cfg.learning_rate, cfg.momentum);
    for chunk in samples.chunks(4).take(5) {
        let (rec, grads) = train_step(&mut m, &mut opt, &batch_of(chunk), &cfg).unwrap();
        let a = &grads.weights.alpha;
        let manual: Vec<f64> = (0..grads.applied_encoder_grad.len())
            .map(|k| (0..a.len()).map(|t| a[t] * grads.task_encoder_grads[t][k]).sum())
            .collect();
        assert!(max_abs_diff(&grads.applied_encoder_grad, &manual) < 1e-8);
        assert_eq!(&rec.alpha, a);
        assert!(!rec.aborted);
    }
}

#[test]
fn duplicate_task_collapses_onto_first_head() {
    let samples = smoke_samples(&[Task::Ssim]);
    let tasks = [Task::Ssim, Task::MsSsim];
    let mut m = Model::new(ModelConfig::desk(32, 32), &tasks, 2).unwrap();
    let (h0, h1) = (m.heads[0].clone(), m.heads[1].clone());
    for (a, b) in h0.ids().into_iter().zip(h1.ids()) {
        let v = m.store.get(a).values.clone();
        m.store.get_mut(b).values = v;
    }
    let dup: Vec<TrainSample> = samples
        .into_iter()
        .map(|mut s| {
            s.targets = vec![s.targets[0], s.targets[0]];
            s
        })
        .collect();
    let cfg = config(&tasks, 1);
    let mut opt = Sgd::new(&m.store, cfg.learning_rate, cfg.momentum);
    let (_, grads) = train_step(&mut m, &mut opt, &batch_of(&dup[..4]), &cfg).unwrap();
    assert_eq!(grads.weights.alpha, vec![1.0, 0.0]);
    assert!(max_abs_diff(&grads.applied_encoder_grad, &grads.task_encoder_grads[0]) < 1e-10);
}

#[test]
fn zero_learning_rate_keeps_params_and_logs_losses() {
    let samples = smoke_samples(&Task::ALL);
    let mut cfg = config(&Task::ALL, 1);
    cfg.learning_rate = 0.0;
    let mut m = Model::new(ModelConfig::desk(32, 32), &Task::ALL, 1).unwrap();
    let before = m.store.clone();
    let log = pretrain(&mut m, &samples, &cfg, |_, _, _| Ok(())).unwrap();
    let ids: Vec<_> = before.iter().map(|(id, _, _)| id).collect();
    assert_eq!(before.flat_values(&ids), m.store.flat_values(&ids));
    assert_eq!(log.records.len(), samples.len() / 4);
    assert!(log.records.iter().all(|r| r.losses.iter().all(|l| l.is_finite() && *l > 0.0)));
}

#[test]
fn smoke_training_reduces_loss_and_keeps_alpha_on_simplex() {
    let samples = smoke_samples(&Task::ALL);
    let cfg = config(&Task::ALL, 2);
    let mut m = Model::new(ModelConfig::desk(32, 32), &Task::ALL, cfg.seed).unwrap();
    let initial = mean_task_losses(&m, &samples);
    let mut epochs_seen = Vec::new();
    let log = pretrain(&mut m, &samples, &cfg, |e, _, _| {
        epochs_seen.push(e);
        Ok(())
    })
    .unwrap();
    assert_eq!(epochs_seen, vec![0, 1]);
    let last = log.records.last().unwrap();
    let joint = |losses: &[f64]| -> f64 { last.alpha.iter().zip(losses).map(|(a, l)| a * l).sum() };
    let after = mean_task_losses(&m, &samples);
    assert!(joint(&after) < joint(&initial), "{initial:?} -> {after:?}");
    for r in &log.records {
        assert!(r.alpha.iter().all(|a| *a >= -1e-12));
        assert!((r.alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(r.joint_loss.is_finite());
    }
}

fn corpus(dir: &Path, tasks: &[Task]) -> (proxyvqa::io::Manifest, std::path::PathBuf) {
    let spec = GenerateSpec {
        seed: 4,
        contents: 2,
        frames: 4,
        width: 32,
        height: 32,
        domain: Domain::Source,
        first_id: 0,
    };
    let m = generate(&dir.join("data"), &spec).unwrap();
    let (targets, _) = compute_fr(&m, tasks).unwrap();
    let path = dir.join("targets.csv");
    targets.write(&path, &compute_fr_provenance(&m, tasks).unwrap()).unwrap();
    (m, path)
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let (m, targets) = corpus(tmp.path(), &Task::ALL);
    let cfg = config(&Task::ALL, 2);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (ma, la) = run_pretrain(&m, &targets, &cfg, &a).unwrap();
    let (mb, lb) = run_pretrain(&m, &targets, &cfg, &b).unwrap();
    assert_eq!(la, lb);
    assert_eq!(ma, mb);
    for name in [checkpoint_name(0), checkpoint_name(1), FINAL_CHECKPOINT.into(), TRAIN_LOG.into()] {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn single_and_multi_task_checkpoints_load() {
    let tmp = tempfile::tempdir().unwrap();
    let (m, targets) = corpus(tmp.path(), &Task::ALL);
    for tasks in [vec![Task::Ssim], Task::ALL.to_vec()] {
        let out = tmp.path().join(tasks.len().to_string());
        run_pretrain(&m, &targets, &config(&tasks, 1), &out).unwrap();
        let loaded = Model::load(&out.join(FINAL_CHECKPOINT)).unwrap();
        assert_eq!(loaded.tasks(), tasks);
        assert_eq!(loaded.embed(&Frame::filled(32, 32, 0.5).unwrap()).unwrap().len(), 64);
    }
}

#[test]
fn mismatched_targets_fail_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let (m, targets) = corpus(tmp.path(), &[Task::Ssim]);
    let out = tmp.path().join("ckpt");
    let err = run_pretrain(&m, &targets, &config(&Task::ALL, 1), &out).unwrap_err();
    assert!(matches!(err, Error::Mismatch(_)), "{err}");
    assert!(!out.exists());

    let mut table = TargetsTable::read(&targets).unwrap();
    table.rows.retain(|r| !(r.content_id == 1 && r.level == 3 && r.frame_index == 2));
    let short = tmp.path().join("short.csv");
    table.write(&short, &compute_fr_provenance(&m, &[Task::Ssim]).unwrap()).unwrap();
    let err = run_pretrain(&m, &short, &config(&[Task::Ssim], 1), &out).unwrap_err();
    assert!(matches!(err, Error::Mismatch(_)), "{err}");
    assert!(!out.exists());
}
