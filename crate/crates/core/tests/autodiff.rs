mod common;

use common::{grad_check, random_frame, rel_err, rng};
use proptest::prelude::*;
use proxyvqa::autodiff::{smooth_l1, smooth_l1_grad, Graph, ParamStore, Tensor};
use proxyvqa::fr::Task;
use proxyvqa::model::{
    add_head, head_forward, head_predict, mean_pool, task_loss, Model, ModelConfig,
};
use proxyvqa::synth::Frame;
use rand::Rng;

fn dense_head_oracle(store: &ParamStore, head: &proxyvqa::model::HeadParams, z: &[f64]) -> f64 {
    let (w1, b1) = (store.get(head.w1), store.get(head.b1));
    let (w2, b2) = (store.get(head.w2), store.get(head.b2));
    let (hidden, d) = (w1.shape[0], w1.shape[1]);
    let mut out = b2.values[0];
    for j in 0..hidden {
        let mut a = b1.values[j];
        for k in 0..d {
            a += w1.values[j * d + k] * z[k];
        }
        out += w2.values[j] * a.max(0.0);
    }
    out
}

#[test]
fn head_matches_dense_oracle() {
    let mut r = rng(1);
    for _ in 0..20 {
        let mut store = ParamStore::new();
        let head = add_head(&mut store, "h", Some(Task::Ssim), 64, 32, &mut r);
        for id in head.ids() {
            for v in store.get_mut(id).values.iter_mut() {
                *v = r.random_range(-1.0..1.0);
            }
        }
        let z: Vec<f64> = (0..64).map(|_| r.random_range(-2.0..2.0)).collect();
        let got = head_predict(&store, &head, &z).unwrap();
        assert!((got - dense_head_oracle(&store, &head, &z)).abs() < 1e-10);
    }
}

#[test]
fn head_affine_cases() {
    let mut r = rng(2);
    let mut store = ParamStore::new();
    let head = add_head(&mut store, "h", None, 4, 4, &mut r);
    for id in head.ids() {
        store.get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
    }
    store.get_mut(head.b2).values[0] = 0.7;
    assert_eq!(head_predict(&store, &head, &[1.0, -2.0, 3.0, 4.0]).unwrap(), 0.7);

    // Identity first layer and unit output weights: e_k returns 1 for every k.
    for j in 0..4 {
        store.get_mut(head.w1).values[j * 4 + j] = 1.0;
        store.get_mut(head.w2).values[j] = 1.0;
    }
    store.get_mut(head.b2).values[0] = 0.0;
    for k in 0..4 {
        let mut e = [0.0; 4];
        e[k] = 1.0;
        assert_eq!(head_predict(&store, &head, &e).unwrap(), 1.0);
    }
    assert!(head_predict(&store, &head, &[1.0; 5]).is_err());
}

#[test]
fn zero_network_gives_zero_embedding() {
    let mut m = Model::new(ModelConfig::desk(32, 32), &Task::ALL, 3).unwrap();
    for id in m.encoder.ids() {
        m.store.get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
    }
    let z = m.embed(&Frame::filled(32, 32, 0.0).unwrap()).unwrap();
    assert_eq!(z.len(), 64);
    assert!(z.iter().all(|v| *v == 0.0));
}

#[test]
fn embeddings_deterministic_and_pixel_sensitive() {
    let mut r = rng(4);
    let f = random_frame(&mut r, 32, 32);
    let a = Model::new(ModelConfig::desk(32, 32), &Task::ALL, 9).unwrap();
    let b = Model::new(ModelConfig::desk(32, 32), &Task::ALL, 9).unwrap();
    assert_eq!(a.embed(&f).unwrap(), b.embed(&f).unwrap());
    assert_eq!(a.encoder_param_count(), b.encoder_param_count());
    let mut g = f.clone();
    g.luma[17 * 32 + 5] = 1.0 - g.luma[17 * 32 + 5];
    assert_ne!(a.embed(&f).unwrap(), a.embed(&g).unwrap());
    assert!(a.embed(&random_frame(&mut r, 32, 48)).is_err());
}

#[test]
fn mean_pool_examples() {
    let v = vec![0.5, -1.0, 2.0];
    assert_eq!(mean_pool(&[v.clone()]).unwrap(), v);
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    assert_eq!(mean_pool(&[v, neg]).unwrap(), vec![0.0; 3]);
    let basis = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    for x in mean_pool(&basis).unwrap() {
        assert!((x - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!(mean_pool(&[]).is_err());
    assert!(mean_pool(&[vec![1.0], vec![1.0, 2.0]]).is_err());
}

#[test]
fn smooth_l1_examples_and_junction() {
    assert_eq!(smooth_l1(3.0, 3.0, 1.0).unwrap(), 0.0);
    assert_eq!(smooth_l1(0.5, 0.0, 1.0).unwrap(), 0.125);
    assert_eq!(smooth_l1(2.0, 0.0, 1.0).unwrap(), 1.5);
    assert!(smooth_l1(1.0, 0.0, 0.0).is_err());
    for beta in [0.25f64, 1.0, 3.0] {
        let below = smooth_l1(beta - 1e-12, 0.0, beta).unwrap();
        let at = smooth_l1(beta, 0.0, beta).unwrap();
        assert!((below - at).abs() < 1e-9);
        assert!((smooth_l1_grad(beta, beta) - 1.0).abs() < 1e-9);
        assert!((smooth_l1_grad(beta - 1e-12, beta) - 1.0).abs() < 1e-9);
        assert_eq!(smooth_l1_grad(-2.0 * beta, beta), -1.0);
        assert!((smooth_l1_grad(0.3 * beta, beta) - 0.3).abs() < 1e-12);
    }
}

/// Sets every head's output to its bias by zeroing the final weights.
fn constant_heads(m: &mut Model, value: f64) {
    for h in m.heads.clone() {
        m.store.get_mut(h.w2).values.iter_mut().for_each(|v| *v = 0.0);
        m.store.get_mut(h.b2).values[0] = value;
    }
}

#[test]
fn task_loss_examples() {
    let mut r = rng(5);
    let mut m = Model::new(ModelConfig::desk(16, 16), &[Task::Ssim], 1).unwrap();
    constant_heads(&mut m, 0.5);
    let (f1, f2) = (random_frame(&mut r, 16, 16), random_frame(&mut r, 16, 16));
    let (g, l) = task_loss(&m, Task::Ssim, &[(&f1, 0.5), (&f2, 0.5)], 1.0).unwrap();
    assert_eq!(g.scalar(l), 0.0);
    let (g, l) = task_loss(&m, Task::Ssim, &[(&f1, 0.5), (&f2, 2.5)], 1.0).unwrap();
    assert!((g.scalar(l) - 0.75).abs() < 1e-15);
    let (g, l) = task_loss(&m, Task::Ssim, &[(&f1, 0.1)], 1.0).unwrap();
    assert!((g.scalar(l) - smooth_l1(0.5, 0.1, 1.0).unwrap()).abs() < 1e-15);
    assert!(task_loss(&m, Task::PsnrNorm, &[(&f1, 0.1)], 1.0).is_err());
}

#[test]
fn per_task_backward_leaves_other_heads_untouched() {
    let mut r = rng(6);
    let mut m = Model::new(ModelConfig::desk(16, 16), &Task::ALL, 2).unwrap();
    let f = random_frame(&mut r, 16, 16);
    for task in Task::ALL {
        m.store.zero_grad();
        let (g, l) = task_loss(&m, task, &[(&f, 0.3)], 1.0).unwrap();
        g.backward(l, &mut m.store).unwrap();
        for h in &m.heads {
            let grad = m.store.flat_grad(&h.ids());
            if h.task == Some(task) {
                assert!(grad.iter().any(|v| *v != 0.0));
            } else {
                assert!(grad.iter().all(|v| *v == 0.0), "{task} leaked into {:?}", h.task);
            }
        }
        assert!(m.store.flat_grad(&m.encoder.ids()).iter().any(|v| *v != 0.0));
    }
}

#[test]
fn backward_is_bit_reproducible() {
    let mut r = rng(7);
    let f = random_frame(&mut r, 16, 16);
    let grads = || {
        let mut m = Model::new(ModelConfig::desk(16, 16), &Task::ALL, 5).unwrap();
        let (g, l) = task_loss(&m, Task::MsSsim, &[(&f, 0.8)], 1.0).unwrap();
        g.backward(l, &mut m.store).unwrap();
        let ids: Vec<_> = m.store.iter().map(|(id, _, _)| id).collect();
        m.store.flat_grad(&ids)
    };
    assert_eq!(grads(), grads());
}

#[test]
fn graph_built_elsewhere_is_rejected() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::new(vec![1], vec![2.0]).unwrap());
    let mut g1 = Graph::new();
    let a = g1.param(&store, p);
    let l = g1.smooth_l1(a, 0.0, 1.0).unwrap();
    let mut g2 = Graph::new();
    g2.input(vec![1], vec![0.0]).unwrap();
    assert!(g2.backward(l, &mut store).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn composite_head_loss_gradient(seed in 0u64..10_000, target in -1.0f64..2.0, beta in 0.2f64..2.0) {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let z = store.add("z", Tensor::new(vec![6], (0..6).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap());
        let head = add_head(&mut store, "h", None, 6, 5, &mut r);
        let build = move |g: &mut Graph, s: &ParamStore| {
            let zn = g.param(s, z);
            let y = head_forward(g, s, &head, zn).unwrap();
            let l = g.smooth_l1(y, target, beta).unwrap();
            let twice = g.weighted_sum(&[(l, 0.7), (y, 0.3)]).unwrap();
            g.mean(&[l, twice]).unwrap()
        };
        let err = grad_check(&mut store, &build, 1e-6, 1e-6);
        prop_assert!(err < 1e-4, "max relative error {}", err);
    }

    #[test]
    fn smooth_l1_value_matches_branches(r in -5.0f64..5.0, beta in 0.05f64..3.0) {
        let v = smooth_l1(r, 0.0, beta).unwrap();
        let expect = if r.abs() < beta { r * r / (2.0 * beta) } else { r.abs() - beta / 2.0 };
        prop_assert!((v - expect).abs() < 1e-12);
        let h = 1e-6;
        let fd = (smooth_l1(r + h, 0.0, beta).unwrap() - smooth_l1(r - h, 0.0, beta).unwrap()) / (2.0 * h);
        prop_assert!(rel_err(smooth_l1_grad(r, beta), fd, 1e-6) < 1e-4);
    }
}
