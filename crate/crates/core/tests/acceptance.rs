//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a gated criterion fails.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use mmssl::clustering::{assign, fuse_multimodal, kmeans_fit, KMeansInit, KMeansParams};
use mmssl::data::{generate, synth_generate, Labels, Modality, Split, SplitData, SynthConfig};
use mmssl::exec::{self, ExecMode};
use mmssl::heads::{fuse_for_classifier, Fusion, ModelBundle, ModelConfig};
use mmssl::losses::{
    clustering_loss, clustering_loss_value, info_nce, info_nce_value, mms_pair, mms_pair_value, mms_total,
    mms_total_value, multitask_total, recon_loss, Component, Method,
};
use mmssl::numeric::{
    adamw_step, init_linear, seeded_rng, zero_grads, AdamW, Graph, MarginMode, NodeId, ParamSet, Tensor,
};
use mmssl::trainer::{
    attach_probe_and_train, params_digest, pretrain, Checkpoint, DownstreamConfig, DownstreamMode,
    PretrainConfig, Pretrainer,
};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const CASES: u64 = 100;

// ---------------------------------------------------------------- 1

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut fd = Fd::default();
    let none = ParamSet::<f64>::new();
    for case in 0..CASES {
        let mut r = rng(1000 + case);
        let b = r.random_range(1..=6);
        let d = r.random_range(1..=16);
        let tau = r.random_range(0.1..1.0);
        let margin = r.random_range(0.0..0.5);
        let x: Vec<Tensor<f64>> = (0..3).map(|_| rand_tensor(&mut r, b, d, 1.0)).collect();

        check_gradients(&mut fd, "info_nce", &|g, _, n| info_nce(g, n[0], n[1], tau), &none, &[], &x[..2], 0, &mut r);
        for normalize in [true, false] {
            check_gradients(
                &mut fd,
                "mms_pair",
                &|g, _, n| mms_pair(g, n[0], n[1], margin, normalize),
                &none,
                &[],
                &x[..2],
                0,
                &mut r,
            );
        }
        check_gradients(
            &mut fd,
            "mms_total",
            &|g, _, n| {
                let p = BTreeMap::from([(Modality::Video, n[0]), (Modality::Text, n[1]), (Modality::Audio, n[2])]);
                mms_total(g, &p, margin, true)
            },
            &none,
            &[],
            &x,
            0,
            &mut r,
        );
        let recon: Vec<Tensor<f64>> = x.iter().map(|t| rand_tensor(&mut r, b, t.cols(), 1.0)).collect();
        let mut both = x.clone();
        both.extend(recon);
        check_gradients(
            &mut fd,
            "recon",
            &|g, _, n| {
                let xs = BTreeMap::from([(Modality::Video, n[0]), (Modality::Text, n[1]), (Modality::Audio, n[2])]);
                let rs = BTreeMap::from([(Modality::Video, n[3]), (Modality::Text, n[4]), (Modality::Audio, n[5])]);
                Ok(recon_loss(g, &xs, &rs)?.0)
            },
            &none,
            &[],
            &both,
            0,
            &mut r,
        );
        let k = r.random_range(1..=4);
        let centroids = rand_tensor(&mut r, k, d, 1.0);
        let assignments: Vec<usize> = (0..b).map(|_| r.random_range(0..k)).collect();
        check_gradients(
            &mut fd,
            "clustering",
            &|g, _, n| clustering_loss(g, n[0], &assignments, &centroids, margin),
            &none,
            &[],
            &x[..1],
            0,
            &mut r,
        );
        let target = rand_tensor(&mut r, b, d, 1.0);
        check_gradients(
            &mut fd,
            "fusion",
            &|g, _, n| {
                let f = fuse_multimodal(g, n[0], n[1], n[2])?;
                let t = g.input(target.clone());
                g.mse(f, t)
            },
            &none,
            &[],
            &x,
            0,
            &mut r,
        );
        let classes: Vec<usize> = (0..b).map(|_| r.random_range(0..d)).collect();
        check_gradients(
            &mut fd,
            "softmax_ce",
            &|g, _, n| g.cross_entropy(n[0], &classes, None, 0.0, MarginMode::Shared),
            &none,
            &[],
            &x[..1],
            0,
            &mut r,
        );
        let bits = Tensor::matrix(b, d, (0..b * d).map(|_| f64::from(r.random_bool(0.5) as u8)).collect()).unwrap();
        check_gradients(&mut fd, "bce", &|g, _, n| g.bce_with_logits(n[0], &bits), &none, &[], &x[..1], 0, &mut r);

        head_gradients(&mut fd, &mut r, case);
    }
    let elapsed = start.elapsed();
    let pass = fd.ok() && elapsed < Duration::from_secs(60);
    let mut detail = format!(
        "{} coordinates within rel 1e-4 over {CASES} cases per loss/head, {} on ReLU kinks skipped, {:.1?}",
        fd.checked, fd.kinks, elapsed
    );
    if let Some(f) = fd.failures.first() {
        detail.push_str(&format!("; {} failures, first: {f}", fd.failures.len()));
    }
    outcome(pass, detail)
}

fn head_gradients(fd: &mut Fd, r: &mut impl Rng, case: u64) {
    let b = r.random_range(1..=6);
    let dims = BTreeMap::from([
        (Modality::Video, r.random_range(1..=16)),
        (Modality::Text, r.random_range(1..=16)),
        (Modality::Audio, r.random_range(1..=16)),
    ]);
    let cfg = ModelConfig {
        modality_dims: dims.clone(),
        representation_dim: r.random_range(1..=16),
        projection_dim: r.random_range(1..=16),
        cluster_dim: r.random_range(1..=16),
    };
    let rep = cfg.representation_dim;
    let proj = cfg.projection_dim;
    let mut model = ModelBundle::<f64>::new(cfg.clone(), Method::ConCluGen, case).unwrap();
    let fusion = [Fusion::Concat, Fusion::Mean, Fusion::VisionOnly][case as usize % 3];
    let n_classes = r.random_range(1..=5);
    model.attach_classifier(n_classes, fusion, case).unwrap();
    let m = Modality::ALL[case as usize % 3];
    let per = 6;

    let head = model.representation_head(m).unwrap().clone();
    let x = rand_tensor(r, b, dims[&m], 1.0);
    let t = rand_tensor(r, b, rep, 1.0);
    let ids: Vec<_> = head.param_ids().collect();
    check_gradients(fd, "representation head", &|g, ps, n| {
        let y = head.forward(g, ps, n[0])?;
        let t = g.input(t.clone());
        g.mse(y, t)
    }, &model.params, &ids, &[x], per, r);

    let head = model.projection_head(m).unwrap().clone();
    let d = rand_tensor(r, b, rep, 1.0);
    let t = rand_tensor(r, b, proj, 1.0);
    let ids: Vec<_> = head.param_ids().collect();
    check_gradients(fd, "projection head", &|g, ps, n| {
        let y = head.forward(g, ps, n[0])?;
        let t = g.input(t.clone());
        g.mse(y, t)
    }, &model.params, &ids, std::slice::from_ref(&d), per, r);

    let lin = model.clustering_head();
    let p = rand_tensor(r, b, proj, 1.0);
    let t = rand_tensor(r, b, cfg.cluster_dim, 1.0);
    check_gradients(fd, "clustering head", &|g, ps, n| {
        let y = lin.forward(g, ps, n[0])?;
        let t = g.input(t.clone());
        g.mse(y, t)
    }, &model.params, &[lin.weight, lin.bias], &[p], per, r);

    let head = model.decoder(m).unwrap().clone();
    let t = rand_tensor(r, b, dims[&m], 1.0);
    let ids: Vec<_> = head.param_ids().collect();
    check_gradients(fd, "decoder", &|g, ps, n| {
        let y = head.forward(g, ps, n[0])?;
        let t = g.input(t.clone());
        g.mse(y, t)
    }, &model.params, &ids, &[d], per, r);

    let reps: Vec<Tensor<f64>> = (0..3).map(|_| rand_tensor(r, b, rep, 1.0)).collect();
    let t = rand_tensor(r, b, n_classes, 1.0);
    let (layer, fusion) = model.classifier().unwrap();
    check_gradients(fd, "classifier", &|g, ps, n| {
        let reps = BTreeMap::from([(Modality::Video, n[0]), (Modality::Text, n[1]), (Modality::Audio, n[2])]);
        let f = fuse_for_classifier(g, &reps, fusion)?;
        let y = layer.forward(g, ps, f)?;
        let t = g.input(t.clone());
        g.mse(y, t)
    }, &model.params, &[layer.weight, layer.bias], &reps, per, r);
}

// ---------------------------------------------------------------- 2

fn loss_oracles() -> Outcome {
    let mut worst: f64 = 0.0;
    for case in 0..CASES {
        let mut r = rng(2000 + case);
        let b = r.random_range(1..=4);
        let d = r.random_range(1..=8);
        let tau = r.random_range(0.05..1.0);
        let margin = r.random_range(0.0..0.5);
        let (p, p2, p3) = (rand_tensor(&mut r, b, d, 2.0), rand_tensor(&mut r, b, d, 2.0), rand_tensor(&mut r, b, d, 2.0));
        let mut err = |a: f64, o: f64| worst = worst.max((a - o).abs());
        err(info_nce_value(&p, &p2, tau).unwrap(), info_nce_oracle(&p, &p2, tau));
        for normalize in [true, false] {
            err(mms_pair_value(&p, &p2, margin, normalize).unwrap(), mms_pair_oracle(&p, &p2, margin, normalize));
        }
        err(
            mms_total_value(&p, &p2, &p3, margin, true).unwrap(),
            mms_pair_oracle(&p, &p3, margin, true) + mms_pair_oracle(&p, &p2, margin, true) + mms_pair_oracle(&p3, &p2, margin, true),
        );
        let k = r.random_range(1..=3);
        let c = rand_tensor(&mut r, k, d, 2.0);
        let a: Vec<usize> = (0..b).map(|_| r.random_range(0..k)).collect();
        err(clustering_loss_value(&p, &a, &c, margin).unwrap(), clustering_oracle(&p, &a, &c, margin));
    }
    let oracle_pass = worst <= 1e-6;

    let mut closed = Vec::new();
    for case in 0..CASES {
        let mut r = rng(2500 + case);
        let d = r.random_range(1..=16);
        let margin = r.random_range(0.0..0.5);
        let (p, p2) = (rand_tensor(&mut r, 1, d, 2.0), rand_tensor(&mut r, 1, d, 2.0));
        closed.push(("info_nce B=1", info_nce_value(&p, &p2, 0.1).unwrap(), 0.0, 0.0));
        closed.push(("mms B=1", mms_pair_value(&p, &p2, margin, true).unwrap(), 0.0, 0.0));
        let c = rand_tensor(&mut r, 1, d, 2.0);
        let s: f64 = p.data().iter().zip(c.data()).map(|(x, y)| x * y).sum();
        let v = clustering_loss_value(&p, &[0], &c, margin).unwrap();
        closed.push(("clustering K=1", v, margin, 4.0 * f64::EPSILON * s.abs().max(1.0)));
    }
    let bad: Vec<_> = closed.iter().filter(|(_, v, want, tol)| (v - want).abs() > *tol).collect();
    let detail = format!(
        "max |module - oracle| = {worst:.2e} (B<=4, K<=3); {} closed-form cases, {} off",
        closed.len(),
        bad.len()
    );
    outcome(oracle_pass && bad.is_empty(), detail)
}

// ---------------------------------------------------------------- 3

fn kmeans_checks() -> Outcome {
    let mut violations = 0;
    for case in 0..1000u64 {
        let mut r = rng(3000 + case);
        let n = r.random_range(1..=64);
        let k = r.random_range(1..=8.min(n));
        let d = r.random_range(1..=6);
        let pts = rand_tensor(&mut r, n, d, 5.0);
        let fit = kmeans_fit(&pts, k, KMeansInit::KMeansPlusPlus, KMeansParams { max_iters: 20, tol: 0.0 }, case).unwrap();
        if fit.history.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-12) {
            violations += 1;
        }
    }
    let mut r = rng(3999);
    let mut rows = Vec::new();
    for i in 0..40 {
        let base = if i < 20 { 0.0 } else { 10.0 };
        rows.push(vec![base + r.random_range(-0.01..0.01), base + r.random_range(-0.01..0.01)]);
    }
    let pts = Tensor::from_rows(&rows).unwrap();
    let fit = kmeans_fit(&pts, 2, KMeansInit::KMeansPlusPlus, KMeansParams::default(), 1).unwrap();
    let mean = |lo: usize| -> Vec<f64> {
        (0..2).map(|j| rows[lo..lo + 20].iter().map(|r| r[j]).sum::<f64>() / 20.0).collect()
    };
    let (m0, m1) = (mean(0), mean(20));
    let labels = assign(&pts, &fit.centroids.centroids).unwrap();
    let c = &fit.centroids.centroids;
    let err = |cj: usize, m: &[f64]| (0..2).map(|j| (c.at(cj, j) - m[j]).abs()).fold(0.0, f64::max);
    let e = err(labels[0], &m0).max(err(labels[20], &m1));
    outcome(
        violations == 0 && e <= 1e-3 && labels[0] != labels[20],
        format!("{violations} monotonicity violations in 1000 fits; two-cluster mean error {e:.2e}"),
    )
}

// ---------------------------------------------------------------- 4

fn small_cfg(method: Method) -> PretrainConfig {
    let mut c = PretrainConfig::new(method);
    c.epochs = 2;
    c.batch_size = 16;
    c.representation_dim = 12;
    c.projection_dim = 8;
    c.cluster_dim = 6;
    c.clusters = 4;
    c.queue_batches = 2;
    c.cluster_start_epoch = 1;
    c
}

fn prefix_of(name: &str) -> &str {
    name.split('.').next().unwrap()
}

fn composition() -> Outcome {
    let (train, _) = tiny_dataset(80, 4);
    let batch = train.batch(&(0..16).collect::<Vec<_>>());
    let mut problems = Vec::new();

    // totals versus sequential sums of the separately built components
    for method in [Method::ConCluGen, Method::ConClu, Method::ConGen] {
        let mut t = Pretrainer::new(&small_cfg(method), &train).unwrap();
        let out = t.forward_backward(&batch, 1).unwrap();
        let mut sum: Option<f32> = None;
        for &c in method.components() {
            let v = out.breakdown.get(c) as f32;
            sum = Some(sum.map_or(v, |s| s + v));
        }
        if f64::from(sum.unwrap()) != out.breakdown.total {
            problems.push(format!("{method}: total differs from component sum"));
        }
        let mut g = Graph::<f64>::new();
        let nodes: BTreeMap<Component, NodeId> = method
            .components()
            .iter()
            .map(|&c| (c, g.input(Tensor::scalar(out.breakdown.get(c)))))
            .collect();
        let total = multitask_total(&mut g, method, &nodes).unwrap();
        let expect = method.components().iter().map(|&c| out.breakdown.get(c)).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |s| s + v)));
        if g.scalar(total) != expect.unwrap() {
            problems.push(format!("{method}: graph sum differs"));
        }
    }

    // which head groups receive gradient under each method
    let expected: [(Method, &[&str]); 6] = [
        (Method::InstanceCont, &["rep", "proj"]),
        (Method::MultiCont, &["rep", "proj"]),
        (Method::Generative, &["rep", "dec"]),
        (Method::ConClu, &["rep", "proj", "cluster"]),
        (Method::ConGen, &["rep", "proj", "dec"]),
        (Method::ConCluGen, &["rep", "proj", "cluster", "dec"]),
    ];
    for (method, groups) in expected {
        let mut t = Pretrainer::new(&small_cfg(method), &train).unwrap();
        t.forward_backward(&batch, 1).unwrap();
        for p in t.model().params.iter() {
            let group = prefix_of(&p.name);
            let nonzero = p.grad.data().iter().any(|&v| v != 0.0);
            let want = groups.contains(&group);
            if want && group != "rep" && !nonzero && p.name.ends_with("weight") {
                problems.push(format!("{method}: {} has zero gradient", p.name));
            }
            if !want && nonzero {
                problems.push(format!("{method}: {} has a gradient", p.name));
            }
        }
        for m in t.model().modalities() {
            let any = t
                .model()
                .params
                .iter()
                .filter(|p| p.name.starts_with(&format!("rep.{m}.")))
                .any(|p| p.grad.data().iter().any(|&v| v != 0.0));
            if !any {
                problems.push(format!("{method}: representation head {m} got no gradient"));
            }
        }
    }

    // the clustering component alone reaches all three representation heads
    let model = ModelBundle::<f32>::new(
        ModelConfig {
            modality_dims: train.features.iter().map(|(&m, t)| (m, t.cols())).collect(),
            representation_dim: 12,
            projection_dim: 8,
            cluster_dim: 6,
        },
        Method::ConClu,
        3,
    )
    .unwrap();
    let mut params = model.params.clone();
    let mut g = Graph::new();
    let inputs = batch.features.iter().map(|(&m, x)| (m, g.input(x.clone()))).collect();
    let reps = model.encode(&mut g, &inputs, &Modality::ALL).unwrap();
    let p = model.project(&mut g, &reps).unwrap();
    let ge = model.cluster_embed(&mut g, &p).unwrap();
    let r = fuse_multimodal(&mut g, ge[&Modality::Video], ge[&Modality::Text], ge[&Modality::Audio]).unwrap();
    let r = g.normalize_rows(r).unwrap();
    let fit = kmeans_fit(g.value(r), 4, KMeansInit::KMeansPlusPlus, KMeansParams::default(), 0).unwrap();
    let loss = clustering_loss(&mut g, r, &fit.assignments, &fit.centroids.centroids, 0.001).unwrap();
    zero_grads(&mut params);
    g.backward(loss, &mut params).unwrap();
    for m in Modality::ALL {
        let any = params
            .iter()
            .filter(|p| p.name.starts_with(&format!("rep.{m}.")))
            .any(|p| p.grad.data().iter().any(|&v| v != 0.0));
        if !any {
            problems.push(format!("clustering loss alone leaves rep.{m} without gradient"));
        }
    }

    let detail = if problems.is_empty() {
        "totals equal component sums bit for bit; gradients reach exactly the method's heads".to_string()
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

// ---------------------------------------------------------------- 5

fn protocol_gating() -> Outcome {
    let (train, test) = tiny_dataset(120, 5);
    let mut problems = Vec::new();

    let mut cfg = small_cfg(Method::ConCluGen);
    cfg.epochs = 4;
    cfg.cluster_start_epoch = 3;
    let run = pretrain(&cfg, &train).unwrap();
    let before: f64 = run.log.iter().filter(|r| r.epoch < 3).map(|r| r.clustering).sum();
    let after = run.log.iter().filter(|r| r.epoch >= 3).all(|r| r.clustering > 0.0);
    if before != 0.0 || !after {
        problems.push(format!("clustering before start sums to {before}, active after: {after}"));
    }

    let ck = run.checkpoint.clone();
    let ids = ck.model.encoder_params();
    let digest = params_digest(&ck.model.params, &ids);
    let mut dcfg = DownstreamConfig::new(DownstreamMode::LinearEval);
    dcfg.epochs = 5;
    let lin = attach_probe_and_train(&ck, &train, &test, &dcfg).unwrap();
    if params_digest(&lin.model.params, &ids) != digest {
        problems.push("linear eval changed encoder tensors".into());
    }

    cfg.epochs = 5;
    let full = pretrain(&cfg, &train).unwrap();
    let mut t = Pretrainer::new(&cfg, &train).unwrap();
    t.run_until(&train, 3).unwrap();
    let saved = t.checkpoint().to_bytes().unwrap();
    let mut resumed = Pretrainer::resume(Checkpoint::from_bytes(&saved).unwrap(), &train).unwrap();
    resumed.run_until(&train, 5).unwrap();
    if resumed.checkpoint().to_bytes().unwrap() != full.checkpoint.to_bytes().unwrap() {
        problems.push("resume at epoch 3 of 5 differs from the uninterrupted run".into());
    }
    let detail = if problems.is_empty() {
        format!(
            "clustering exactly 0 for epochs 1-2; encoder digest {digest:016x} unchanged by linear eval; resume 3->5 bit-exact"
        )
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

// ---------------------------------------------------------------- 6

const ORDER_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Plain logistic regression on the concatenated raw features, as a
/// reference for how much a linear probe can extract at all.
fn raw_linear_probe(train: &SplitData, test: &SplitData) -> f64 {
    let stack = |d: &SplitData| {
        let rows: Vec<Vec<f32>> = (0..d.len())
            .map(|i| Modality::ALL.iter().flat_map(|m| d.features[m].row(i).to_vec()).collect())
            .collect();
        Tensor::from_rows(&rows).unwrap()
    };
    let (x, xt) = (stack(train), stack(test));
    let (Labels::Single(y), Labels::Single(yt)) = (&train.labels, &test.labels) else {
        unreachable!("single-label synthetic data")
    };
    let mut ps = ParamSet::new();
    let (w, b) = init_linear(&mut seeded_rng(0, 0), x.cols(), train.n_classes);
    let (wi, bi) = (ps.add("w", w), ps.add("b", b));
    let opt = AdamW { weight_decay: 0.0, ..AdamW::default() };
    let all: Vec<usize> = (0..x.rows()).collect();
    for _ in 0..300 {
        for idx in all.chunks(64) {
            let mut g = Graph::new();
            let xi = g.input(x.select_rows(idx));
            let (wn, bn) = (g.param(&ps, wi), g.param(&ps, bi));
            let z = g.linear(xi, wn, bn).unwrap();
            let t: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let l = g.cross_entropy(z, &t, None, 0.0, MarginMode::Shared).unwrap();
            zero_grads(&mut ps);
            g.backward(l, &mut ps).unwrap();
            adamw_step(ps.get_mut(wi), 0.003, &opt).unwrap();
            adamw_step(ps.get_mut(bi), 0.003, &opt).unwrap();
        }
    }
    let mut g = Graph::new();
    let xi = g.input(xt);
    let (wn, bn) = (g.param(&ps, wi), g.param(&ps, bi));
    let z = g.linear(xi, wn, bn).unwrap();
    let z = g.value(z);
    let hits = (0..z.rows())
        .filter(|&i| {
            let row = z.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == yt[i]
        })
        .count();
    hits as f64 / z.rows() as f64
}

fn ordering() -> Vec<(String, Outcome, bool)> {
    let start = Instant::now();
    let mut wa: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in ORDER_SEEDS {
        let ds = generate(&SynthConfig::desk_scale(seed)).unwrap();
        let train = ds.split_data(Split::Train).unwrap();
        let test = ds.split_data(Split::Test).unwrap();
        let mut concluge = None;
        for (name, method) in [
            ("instance_cont", Method::InstanceCont),
            ("multi_cont", Method::MultiCont),
            ("con_clu_gen", Method::ConCluGen),
        ] {
            let mut cfg = PretrainConfig::new(method);
            cfg.seed = seed;
            let run = pretrain(&cfg, &train).unwrap();
            let mut d = DownstreamConfig::new(DownstreamMode::LinearEval);
            d.seed = seed;
            let r = attach_probe_and_train(&run.checkpoint, &train, &test, &d).unwrap();
            wa.entry(name).or_default().push(r.report.metrics.weighted_accuracy);
            if method == Method::ConCluGen {
                concluge = Some(run.checkpoint);
            }
        }
        let mut d = DownstreamConfig::new(DownstreamMode::SupervisedScratch);
        d.seed = seed;
        d.label_fraction = 0.1;
        let r = attach_probe_and_train(concluge.as_ref().unwrap(), &train, &test, &d).unwrap();
        wa.entry("scratch_10pct").or_default().push(r.report.metrics.weighted_accuracy);
        wa.entry("raw_linear").or_default().push(raw_linear_probe(&train, &test));
    }
    let elapsed = start.elapsed();
    let m = |k: &str| 100.0 * mean(&wa[k]);
    let (ic, mc, ccg, sc, raw) = (m("instance_cont"), m("multi_cont"), m("con_clu_gen"), m("scratch_10pct"), m("raw_linear"));
    let in_time = elapsed < Duration::from_secs(600);
    let means = format!(
        "means over seeds {ORDER_SEEDS:?}: Instance-Cont {ic:.2}, Multi-Cont {mc:.2}, ConCluGen {ccg:.2}, scratch@10% {sc:.2}, raw-feature linear reference {raw:.2}; {elapsed:.1?}"
    );
    println!("      {means}");
    vec![
        (
            "6a".into(),
            outcome(mc - ic > 2.0 && in_time, format!("Multi-Cont - Instance-Cont = {:+.2} pp (need > 2)", mc - ic)),
            true,
        ),
        (
            "6b".into(),
            outcome(
                ccg - mc > 2.0 && in_time,
                format!(
                    "ConCluGen - Multi-Cont = {:+.2} pp (need > 2); Multi-Cont sits {:+.2} pp from the raw-feature linear reference",
                    ccg - mc,
                    mc - raw
                ),
            ),
            false,
        ),
        (
            "6c".into(),
            outcome(ccg > sc && in_time, format!("ConCluGen linear eval - scratch@10% = {:+.2} pp", ccg - sc)),
            true,
        ),
    ]
}

// ---------------------------------------------------------------- 7

fn determinism() -> Outcome {
    let (train, test) = tiny_dataset(120, 7);
    let mut problems = Vec::new();
    let cfg = small_cfg(Method::ConCluGen);
    let a = pretrain(&cfg, &train).unwrap().checkpoint.to_bytes().unwrap();
    let b = pretrain(&cfg, &train).unwrap().checkpoint.to_bytes().unwrap();
    if a != b {
        problems.push("pretraining reruns differ".to_string());
    }
    let prev = exec::mode();
    exec::set_mode(ExecMode::Sequential);
    let s = pretrain(&cfg, &train).unwrap().checkpoint.to_bytes().unwrap();
    exec::set_mode(prev);
    if s != a {
        problems.push("sequential and parallel checkpoints differ".to_string());
    }
    let ck = Checkpoint::from_bytes(&a).unwrap();
    let report = |mode| {
        let mut d = DownstreamConfig::new(mode);
        d.epochs = 3;
        serde_json::to_vec(&attach_probe_and_train(&ck, &train, &test, &d).unwrap().report).unwrap()
    };
    for mode in [DownstreamMode::LinearEval, DownstreamMode::Finetune, DownstreamMode::SupervisedScratch] {
        if report(mode) != report(mode) {
            problems.push(format!("{mode:?} reports differ"));
        }
    }
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let sc = SynthConfig { n_samples: 40, ..SynthConfig::desk_scale(7) };
    synth_generate(&sc, dir1.path()).unwrap();
    synth_generate(&sc, dir2.path()).unwrap();
    let read = |d: &std::path::Path| {
        let mut files: Vec<_> = walk(d);
        files.sort();
        files.into_iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    if read(dir1.path()) != read(dir2.path()) {
        problems.push("synthetic datasets differ".to_string());
    }
    let detail = if problems.is_empty() {
        "checkpoints, reports and generated files byte-identical across reruns and execution modes".to_string()
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut results: Vec<(String, &str, Outcome, bool)> = Vec::new();
    let mut record = |id: &str, title: &'static str, o: Outcome, gated: bool| {
        println!(
            "{} [{id}] {title}: {}{}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            if gated { "" } else { " (reported, not gated)" }
        );
        results.push((id.to_string(), title, o, gated));
    };
    record("1", "gradient suite", gradient_suite(), true);
    record("2", "loss oracles", loss_oracles(), true);
    record("3", "k-means", kmeans_checks(), true);
    record("4", "composition and routing", composition(), true);
    record("5", "protocol gating", protocol_gating(), true);
    for (id, o, gated) in ordering() {
        record(&id, "end-to-end ordering", o, gated);
    }
    record("7", "determinism", determinism(), true);

    let failed: Vec<_> = results.iter().filter(|r| !r.2.pass).collect();
    let gated_failed = failed.iter().filter(|r| r.3).count();
    println!(
        "acceptance: {} of {} checks passed; {} failed ({} gated)",
        results.len() - failed.len(),
        results.len(),
        failed.len(),
        gated_failed
    );
    if gated_failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
