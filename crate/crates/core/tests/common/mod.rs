//! Shared helpers for the integration and acceptance tests: random tensors,
//! finite differences and brute-force loss oracles written with plain loops.

#![allow(dead_code, clippy::too_many_arguments, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use mmssl::data::{generate, Modality, Split, SplitData, SynthConfig};
use mmssl::numeric::{Graph, NodeId, ParamId, ParamSet, Tensor};
use mmssl::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REL_TOL: f64 = 1e-4;
/// Gradients whose magnitude is below this are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn within(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()) + ABS_FLOOR
}

/// Tally of a finite-difference run.
#[derive(Debug, Default)]
pub struct Fd {
    pub checked: usize,
    /// Coordinates sitting on a ReLU kink, where one-sided slopes disagree.
    pub kinks: usize,
    pub failures: Vec<String>,
}

impl Fd {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    /// Compares `analytic` against central differences of `f` around `x0`.
    pub fn probe(&mut self, what: &str, analytic: f64, x0: f64, f: &mut dyn FnMut(f64) -> f64) {
        let mut central = 0.0;
        for h in [1e-5, 1e-7] {
            central = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
            if within(analytic, central) {
                self.checked += 1;
                return;
            }
        }
        let h = 1e-5;
        let f0 = f(x0);
        let fwd = (f(x0 + h) - f0) / h;
        let bwd = (f0 - f(x0 - h)) / h;
        if (fwd - bwd).abs() > 1e-3 * (1.0 + central.abs()) {
            self.kinks += 1;
            return;
        }
        self.failures
            .push(format!("{what}: analytic {analytic:e} vs numeric {central:e}"));
    }
}

/// Graph-built scalar of some inputs and parameters.
pub type Build<'a> = dyn Fn(&mut Graph<f64>, &ParamSet<f64>, &[NodeId]) -> Result<NodeId> + 'a;

fn eval(build: &Build<'_>, params: &ParamSet<f64>, inputs: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, params, &ids).unwrap();
    g.scalar(out)
}

/// Checks every input coordinate and up to `per_param` sampled coordinates
/// of each listed parameter.
pub fn check_gradients(
    fd: &mut Fd,
    label: &str,
    build: &Build<'_>,
    params: &ParamSet<f64>,
    param_ids: &[ParamId],
    inputs: &[Tensor<f64>],
    per_param: usize,
    rng: &mut impl Rng,
) {
    let mut ps = params.clone();
    ps.iter_mut().for_each(|p| p.zero_grad());
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &ps, &ids).unwrap();
    let grads = g.backward(out, &mut ps).unwrap();

    for (k, (&id, t)) in ids.iter().zip(inputs).enumerate() {
        let zeros = Tensor::zeros(t.shape());
        let analytic = grads.wrt(id).unwrap_or(&zeros).clone();
        for j in 0..t.len() {
            let mut xs = inputs.to_vec();
            let x0 = t.data()[j];
            fd.probe(&format!("{label} input {k}[{j}]"), analytic.data()[j], x0, &mut |v| {
                xs[k].data_mut()[j] = v;
                eval(build, params, &xs)
            });
        }
    }
    for &pid in param_ids {
        let p = ps.get(pid);
        let n = p.value.len();
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| rng.random_range(0..n)).collect()
        };
        for j in coords {
            let analytic = p.grad.data()[j];
            let x0 = params.get(pid).value.data()[j];
            let mut trial = params.clone();
            fd.probe(&format!("{label} {}[{j}]", p.name), analytic, x0, &mut |v| {
                trial.get_mut(pid).value.data_mut()[j] = v;
                eval(build, &trial, inputs)
            });
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// InfoNCE by enumeration: anchor `i` against every other embedding of
/// both views, positive at `p2[i]`.
pub fn info_nce_oracle(p: &Tensor<f64>, p2: &Tensor<f64>, tau: f64) -> f64 {
    let a = rows(p);
    let b = rows(p2);
    let all: Vec<Vec<f64>> = a.iter().chain(&b).map(|r| unit(r)).collect();
    let n = a.len();
    let mut total = 0.0;
    for i in 0..n {
        let anchor = unit(&a[i]);
        let logits: Vec<f64> = (0..2 * n)
            .filter(|&j| j != i)
            .map(|j| dot(&anchor, &all[j]) / tau)
            .collect();
        let pos = dot(&anchor, &all[n + i]) / tau;
        total += log_sum_exp(&logits) - pos;
    }
    total / n as f64
}

/// One direction of the masked margin softmax: `sim[i][j]` rows, margin on
/// the diagonal.
fn mms_direction(sim: &[Vec<f64>], margin: f64) -> f64 {
    let n = sim.len();
    let mut total = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|j| if i == j { sim[i][j] - margin } else { sim[i][j] })
            .collect();
        total += log_sum_exp(&logits) - (sim[i][i] - margin);
    }
    total / n as f64
}

pub fn mms_pair_oracle(a: &Tensor<f64>, b: &Tensor<f64>, margin: f64, normalize: bool) -> f64 {
    let prep = |t: &Tensor<f64>| -> Vec<Vec<f64>> {
        rows(t)
            .into_iter()
            .map(|r| if normalize { unit(&r) } else { r })
            .collect()
    };
    let (a, b) = (prep(a), prep(b));
    let n = a.len();
    let sim: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| dot(&a[i], &b[j])).collect()).collect();
    let sim_t: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| sim[j][i]).collect()).collect();
    mms_direction(&sim, margin) + mms_direction(&sim_t, margin)
}

pub fn clustering_oracle(r: &Tensor<f64>, assign: &[usize], centroids: &Tensor<f64>, margin: f64) -> f64 {
    let c = rows(centroids);
    let mut total = 0.0;
    for (i, row) in rows(r).iter().enumerate() {
        let logits: Vec<f64> = c.iter().map(|ck| dot(row, ck)).collect();
        total += log_sum_exp(&logits) - (logits[assign[i]] - margin);
    }
    total / assign.len() as f64
}

/// A small labeled three-modality dataset.
pub fn tiny_dataset(n: usize, seed: u64) -> (SplitData, SplitData) {
    let cfg = SynthConfig {
        n_samples: n,
        n_classes: 3,
        latent_dim: 3,
        modality_dims: BTreeMap::from([(Modality::Video, 6), (Modality::Text, 5), (Modality::Audio, 4)]),
        ..SynthConfig::desk_scale(seed)
    };
    let ds = generate(&cfg).unwrap();
    (ds.split_data(Split::Train).unwrap(), ds.split_data(Split::Test).unwrap())
}
