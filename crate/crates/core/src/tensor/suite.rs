//! Randomized gradient checks covering every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{grad_check, Mode, RunningStats, Tape, Tensor, Var};
use crate::error::Result;

/// Finite-difference step.
pub const SUITE_STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const SUITE_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteEntry {
    pub op: &'static str,
    pub cases: u64,
    pub max_rel_err: f64,
    pub passed: bool,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Values at least 0.05 from zero, so ±h never straddles the ReLU kink.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.05..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Contracts an output of any shape with fixed random weights.
fn project<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = rand_tensor(&mut rng, &y.shape());
    y.mul(tape.constant(&w)).map(Var::sum)
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Probability rows for cross-entropy targets.
pub fn soft_targets(rng: &mut ChaCha8Rng, b: usize, k: usize) -> Tensor<f64> {
    let mut t = Tensor::from_fn([b, k], |_| rng.random_range(0.0..1.0));
    for row in t.data_mut().chunks_exact_mut(k) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    t
}

type Case = fn(u64) -> Result<f64>;

fn matmul(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k, n) = (dims(&mut rng, 1, 5), dims(&mut rng, 1, 5), dims(&mut rng, 1, 5));
    let a = rand_tensor(&mut rng, &[m, k]);
    let b = rand_tensor(&mut rng, &[k, n]);
    grad_check(|t, v| project(t, v[0].matmul(v[1])?, seed), &[a, b], SUITE_STEP)
}

fn batched_matmul(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let (bt, m, k, n) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 4), dims(&mut rng, 1, 4), dims(&mut rng, 1, 4));
    let a = rand_tensor(&mut rng, &[bt, 2, m, k]);
    let b = rand_tensor(&mut rng, &[bt, 2, k, n]);
    let shared = rand_tensor(&mut rng, &[k, n]);
    let e1 = grad_check(|t, v| project(t, v[0].matmul(v[1])?, seed), &[a.clone(), b], SUITE_STEP)?;
    let e2 = grad_check(|t, v| project(t, v[0].matmul(v[1])?, seed), &[a.clone(), shared], SUITE_STEP)?;
    let bt_nt = rand_tensor(&mut rng, &[bt, 2, n, k]);
    let shared_nt = rand_tensor(&mut rng, &[n, k]);
    let e3 = grad_check(|t, v| project(t, v[0].matmul_nt(v[1])?, seed), &[a.clone(), bt_nt], SUITE_STEP)?;
    let e4 = grad_check(|t, v| project(t, v[0].matmul_nt(v[1])?, seed), &[a, shared_nt], SUITE_STEP)?;
    Ok(e1.max(e2).max(e3).max(e4))
}

fn elementwise(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
    let (a, b, c) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 4), dims(&mut rng, 1, 5));
    let x = rand_tensor(&mut rng, &[a, b, c]);
    let bias = rand_tensor(&mut rng, &[b, c]);
    let y = rand_tensor(&mut rng, &[a, b, c]);
    grad_check(|t, v| project(t, v[0].add(v[1])?.mul(v[2])?.scale(-1.7), seed), &[x, bias, y], SUITE_STEP)
}

fn shape_ops(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let (a, b, c) = (dims(&mut rng, 1, 3), dims(&mut rng, 2, 4), dims(&mut rng, 1, 4));
    let x = rand_tensor(&mut rng, &[a, b, c]);
    let tok = rand_tensor(&mut rng, &[1, 1, c]);
    let idx = rng.random_range(0..b);
    grad_check(
        |t, v| {
            let cls = v[1].expand_leading(a)?;
            let joined = Var::cat(&[cls, v[0]], 1)?;
            let p = joined.permute(&[2, 0, 1])?.reshape(&[c * a, b + 1])?.transpose()?;
            let s = v[0].select(1, idx)?;
            project(t, p, seed)?.add(project(t, s, seed + 1)?)
        },
        &[x, tok],
        SUITE_STEP,
    )
}

fn conv2d(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
    let (c, o) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 3));
    let k = dims(&mut rng, 1, 3);
    let s = dims(&mut rng, 1, 2);
    let p = rng.random_range(0..k);
    let hw = dims(&mut rng, k.max(2), 6);
    let x = rand_tensor(&mut rng, &[2, c, hw, hw + 1]);
    let w = rand_tensor(&mut rng, &[o, c, k, k]);
    let b = rand_tensor(&mut rng, &[o]);
    grad_check(|t, v| project(t, v[0].conv2d(v[1], Some(v[2]), [s, s], [p, p])?, seed), &[x, w, b], SUITE_STEP)
}

/// Batch norm on `shape` in the given mode.
pub fn batchnorm_case(seed: u64, shape: &[usize], mode: Mode) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
    let ch = shape[1];
    let x = rand_tensor(&mut rng, shape);
    let g = Tensor::from_fn([ch], |_| rng.random_range(0.5..1.5));
    let b = rand_tensor(&mut rng, &[ch]);
    let stats = RunningStats {
        mean: (0..ch).map(|_| rng.random_range(-0.5..0.5)).collect(),
        var: (0..ch).map(|_| rng.random_range(0.5..2.0)).collect(),
    };
    grad_check(
        |t, v| {
            let mut s = stats.clone();
            project(t, v[0].batchnorm2d(v[1], v[2], &mut s, mode, 0.1, 1e-5)?, seed)
        },
        &[x, g, b],
        SUITE_STEP,
    )
}

fn batchnorm(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [dims(&mut rng, 1, 3), dims(&mut rng, 1, 3), dims(&mut rng, 2, 4), dims(&mut rng, 2, 4)];
    let mode = if seed % 2 == 0 { Mode::Train } else { Mode::Eval };
    batchnorm_case(seed, &shape, mode)
}

/// Layer norm over the last axis of `shape`.
pub fn layernorm_case(seed: u64, shape: &[usize]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
    let d = *shape.last().expect("non-empty shape");
    let x = rand_tensor(&mut rng, shape);
    let g = Tensor::from_fn([d], |_| rng.random_range(0.5..1.5));
    let b = rand_tensor(&mut rng, &[d]);
    grad_check(|t, v| project(t, v[0].layernorm(v[1], v[2], 1e-5)?, seed), &[x, g, b], SUITE_STEP)
}

fn layernorm(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [dims(&mut rng, 1, 3), dims(&mut rng, 1, 4), dims(&mut rng, 2, 8)];
    layernorm_case(seed, &shape)
}

fn relu(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
    let shape = [dims(&mut rng, 1, 4), dims(&mut rng, 1, 6)];
    let x = rand_away_from_zero(&mut rng, &shape);
    grad_check(|t, v| project(t, v[0].relu(), seed), &[x], SUITE_STEP)
}

fn gelu(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(750 + seed);
    let shape = [dims(&mut rng, 1, 4), dims(&mut rng, 1, 6)];
    let x = Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-3.0..3.0));
    grad_check(|t, v| project(t, v[0].gelu(), seed), &[x], SUITE_STEP)
}

fn softmax(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
    let shape = [dims(&mut rng, 1, 3), dims(&mut rng, 2, 5), dims(&mut rng, 1, 4)];
    let axis = rng.random_range(0..3);
    let x = rand_tensor(&mut rng, &shape);
    grad_check(|t, v| project(t, v[0].softmax(axis)?, seed), &[x], SUITE_STEP)
}

fn cross_entropy(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
    let (b, k) = (dims(&mut rng, 1, 5), dims(&mut rng, 2, 12));
    let z = rand_tensor(&mut rng, &[b, k]);
    let targets = soft_targets(&mut rng, b, k);
    grad_check(|_, v| v[0].cross_entropy(&targets), &[z], SUITE_STEP)
}

fn sum_mean(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let shape = [dims(&mut rng, 1, 4), dims(&mut rng, 1, 5)];
    let x = rand_tensor(&mut rng, &shape);
    grad_check(|_, v| v[0].mul(v[0])?.mean().add(v[0].sum().scale(0.3)), &[x], SUITE_STEP)
}

/// Every differentiable op as `(name, case)`.
pub const SUITE: [(&str, Case); 12] = [
    ("matmul", matmul),
    ("batched_matmul", batched_matmul),
    ("add_mul_scale", elementwise),
    ("reshape_permute_select_cat_expand", shape_ops),
    ("conv2d", conv2d),
    ("batchnorm2d", batchnorm),
    ("layernorm", layernorm),
    ("relu", relu),
    ("gelu", gelu),
    ("softmax", softmax),
    ("cross_entropy", cross_entropy),
    ("sum_mean", sum_mean),
];

/// Runs each op over `seeds` random shapes at float64.
pub fn gradcheck_suite(seeds: u64) -> Result<Vec<SuiteEntry>> {
    SUITE
        .iter()
        .map(|&(op, case)| {
            let mut worst = 0.0f64;
            for seed in 0..seeds {
                worst = worst.max(case(seed)?);
            }
            Ok(SuiteEntry { op, cases: seeds, max_rel_err: worst, passed: worst < SUITE_TOL })
        })
        .collect()
}
