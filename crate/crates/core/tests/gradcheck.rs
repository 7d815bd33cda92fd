//! Central-difference checks for every differentiable tensor op at float64.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitstem::tensor::suite::{batchnorm_case, gradcheck_suite, layernorm_case, soft_targets, SUITE, SUITE_TOL};
use vitstem::tensor::{grad_check, Mode, Tape, Tensor, Var};
use vitstem::Result;

const H: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn project<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = rand_tensor(&mut rng, &y.shape());
    y.mul(tape.constant(&w)).map(Var::sum)
}

#[test]
fn every_op_over_twenty_seeds() {
    let start = Instant::now();
    let results = gradcheck_suite(20).unwrap();
    assert_eq!(results.len(), SUITE.len());
    for r in &results {
        println!("{:<36} worst rel. error {:.3e}", r.op, r.max_rel_err);
        assert!(r.passed && r.max_rel_err < SUITE_TOL, "{r:?}");
    }
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn matmul_example_3x4_by_4x2() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]);
    let err = grad_check(|t, v| project(t, v[0].matmul(v[1])?, 1), &[a, b], H).unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn conv2d_example_stride2_pad1() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[1, 2, 5, 5]);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    let b = rand_tensor(&mut rng, &[3]);
    let err = grad_check(|t, v| project(t, v[0].conv2d(v[1], Some(v[2]), [2, 2], [1, 1])?, 2), &[x, w, b], H).unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn batchnorm_example_2x3x4x4() {
    for mode in [Mode::Train, Mode::Eval] {
        let err = batchnorm_case(99, &[2, 3, 4, 4], mode).unwrap();
        assert!(err < 1e-5, "{mode:?}: {err:e}");
    }
}

#[test]
fn layernorm_example_2x5x8() {
    let err = layernorm_case(5, &[2, 5, 8]).unwrap();
    assert!(err < 1e-5, "{err:e}");
}

#[test]
fn gelu_meets_tight_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn([4, 6], |_| rng.random_range(-3.0..3.0));
    let err = grad_check(|t, v| project(t, v[0].gelu(), 3), &[x], H).unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn cross_entropy_example_4x10() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let z = rand_tensor(&mut rng, &[4, 10]);
    let targets = soft_targets(&mut rng, 4, 10);
    let err = grad_check(|_, v| v[0].cross_entropy(&targets), &[z], H).unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn wrong_gradient_is_caught() {
    // relu at exactly 0 has a one-sided derivative the central difference
    // averages, so a check straddling the kink must report a large error.
    let x = Tensor::new([1], vec![0.0f64]).unwrap();
    let err = grad_check(|_, v| Ok(v[0].relu().sum()), &[x], H).unwrap();
    assert!(err > 1e-2, "{err:e}");
}
