//! Finite-difference verification of every engine primitive, the full model
//! loss on a reduced config, and the toy-loss closed forms.

mod common;

use std::sync::Arc;

use common::{causal_mask, model_loss_fd_error, primitive_fd_error, toy_fd_error};
use coopetition::rngutil::stream;
use coopetition::tensor::Tensor;
use coopetition::toy::ToyConfig;

const PRIMITIVE_TOL: f64 = 1e-6;

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = stream(seed, "gradcheck");
    Tensor::randn(shape, 1.0, &mut rng)
}

#[test]
fn matmul_gradients() {
    let a = randn(&[3, 4], 1);
    let b = randn(&[4, 5], 2);
    for grad_of in 0..2 {
        let err = primitive_fd_error(
            |tape, vars| tape.matmul(vars[0], vars[1]).unwrap(),
            &[a.clone(), b.clone()],
            grad_of,
            7,
        );
        assert!(err < PRIMITIVE_TOL, "matmul input {grad_of}: {err}");
    }
}

#[test]
fn bmm_gradients() {
    let q = randn(&[2, 5, 3], 3);
    let k = randn(&[2, 4, 3], 4);
    for grad_of in 0..2 {
        let err = primitive_fd_error(
            |tape, vars| tape.bmm_nt(vars[0], vars[1]).unwrap(),
            &[q.clone(), k.clone()],
            grad_of,
            8,
        );
        assert!(err < PRIMITIVE_TOL, "bmm_nt input {grad_of}: {err}");
    }
    let p = randn(&[2, 5, 4], 5);
    let v = randn(&[2, 4, 3], 6);
    for grad_of in 0..2 {
        let err = primitive_fd_error(
            |tape, vars| tape.bmm_nn(vars[0], vars[1]).unwrap(),
            &[p.clone(), v.clone()],
            grad_of,
            9,
        );
        assert!(err < PRIMITIVE_TOL, "bmm_nn input {grad_of}: {err}");
    }
}

#[test]
fn elementwise_gradients() {
    let a = randn(&[4, 3], 10);
    let b = randn(&[4, 3], 11);
    for grad_of in 0..2 {
        let err = primitive_fd_error(
            |tape, vars| tape.add(vars[0], vars[1]).unwrap(),
            &[a.clone(), b.clone()],
            grad_of,
            12,
        );
        assert!(err < PRIMITIVE_TOL, "add input {grad_of}: {err}");
        let err = primitive_fd_error(
            |tape, vars| tape.mul(vars[0], vars[1]).unwrap(),
            &[a.clone(), b.clone()],
            grad_of,
            13,
        );
        assert!(err < PRIMITIVE_TOL, "mul input {grad_of}: {err}");
    }
    let err = primitive_fd_error(
        |tape, vars| tape.scale(vars[0], -1.7).unwrap(),
        &[a.clone()],
        0,
        14,
    );
    assert!(err < PRIMITIVE_TOL, "scale: {err}");
}

#[test]
fn gather_and_interleave_gradients() {
    let table = randn(&[6, 4], 15);
    let err = primitive_fd_error(
        |tape, vars| tape.gather_rows(vars[0], Arc::new(vec![0, 3, 3, 5])).unwrap(),
        &[table],
        0,
        16,
    );
    assert!(err < PRIMITIVE_TOL, "gather_rows: {err}");

    let a = randn(&[3, 4], 17);
    let b = randn(&[2, 4], 18);
    let pattern = Arc::new(vec![true, false, true, false, true]);
    for grad_of in 0..2 {
        let err = primitive_fd_error(
            |tape, vars| tape.interleave_rows(vars[0], vars[1], pattern.clone()).unwrap(),
            &[a.clone(), b.clone()],
            grad_of,
            19,
        );
        assert!(err < PRIMITIVE_TOL, "interleave input {grad_of}: {err}");
    }
}

#[test]
fn masked_softmax_gradients() {
    let logits = randn(&[3, 5, 5], 20);
    let mask = causal_mask(5);
    let err = primitive_fd_error(
        |tape, vars| tape.masked_softmax(vars[0], mask.clone()).unwrap(),
        &[logits],
        0,
        21,
    );
    assert!(err < PRIMITIVE_TOL, "masked_softmax: {err}");
}

#[test]
fn cross_entropy_gradients() {
    let logits = randn(&[4, 9], 22);
    let targets = Arc::new(vec![0usize, 3, 8, 3]);
    let err = primitive_fd_error(
        |tape, vars| tape.cross_entropy(vars[0], targets.clone()).unwrap(),
        &[logits],
        0,
        23,
    );
    assert!(err < PRIMITIVE_TOL, "cross_entropy: {err}");
}

#[test]
fn sum_and_reshape_gradients() {
    let a = randn(&[3, 4], 24);
    let err = primitive_fd_error(|tape, vars| tape.sum_all(vars[0]).unwrap(), &[a.clone()], 0, 25);
    assert!(err < PRIMITIVE_TOL, "sum_all: {err}");
    let err = primitive_fd_error(
        |tape, vars| tape.reshape(vars[0], &[2, 6]).unwrap(),
        &[a],
        0,
        26,
    );
    assert!(err < PRIMITIVE_TOL, "reshape: {err}");
}

#[test]
fn full_model_loss_matches_finite_differences() {
    let config = common::reduced_model_config();
    let err = model_loss_fd_error(&config, 4, 31);
    assert!(err <= 1e-4, "model loss fd error {err}");
}

#[test]
fn one_layer_model_loss_matches_finite_differences() {
    let mut config = common::reduced_model_config();
    config.num_layers = 1;
    let err = model_loss_fd_error(&config, 4, 32);
    assert!(err <= 1e-4, "1L model loss fd error {err}");
}

#[test]
fn toy_loss_matches_finite_differences() {
    for seed in 0..4 {
        let config = ToyConfig { dims: [5, 4, 3, 7], seed, ..Default::default() };
        let err = toy_fd_error(&config);
        assert!(err <= 1e-8, "toy fd error {err} at seed {seed}");
    }
}
