//! Shared test fixtures: finite-difference checks for the engine primitives,
//! the full model loss, and the toy loss; tiny banks and configs.

use std::sync::Arc;

use coopetition::data::{assemble_batch, sample_sequence, BankConfig, Batch, ClassBank, EvalKind};
use coopetition::fdcheck::{central_diff, relative_error};
use coopetition::hooks::HookSpec;
use coopetition::model::{forward_loss, insert_params, ModelConfig, ModelParams, Positional};
use coopetition::rngutil::stream;
use coopetition::tape::{Mask, Tape, Var};
use coopetition::tensor::Tensor;
use coopetition::toy::{toy_grads, toy_loss, ToyConfig, ToyState};

pub fn tiny_bank(classes: usize, exemplars: usize, input_dim: usize, seed: u64) -> ClassBank {
    ClassBank::build(BankConfig {
        num_classes: classes,
        exemplars_per_class: exemplars,
        input_dim,
        noise: 0.1,
        seed,
    })
    .unwrap()
}

pub fn reduced_model_config() -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        d_model: 16,
        num_heads: 8,
        label_vocab: 16,
        input_dim: 8,
        positional: Positional::Learned,
    }
}

pub fn sample_eval_batch(
    bank: &ClassBank,
    kind: EvalKind,
    n: usize,
    seed: u64,
) -> Batch<f64> {
    let mut rng = stream(seed, "fixture");
    let seqs: Vec<_> = (0..n).map(|_| sample_sequence(kind, bank, &mut rng).unwrap()).collect();
    assemble_batch(bank, seqs).unwrap()
}

/// Analytic-vs-finite-difference relative error for one primitive op.
/// The scalar readout is sum(op_output * fixed_weights), differentiated with
/// respect to the op input selected by `grad_of`.
pub fn primitive_fd_error(
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
    inputs: &[Tensor<f64>],
    grad_of: usize,
    weight_seed: u64,
) -> f64 {
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let mut rng = stream(weight_seed, "fd-weights");
        Tensor::randn(tape.value(out).shape(), 1.0, &mut rng)
    };

    let eval = |flat: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let mut vars = Vec::new();
        for (i, t) in inputs.iter().enumerate() {
            let tensor = if i == grad_of {
                Tensor::from_vec(t.shape(), flat.to_vec()).unwrap()
            } else {
                t.clone()
            };
            vars.push(tape.leaf(tensor));
        }
        let out = build(&mut tape, &vars);
        let w = tape.leaf(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum_all(prod).unwrap();
        tape.value(loss).scalar_value()
    };

    // analytic gradient
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let w = tape.leaf(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum_all(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        grads.get(vars[grad_of]).data().to_vec()
    };

    let x0 = inputs[grad_of].data().to_vec();
    let mut f = eval;
    let fd = central_diff(&mut f, &x0, 1e-5);
    relative_error(&analytic, &fd)
}

/// Relative FD error of the full transformer loss w.r.t. every parameter, at
/// 64-bit on the reduced config. Returns the worst error over parameters.
pub fn model_loss_fd_error(config: &ModelConfig, batch_n: usize, seed: u64) -> f64 {
    let bank = tiny_bank(config.label_vocab, 3, config.input_dim, seed);
    let batch = sample_eval_batch(&bank, EvalKind::Bursty, batch_n, seed);
    let targets: Vec<usize> = batch.seqs.iter().map(|s| s.train_target()).collect();
    let params = ModelParams::<f64>::init(config, seed).unwrap();

    let loss_of = |p: &ModelParams<f64>| -> f64 {
        let mut tape = Tape::new();
        let pv = insert_params(&mut tape, p);
        let (loss, _) =
            forward_loss(&mut tape, &pv, config, &batch, &HookSpec::none(), None, &targets)
                .unwrap();
        tape.value(loss).scalar_value()
    };

    // analytic grads by name
    let (_, grads, _) =
        coopetition::model::loss_and_grads(&params, &batch, &HookSpec::none(), &targets).unwrap();

    let mut worst = 0.0f64;
    for (name, tensor) in params.named() {
        let analytic = grads[&name].data().to_vec();
        let mut f = |flat: &[f64]| -> f64 {
            let mut p = params.clone();
            p.set(&name, Tensor::from_vec(tensor.shape(), flat.to_vec()).unwrap()).unwrap();
            loss_of(&p)
        };
        let fd = central_diff(&mut f, tensor.data(), 1e-5);
        let err = relative_error(&analytic, &fd);
        if err > 1e-4 {
            eprintln!("fd mismatch at `{name}`: {err}");
        }
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Relative FD error of the toy loss gradient (closed form vs differences).
pub fn toy_fd_error(config: &ToyConfig) -> f64 {
    let state = ToyState::init(config);
    let [ga, gb, gc, gd] = toy_grads(&state, config);
    let analytic: Vec<f64> =
        ga.into_iter().chain(gb).chain(gc).chain(gd).collect();

    let [da, db, dc, dd] = config.dims;
    let x0: Vec<f64> = state
        .a
        .iter()
        .chain(&state.b)
        .chain(&state.c)
        .chain(&state.d)
        .copied()
        .collect();
    let mut f = |flat: &[f64]| -> f64 {
        let s = ToyState {
            a: flat[..da].to_vec(),
            b: flat[da..da + db].to_vec(),
            c: flat[da + db..da + db + dc].to_vec(),
            d: flat[da + db + dc..da + db + dc + dd].to_vec(),
            ..state.clone()
        };
        toy_loss(&s, config).total
    };
    let fd = central_diff(&mut f, &x0, 1e-6);
    relative_error(&analytic, &fd)
}

/// Standard causal mask shared by attention-shaped fixtures.
pub fn causal_mask(n: usize) -> Arc<Mask> {
    Arc::new(Mask::causal(n))
}
