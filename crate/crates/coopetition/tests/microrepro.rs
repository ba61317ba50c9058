mod common;
use common::{causal_mask, primitive_fd_error};
use coopetition::rngutil::stream;
use coopetition::tensor::Tensor;

#[test]
fn head_from_shared_input() {
    let mut rng = stream(99, "micro");
    let x = Tensor::randn(&[10, 6], 1.0, &mut rng); // B=2, seq 5, d=6
    let wq = Tensor::randn(&[6, 3], 1.0, &mut rng);
    let wk = Tensor::randn(&[6, 3], 1.0, &mut rng);
    let wv = Tensor::randn(&[6, 3], 1.0, &mut rng);
    let mask = causal_mask(5);
    for grad_of in 0..4 {
        let err = primitive_fd_error(
            |tape, vars| {
                let q2 = tape.matmul(vars[0], vars[1]).unwrap();
                let q = tape.reshape(q2, &[2, 5, 3]).unwrap();
                let k2 = tape.matmul(vars[0], vars[2]).unwrap();
                let k = tape.reshape(k2, &[2, 5, 3]).unwrap();
                let v2 = tape.matmul(vars[0], vars[3]).unwrap();
                let v = tape.reshape(v2, &[2, 5, 3]).unwrap();
                let scores = tape.bmm_nt(q, k).unwrap();
                let scaled = tape.scale(scores, 0.57735).unwrap();
                let pattern = tape.masked_softmax(scaled, mask.clone()).unwrap();
                let ctx = tape.bmm_nn(pattern, v).unwrap();
                tape.reshape(ctx, &[10, 3]).unwrap()
            },
            &[x.clone(), wq.clone(), wk.clone(), wv.clone()],
            grad_of,
            42,
        );
        eprintln!("shared-input head grad_of {grad_of}: err {err}");
        assert!(err < 1e-6, "input {grad_of}: {err}");
    }
}
