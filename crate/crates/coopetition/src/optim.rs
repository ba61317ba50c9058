//! Adam with bias correction; one moment pair per named parameter.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: first/second moments per parameter plus the step counter.
#[derive(Clone)]
pub struct AdamState<T> {
    pub hyper: AdamHyper,
    pub t: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(hyper: AdamHyper) -> Self {
        AdamState { hyper, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One bias-corrected update over named (param, grad) pairs. Names in
    /// `frozen` keep both their parameter values and moments untouched.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor<T>)],
        grads: &BTreeMap<String, Tensor<T>>,
        frozen: &dyn Fn(&str) -> bool,
    ) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);

        for (name, param) in params.iter_mut() {
            if frozen(name) {
                continue;
            }
            let grad = grads
                .get(name)
                .ok_or_else(|| Error::invalid(format!("missing gradient for {name}")))?;
            if grad.shape() != param.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    detail: format!("{name}: param {:?} vs grad {:?}", param.shape(), grad.shape()),
                });
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(param.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(param.shape()));
            if m.shape() != param.shape() || v.shape() != param.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    detail: format!("{name}: stale moment shape"),
                });
            }

            let b1 = T::from_f64(h.beta1);
            let b2 = T::from_f64(h.beta2);
            let one_m_b1 = T::from_f64(1.0 - h.beta1);
            let one_m_b2 = T::from_f64(1.0 - h.beta2);
            let lr_over_bc1 = T::from_f64(h.lr / bc1);
            let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
            let eps = T::from_f64(h.eps);

            let mut pd = param.data().to_vec();
            let mut md = m.data().to_vec();
            let mut vd = v.data().to_vec();
            let gd = grad.data();
            pd.par_chunks_mut(4096)
                .zip(md.par_chunks_mut(4096))
                .zip(vd.par_chunks_mut(4096))
                .zip(gd.par_chunks(4096))
                .for_each(|(((pc, mc), vc), gc)| {
                    for i in 0..pc.len() {
                        let g = gc[i];
                        mc[i] = b1 * mc[i] + one_m_b1 * g;
                        vc[i] = b2 * vc[i] + one_m_b2 * g * g;
                        let vhat_sqrt = (vc[i] * inv_sqrt_bc2 * inv_sqrt_bc2).sqrt();
                        pc[i] = pc[i] - lr_over_bc1 * mc[i] / (vhat_sqrt + eps);
                    }
                });
            **param = Tensor::from_vec(param.shape(), pd)?;
            param.ensure_finite("adam_step")?;
            *m = Tensor::from_vec(m.shape(), md)?;
            *v = Tensor::from_vec(v.shape(), vd)?;
        }
        Ok(())
    }
}

/// Scalar reference Adam used as the oracle in tests: same hyperparameters,
/// one parameter, textbook update.
pub fn adam_scalar_reference(
    hyper: AdamHyper,
    x0: f64,
    grads: &[f64],
) -> Vec<f64> {
    let (mut m, mut v, mut x) = (0.0f64, 0.0f64, x0);
    let mut trace = Vec::with_capacity(grads.len());
    for (i, &g) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g;
        let mhat = m / (1.0 - hyper.beta1.powi(t));
        let vhat = v / (1.0 - hyper.beta2.powi(t));
        x -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
        trace.push(x);
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(&[v.len()], v).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        // first step, g=1, eps ~ 0: mhat/sqrt(vhat) = 1 so delta = -lr
        let hyper = AdamHyper { lr: 0.01, eps: 1e-16, ..Default::default() };
        let mut state = AdamState::new(hyper);
        let mut p = one_param(vec![1.0]);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), one_param(vec![1.0]));
        state
            .step(&mut [("p".to_string(), &mut p)], &grads, &|_| false)
            .unwrap();
        assert!((p.data()[0] - (1.0 - 0.01)).abs() < 1e-12);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_grad_zero_moments_leaves_params() {
        let mut state = AdamState::new(AdamHyper::default());
        let mut p = one_param(vec![3.0, -1.5]);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), one_param(vec![0.0, 0.0]));
        state
            .step(&mut [("p".to_string(), &mut p)], &grads, &|_| false)
            .unwrap();
        assert_eq!(p.data(), &[3.0, -1.5]);
    }

    #[test]
    fn matches_scalar_reference_over_steps() {
        let hyper = AdamHyper { lr: 0.05, ..Default::default() };
        let gseq = [0.7, 0.7, 0.7, -0.3, 0.1];
        let oracle = adam_scalar_reference(hyper, 2.0, &gseq);

        let mut state = AdamState::new(hyper);
        let mut p = one_param(vec![2.0]);
        for (i, &g) in gseq.iter().enumerate() {
            let mut grads = BTreeMap::new();
            grads.insert("p".to_string(), one_param(vec![g]));
            state
                .step(&mut [("p".to_string(), &mut p)], &grads, &|_| false)
                .unwrap();
            assert!(
                (p.data()[0] - oracle[i]).abs() < 1e-12,
                "step {i}: {} vs oracle {}",
                p.data()[0],
                oracle[i]
            );
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut state = AdamState::new(AdamHyper::default());
        let mut p = one_param(vec![1.0, 2.0]);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), one_param(vec![1.0]));
        assert!(state
            .step(&mut [("p".to_string(), &mut p)], &grads, &|_| false)
            .is_err());
    }

    #[test]
    fn frozen_param_is_bitwise_untouched() {
        let mut state = AdamState::new(AdamHyper { lr: 0.1, ..Default::default() });
        let mut p = one_param(vec![1.25]);
        let mut q = one_param(vec![1.25]);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), one_param(vec![0.5]));
        grads.insert("q".to_string(), one_param(vec![0.5]));
        state
            .step(
                &mut [("p".to_string(), &mut p), ("q".to_string(), &mut q)],
                &grads,
                &|name| name == "q",
            )
            .unwrap();
        assert_ne!(p.data()[0], 1.25);
        assert_eq!(q.data()[0].to_bits(), 1.25f64.to_bits());
        assert!(!state.m.contains_key("q"));
    }
}
