//! The 1-2 layer attention-only causal transformer with a full forward trace
//! and hook points for every intervention the probe toolkit needs.
//!
//! Residual stream layout: exemplar tokens (positions 0/2/4) enter through a
//! linear input projection, label tokens (positions 1/3) through an embedding
//! table, plus positional embeddings. Heads read the accumulated stream and
//! add their outputs back; the final-position residual is unembedded into
//! label logits. No normalization layers, no biases, loss at the final
//! position only.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::data::{Batch, LABEL_POSITIONS, QUERY_POS, SEQ_LEN};
use crate::error::{Error, Result};
use crate::hooks::{CacheComponent, EdgeClass, HookSpec};
use crate::rngutil::rng_from;
use crate::tape::{Mask, Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Positional {
    Learned,
    Sinusoidal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub label_vocab: usize,
    pub input_dim: usize,
    pub positional: Positional,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            d_model: 64,
            num_heads: 8,
            label_vocab: 12800,
            input_dim: 64,
            positional: Positional::Learned,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.num_layers) {
            return Err(Error::invalid("num_layers must be 1 or 2"));
        }
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(Error::invalid("num_heads must divide d_model"));
        }
        if self.label_vocab < 2 {
            return Err(Error::invalid("label_vocab must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct HeadParams<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

#[derive(Clone)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub w_in: Tensor<T>,
    pub label_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub layers: Vec<Vec<HeadParams<T>>>,
    pub w_out: Tensor<T>,
}

pub const INIT_SCALE: f64 = 0.02;

impl<T: Scalar> ModelParams<T> {
    /// Gaussian init, scale 0.02, deterministic per seed. Sinusoidal
    /// positional tables are fixed rather than drawn.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(seed);
        let d = config.d_model;
        let dh = config.d_head();
        let w_in = Tensor::randn(&[config.input_dim, d], INIT_SCALE, &mut rng);
        let label_emb = Tensor::randn(&[config.label_vocab, d], INIT_SCALE, &mut rng);
        let pos_emb = match config.positional {
            Positional::Learned => Tensor::randn(&[SEQ_LEN, d], INIT_SCALE, &mut rng),
            Positional::Sinusoidal => sinusoidal_table(d),
        };
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let mut heads = Vec::with_capacity(config.num_heads);
            for _ in 0..config.num_heads {
                heads.push(HeadParams {
                    wq: Tensor::randn(&[d, dh], INIT_SCALE, &mut rng),
                    wk: Tensor::randn(&[d, dh], INIT_SCALE, &mut rng),
                    wv: Tensor::randn(&[d, dh], INIT_SCALE, &mut rng),
                    wo: Tensor::randn(&[dh, d], INIT_SCALE, &mut rng),
                });
            }
            layers.push(heads);
        }
        let w_out = Tensor::randn(&[d, config.label_vocab], INIT_SCALE, &mut rng);
        Ok(ModelParams { config: config.clone(), w_in, label_emb, pos_emb, layers, w_out })
    }

    /// Canonical (name, tensor) order used by checkpoints and the optimizer.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("w_in".to_string(), &self.w_in),
            ("label_emb".to_string(), &self.label_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (l, heads) in self.layers.iter().enumerate() {
            for (h, hp) in heads.iter().enumerate() {
                out.push((format!("l{l}.h{h}.wq"), &hp.wq));
                out.push((format!("l{l}.h{h}.wk"), &hp.wk));
                out.push((format!("l{l}.h{h}.wv"), &hp.wv));
                out.push((format!("l{l}.h{h}.wo"), &hp.wo));
            }
        }
        out.push(("w_out".to_string(), &self.w_out));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("w_in".to_string(), &mut self.w_in),
            ("label_emb".to_string(), &mut self.label_emb),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (l, heads) in self.layers.iter_mut().enumerate() {
            for (h, hp) in heads.iter_mut().enumerate() {
                out.push((format!("l{l}.h{h}.wq"), &mut hp.wq));
                out.push((format!("l{l}.h{h}.wk"), &mut hp.wk));
                out.push((format!("l{l}.h{h}.wv"), &mut hp.wv));
                out.push((format!("l{l}.h{h}.wo"), &mut hp.wo));
            }
        }
        out.push(("w_out".to_string(), &mut self.w_out));
        out
    }

    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        for (n, t) in self.named_mut() {
            if n == name {
                if t.shape() != tensor.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "params.set",
                        detail: format!("{name}: {:?} vs {:?}", t.shape(), tensor.shape()),
                    });
                }
                *t = tensor;
                return Ok(());
            }
        }
        Err(Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            w_in: self.w_in.map(|v| U::from_f64(v.as_f64())),
            label_emb: self.label_emb.map(|v| U::from_f64(v.as_f64())),
            pos_emb: self.pos_emb.map(|v| U::from_f64(v.as_f64())),
            layers: self
                .layers
                .iter()
                .map(|heads| {
                    heads
                        .iter()
                        .map(|hp| HeadParams {
                            wq: hp.wq.map(|v| U::from_f64(v.as_f64())),
                            wk: hp.wk.map(|v| U::from_f64(v.as_f64())),
                            wv: hp.wv.map(|v| U::from_f64(v.as_f64())),
                            wo: hp.wo.map(|v| U::from_f64(v.as_f64())),
                        })
                        .collect()
                })
                .collect(),
            w_out: self.w_out.map(|v| U::from_f64(v.as_f64())),
        }
    }

    /// FNV over raw bits; probes assert this is unchanged by their reads.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for (_, t) in self.named() {
            for &v in t.data() {
                h ^= v.as_f64().to_bits();
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// Sinusoidal positional table (fixed, untrained).
fn sinusoidal_table<T: Scalar>(d: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); SEQ_LEN * d];
    for p in 0..SEQ_LEN {
        for i in 0..d / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[p * d + 2 * i] = T::from_f64((p as f64 * freq).sin());
            data[p * d + 2 * i + 1] = T::from_f64((p as f64 * freq).cos());
        }
    }
    Tensor::from_vec(&[SEQ_LEN, d], data).unwrap()
}

/// The LOWER partition: embeddings plus first-layer heads. UPPER is the
/// complement (second-layer heads and the unembedding).
pub fn is_lower(name: &str) -> bool {
    name == "w_in" || name == "label_emb" || name == "pos_emb" || name.starts_with("l0.")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Lower,
    Upper,
}

pub fn in_partition(name: &str, part: Partition) -> bool {
    match part {
        Partition::Lower => is_lower(name),
        Partition::Upper => !is_lower(name),
    }
}

/// Tape handles for all parameters, in canonical order.
pub struct ParamVars {
    pub names: Vec<String>,
    pub vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        let idx = self.names.iter().position(|n| n == name).expect("param name");
        self.vars[idx]
    }
}

pub fn insert_params<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>) -> ParamVars {
    let mut names = Vec::new();
    let mut vars = Vec::new();
    for (name, tensor) in params.named() {
        names.push(name);
        vars.push(tape.leaf(tensor.clone()));
    }
    ParamVars { names, vars }
}

/// Everything captured during a forward pass; doubles as the cache source for
/// freeze-from-cache hooks.
#[derive(Clone)]
pub struct HeadTrace<T> {
    /// `(B, SEQ_LEN, d_head)`
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    /// `(B, SEQ_LEN, SEQ_LEN)`, row-stochastic over causal support.
    pub pattern: Tensor<T>,
    /// `(B*SEQ_LEN, d_model)` contribution added to the residual stream.
    pub out: Tensor<T>,
}

#[derive(Clone)]
pub struct ForwardTrace<T> {
    /// `(B*SEQ_LEN, d_model)` residual after embeddings (the direct path).
    pub embed: Tensor<T>,
    pub heads: Vec<Vec<HeadTrace<T>>>,
    /// `(B*SEQ_LEN, d_model)`: embed plus every head contribution.
    pub residual_final: Tensor<T>,
    /// `(B, d_model)` embedding-only residual at the query position.
    pub direct_final: Tensor<T>,
    pub logits: Tensor<T>,
}

pub struct ForwardOutput<T> {
    pub logits: Var,
    pub trace: ForwardTrace<T>,
}

/// Causal scaled-dot-product forward pass with hooks applied. `cache` must be
/// supplied when the spec freezes any component from a previous pass.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    config: &ModelConfig,
    batch: &Batch<T>,
    hooks: &HookSpec,
    cache: Option<&ForwardTrace<T>>,
) -> Result<ForwardOutput<T>> {
    hooks.validate(config.num_layers, config.num_heads)?;
    if hooks.needs_cache() && cache.is_none() {
        return Err(Error::invalid("freeze-from-cache hook requires a cache source"));
    }
    let b = batch.len();
    let d = config.d_model;
    let dh = config.d_head();

    // --- embeddings -------------------------------------------------------
    let ex = tape.leaf(batch.exemplars.clone());
    let w_in = pv.get("w_in");
    let ex_proj = tape.matmul(ex, w_in)?; // (3B, d)
    let label_emb = pv.get("label_emb");
    let lab = tape.gather_rows(label_emb, Arc::new(batch.label_ids.clone()))?; // (2B, d)
    let mut from_a = Vec::with_capacity(b * SEQ_LEN);
    for _ in 0..b {
        from_a.extend_from_slice(&[true, false, true, false, true]);
    }
    let tokens = tape.interleave_rows(ex_proj, lab, Arc::new(from_a))?; // (5B, d)
    let pos_ids: Vec<usize> = (0..b * SEQ_LEN).map(|i| i % SEQ_LEN).collect();
    let pos_emb = pv.get("pos_emb");
    let pos = tape.gather_rows(pos_emb, Arc::new(pos_ids))?;
    let embed = tape.add(tokens, pos)?; // (5B, d)

    // --- attention layers -------------------------------------------------
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut layer_out_sums: Vec<Var> = Vec::with_capacity(config.num_layers);
    let mut head_traces: Vec<Vec<HeadTrace<T>>> = Vec::with_capacity(config.num_layers);

    for layer in 0..config.num_layers {
        let mut input = embed;
        for prev in 0..layer {
            if !hooks.composition_blocked(prev, layer) {
                input = tape.add(input, layer_out_sums[prev])?;
            }
        }

        let mut layer_mask = Mask::causal(SEQ_LEN);
        for edge in hooks.blocked_edges(layer) {
            match edge {
                EdgeClass::PrevToken => {
                    for p in 1..SEQ_LEN {
                        layer_mask.block(p, p - 1);
                    }
                }
            }
        }

        let mut traces = Vec::with_capacity(config.num_heads);
        let mut out_sum: Option<Var> = None;
        for head in 0..config.num_heads {
            let hp = |w: &str| pv.get(&format!("l{layer}.h{head}.{w}"));

            let mut q = tape.matmul(input, hp("wq"))?;
            q = tape.reshape(q, &[b, SEQ_LEN, dh])?;
            let mut k = tape.matmul(input, hp("wk"))?;
            k = tape.reshape(k, &[b, SEQ_LEN, dh])?;
            let mut v = tape.matmul(input, hp("wv"))?;
            v = tape.reshape(v, &[b, SEQ_LEN, dh])?;

            if hooks.frozen(layer, CacheComponent::Queries) {
                q = tape.leaf(cached(cache, layer, head, |ht| ht.q.clone(), tape_shape(tape, q))?);
            }
            if hooks.frozen(layer, CacheComponent::Keys) {
                k = tape.leaf(cached(cache, layer, head, |ht| ht.k.clone(), tape_shape(tape, k))?);
            }
            if hooks.frozen(layer, CacheComponent::Values) {
                v = tape.leaf(cached(cache, layer, head, |ht| ht.v.clone(), tape_shape(tape, v))?);
            }

            let mut scores = tape.bmm_nt(q, k)?; // (B, 5, 5)
            scores = tape.scale(scores, scale)?;

            let mut mask = layer_mask.clone();
            if let Some((t, restrict)) = hooks.temperature_for(layer, head) {
                scores = tape.scale(scores, T::from_f64(1.0 / t))?;
                if restrict {
                    mask.restrict_row(QUERY_POS, &LABEL_POSITIONS);
                }
            }
            let mut pattern = tape.masked_softmax(scores, Arc::new(mask))?;

            if hooks.frozen(layer, CacheComponent::Patterns) {
                pattern = tape.leaf(cached(
                    cache,
                    layer,
                    head,
                    |ht| ht.pattern.clone(),
                    tape_shape(tape, pattern),
                )?);
            }
            if let Some(rows) = hooks.clamp_for(layer, head) {
                let mut data = Vec::with_capacity(b * SEQ_LEN * SEQ_LEN);
                for _ in 0..b {
                    for row in rows.iter() {
                        data.extend(row.iter().map(|&x| T::from_f64(x)));
                    }
                }
                pattern =
                    tape.leaf(Tensor::from_vec(&[b, SEQ_LEN, SEQ_LEN], data)?);
            }

            let ctx = tape.bmm_nn(pattern, v)?; // (B, 5, dh)
            let ctx2d = tape.reshape(ctx, &[b * SEQ_LEN, dh])?;
            let mut out = tape.matmul(ctx2d, hp("wo"))?; // (5B, d)

            if hooks.frozen(layer, CacheComponent::HeadOutputs) {
                out = tape.leaf(cached(cache, layer, head, |ht| ht.out.clone(), tape_shape(tape, out))?);
            }
            if hooks.zero_head_set(layer).contains(&head) {
                out = tape.scale(out, T::zero())?;
            }

            traces.push(HeadTrace {
                q: tape.value(q).clone(),
                k: tape.value(k).clone(),
                v: tape.value(v).clone(),
                pattern: tape.value(pattern).clone(),
                out: tape.value(out).clone(),
            });
            out_sum = Some(match out_sum {
                None => out,
                Some(acc) => tape.add(acc, out)?,
            });
        }
        layer_out_sums.push(out_sum.expect("at least one head"));
        head_traces.push(traces);
    }

    // --- readout ----------------------------------------------------------
    // canonical residual stream: embeddings plus every head contribution
    let mut residual_final = embed;
    for &s in &layer_out_sums {
        residual_final = tape.add(residual_final, s)?;
    }

    // hooked readout path
    let mut readout_terms: Vec<Var> = Vec::new();
    if !hooks.zero_direct_path() {
        readout_terms.push(embed);
    }
    for (layer, &s) in layer_out_sums.iter().enumerate() {
        if !hooks.zero_layer_readout(layer) {
            readout_terms.push(s);
        }
    }
    let readout_stream = match readout_terms.split_first() {
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = tape.add(acc, t)?;
            }
            acc
        }
        None => tape.leaf(Tensor::zeros(&[b * SEQ_LEN, d])),
    };

    let final_ids: Vec<usize> = (0..b).map(|i| i * SEQ_LEN + QUERY_POS).collect();
    let readout = tape.gather_rows(readout_stream, Arc::new(final_ids.clone()))?; // (B, d)
    let w_out = pv.get("w_out");
    let logits = tape.matmul(readout, w_out)?; // (B, C)

    let direct_rows: Vec<T> = {
        let e = tape.value(embed);
        let mut out = Vec::with_capacity(b * d);
        for &r in &final_ids {
            out.extend_from_slice(&e.data()[r * d..(r + 1) * d]);
        }
        out
    };

    let trace = ForwardTrace {
        embed: tape.value(embed).clone(),
        heads: head_traces,
        residual_final: tape.value(residual_final).clone(),
        direct_final: Tensor::from_vec(&[b, d], direct_rows)?,
        logits: tape.value(logits).clone(),
    };
    Ok(ForwardOutput { logits, trace })
}

fn tape_shape<T: Scalar>(tape: &Tape<T>, v: Var) -> Vec<usize> {
    tape.value(v).shape().to_vec()
}

fn cached<T: Scalar>(
    cache: Option<&ForwardTrace<T>>,
    layer: usize,
    head: usize,
    pick: impl Fn(&HeadTrace<T>) -> Tensor<T>,
    want: Vec<usize>,
) -> Result<Tensor<T>> {
    let c = cache.ok_or_else(|| Error::invalid("freeze-from-cache requires a cache"))?;
    let ht = c
        .heads
        .get(layer)
        .and_then(|hs| hs.get(head))
        .ok_or_else(|| Error::invalid(format!("cache missing layer {layer} head {head}")))?;
    let t = pick(ht);
    if t.shape() != want.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "freeze_from_cache",
            detail: format!("cache {:?} vs live {:?}", t.shape(), want),
        });
    }
    Ok(t)
}

/// Forward pass plus cross-entropy loss at the query position.
pub fn forward_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    config: &ModelConfig,
    batch: &Batch<T>,
    hooks: &HookSpec,
    cache: Option<&ForwardTrace<T>>,
    targets: &[usize],
) -> Result<(Var, ForwardOutput<T>)> {
    let out = forward(tape, pv, config, batch, hooks, cache)?;
    let loss = tape.cross_entropy(out.logits, Arc::new(targets.to_vec()))?;
    Ok((loss, out))
}

/// Standalone forward for evaluation and probing (fresh tape, no grads kept).
pub fn run_forward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    hooks: &HookSpec,
    cache: Option<&ForwardTrace<T>>,
) -> Result<ForwardTrace<T>> {
    let mut tape = Tape::new();
    let pv = insert_params(&mut tape, params);
    let out = forward(&mut tape, &pv, &params.config, batch, hooks, cache)?;
    Ok(out.trace)
}

/// Gradients of the mean query-position cross-entropy, keyed by name.
pub fn loss_and_grads<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    hooks: &HookSpec,
    targets: &[usize],
) -> Result<(f64, BTreeMap<String, Tensor<T>>, ForwardTrace<T>)> {
    let mut tape = Tape::new();
    let pv = insert_params(&mut tape, params);
    let (loss, out) = forward_loss(&mut tape, &pv, &params.config, batch, hooks, None, targets)?;
    let grads = tape.backward(loss)?;
    let mut by_name = BTreeMap::new();
    for (name, var) in pv.names.iter().zip(&pv.vars) {
        by_name.insert(name.clone(), grads.get(*var));
    }
    Ok((tape.value(loss).scalar_value().as_f64(), by_name, out.trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{assemble_batch, sample_sequence, BankConfig, ClassBank, EvalKind};
    use crate::rngutil::stream;

    fn tiny_setup() -> (ClassBank, ModelConfig) {
        let bank = ClassBank::build(BankConfig {
            num_classes: 16,
            exemplars_per_class: 3,
            input_dim: 8,
            noise: 0.1,
            seed: 5,
        })
        .unwrap();
        let config = ModelConfig {
            num_layers: 2,
            d_model: 16,
            num_heads: 4,
            label_vocab: 16,
            input_dim: 8,
            positional: Positional::Learned,
        };
        (bank, config)
    }

    fn tiny_batch(bank: &ClassBank, n: usize, seed: u64) -> Batch<f64> {
        let mut rng = stream(seed, "model-test");
        let seqs = (0..n)
            .map(|_| sample_sequence(EvalKind::Bursty, bank, &mut rng).unwrap())
            .collect();
        assemble_batch(bank, seqs).unwrap()
    }

    #[test]
    fn init_is_seed_deterministic() {
        let (_, config) = tiny_setup();
        let a = ModelParams::<f32>::init(&config, 3).unwrap();
        let b = ModelParams::<f32>::init(&config, 3).unwrap();
        let c = ModelParams::<f32>::init(&config, 4).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn param_count_matches_shape_table() {
        let config = ModelConfig::default();
        let params = ModelParams::<f32>::init(&config, 0).unwrap();
        let d = config.d_model;
        let dh = config.d_head();
        let expected = config.input_dim * d
            + config.label_vocab * d
            + SEQ_LEN * d
            + config.num_layers * config.num_heads * (3 * d * dh + dh * d)
            + d * config.label_vocab;
        assert_eq!(params.param_count(), expected);
        assert_eq!(expected, 1_675_584);
    }

    #[test]
    fn one_layer_has_no_second_layer_tensors() {
        let config = ModelConfig { num_layers: 1, ..ModelConfig::default() };
        let params = ModelParams::<f32>::init(&config, 0).unwrap();
        assert!(params.named().iter().all(|(n, _)| !n.starts_with("l1.")));
    }

    #[test]
    fn forward_is_causal_under_every_row() {
        let (bank, config) = tiny_setup();
        let params = ModelParams::<f64>::init(&config, 1).unwrap();
        let batch = tiny_batch(&bank, 4, 1);
        let trace = run_forward(&params, &batch, &HookSpec::none(), None).unwrap();
        for heads in &trace.heads {
            for ht in heads {
                let p = &ht.pattern;
                for b in 0..batch.len() {
                    for i in 0..SEQ_LEN {
                        let mut sum = 0.0;
                        for j in 0..SEQ_LEN {
                            let v = p.data()[(b * SEQ_LEN + i) * SEQ_LEN + j];
                            if j > i {
                                assert_eq!(v, 0.0, "causality violated at ({i},{j})");
                            }
                            sum += v;
                        }
                        assert!((sum - 1.0).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn trace_additivity_holds() {
        let (bank, config) = tiny_setup();
        let params = ModelParams::<f64>::init(&config, 2).unwrap();
        let batch = tiny_batch(&bank, 3, 2);
        let trace = run_forward(&params, &batch, &HookSpec::none(), None).unwrap();
        let mut acc = trace.embed.data().to_vec();
        for heads in &trace.heads {
            for ht in heads {
                for (a, &o) in acc.iter_mut().zip(ht.out.data()) {
                    *a += o;
                }
            }
        }
        let max_diff = acc
            .iter()
            .zip(trace.residual_final.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-5, "residual decomposition off by {max_diff}");
    }

    #[test]
    fn empty_hooks_match_no_hooks_bitwise() {
        let (bank, config) = tiny_setup();
        let params = ModelParams::<f64>::init(&config, 3).unwrap();
        let batch = tiny_batch(&bank, 4, 3);
        let a = run_forward(&params, &batch, &HookSpec::none(), None).unwrap();
        let b = run_forward(&params, &batch, &HookSpec::of(vec![]), None).unwrap();
        assert!(a.logits.bits_eq(&b.logits));
    }

    #[test]
    fn freeze_all_from_self_is_identity() {
        let (bank, config) = tiny_setup();
        let params = ModelParams::<f64>::init(&config, 4).unwrap();
        let batch = tiny_batch(&bank, 4, 4);
        let baseline = run_forward(&params, &batch, &HookSpec::none(), None).unwrap();
        let frozen = run_forward(
            &params,
            &batch,
            &HookSpec::freeze_all(config.num_layers),
            Some(&baseline),
        )
        .unwrap();
        assert!(baseline.logits.max_abs_diff(&frozen.logits) < 1e-6);
    }

    #[test]
    fn zero_everything_gives_zero_logits() {
        let (bank, config) = tiny_setup();
        let params = ModelParams::<f64>::init(&config, 5).unwrap();
        let batch = tiny_batch(&bank, 2, 5);
        let mut hooks = HookSpec::none();
        for layer in 0..config.num_layers {
            for h in HookSpec::zero_layer(layer, config.num_heads) {
                hooks.push(h);
            }
        }
        hooks.push(crate::hooks::Hook::ZeroDirectPath);
        let trace = run_forward(&params, &batch, &hooks, None).unwrap();
        assert!(trace.logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_cache_is_an_error() {
        let (bank, config) = tiny_setup();
        let params = ModelParams::<f64>::init(&config, 6).unwrap();
        let batch = tiny_batch(&bank, 2, 6);
        let hooks = HookSpec::of(vec![crate::hooks::Hook::FreezeFromCache {
            layer: 0,
            component: CacheComponent::Patterns,
        }]);
        assert!(run_forward(&params, &batch, &hooks, None).is_err());
    }

    #[test]
    fn cache_shape_mismatch_is_an_error() {
        let (bank, config) = tiny_setup();
        let params = ModelParams::<f64>::init(&config, 7).unwrap();
        let big = tiny_batch(&bank, 4, 7);
        let small = tiny_batch(&bank, 2, 8);
        let cache = run_forward(&params, &big, &HookSpec::none(), None).unwrap();
        let hooks = HookSpec::of(vec![crate::hooks::Hook::FreezeFromCache {
            layer: 0,
            component: CacheComponent::Patterns,
        }]);
        assert!(run_forward(&params, &small, &hooks, Some(&cache)).is_err());
    }

    #[test]
    fn permuting_label_table_permutes_logits() {
        let (bank, config) = tiny_setup();
        let params = ModelParams::<f64>::init(&config, 8).unwrap();
        let batch = tiny_batch(&bank, 3, 9);
        let base = run_forward(&params, &batch, &HookSpec::none(), None).unwrap();

        // permutation sigma over labels
        let c = config.label_vocab;
        let sigma: Vec<usize> = (0..c).map(|i| (i * 7 + 3) % c).collect(); // bijection since gcd(7,16)=1
        let mut inv = vec![0usize; c];
        for (i, &s) in sigma.iter().enumerate() {
            inv[s] = i;
        }

        // emb'[l] = emb[sigma(l)], wout'[:, l] = wout[:, sigma(l)]
        let mut permuted = params.clone();
        let d = config.d_model;
        let mut emb = vec![0.0f64; c * d];
        for l in 0..c {
            emb[l * d..(l + 1) * d]
                .copy_from_slice(&params.label_emb.data()[sigma[l] * d..(sigma[l] + 1) * d]);
        }
        permuted.label_emb = Tensor::from_vec(&[c, d], emb).unwrap();
        let mut wout = vec![0.0f64; d * c];
        for r in 0..d {
            for l in 0..c {
                wout[r * c + l] = params.w_out.data()[r * c + sigma[l]];
            }
        }
        permuted.w_out = Tensor::from_vec(&[d, c], wout).unwrap();

        // feed relabeled tokens: l -> inv[l]
        let mut relabeled_seqs = batch.seqs.clone();
        for s in relabeled_seqs.iter_mut() {
            s.context[0].2 = inv[s.context[0].2];
            s.context[1].2 = inv[s.context[1].2];
        }
        let relabeled = assemble_batch::<f64>(&bank, relabeled_seqs).unwrap();
        let got = run_forward(&permuted, &relabeled, &HookSpec::none(), None).unwrap();

        // logits'(relabeled)[:, j] == logits[:, sigma(j)]
        for b in 0..batch.len() {
            for j in 0..c {
                let lhs = got.logits.get2(b, j);
                let rhs = base.logits.get2(b, sigma[j]);
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }
}
