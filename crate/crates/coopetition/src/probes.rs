//! Mechanistic measurement toolkit: attention profiles, induction strength,
//! clamped-attention causal sweeps, composition ablations, direct-path
//! ablations, temperature experiments, and per-sequence dispersion probes.
//!
//! Probes are pure reads: they take parameters by shared reference and report
//! means together with the sample size that produced them. "Correct label
//! position" is always resolved from the sequence answer keys, never from
//! model output.

use std::io::Write;
use std::path::Path;

use crate::data::{
    assemble_batch, sample_sequence, Batch, ClassBank, EvalKind, Sequence, LABEL_POSITIONS,
    QUERY_POS, SEQ_LEN,
};
use crate::error::{Error, Result};
use crate::hooks::{clamp_rows_for_labels, CacheComponent, Hook, HookSpec};
use crate::metrics::{in_context_accuracy, score_target};
use crate::model::{run_forward, ForwardTrace, ModelParams};
use crate::rngutil::stream;
use crate::tensor::Scalar;

const CHUNK: usize = 250;

#[derive(Clone, Debug)]
pub struct ProbeRow {
    pub scope: String,
    pub key: String,
    pub value: f64,
}

/// Uniform probe output: provenance plus (scope, key, value) rows.
#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub probe: String,
    pub checkpoint: String,
    pub eval_kind: String,
    pub n: usize,
    pub seed: u64,
    pub rows: Vec<ProbeRow>,
}

impl ProbeReport {
    fn new(probe: &str, checkpoint: &str, eval_kind: EvalKind, n: usize, seed: u64) -> Self {
        ProbeReport {
            probe: probe.to_string(),
            checkpoint: checkpoint.to_string(),
            eval_kind: eval_kind.name().to_string(),
            n,
            seed,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, scope: impl Into<String>, key: impl Into<String>, value: f64) {
        self.rows.push(ProbeRow { scope: scope.into(), key: key.into(), value });
    }

    pub fn get(&self, scope: &str, key: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scope == scope && r.key == key)
            .map(|r| r.value)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "probe,checkpoint,eval_kind,n,seed,scope,key,value")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                self.probe, self.checkpoint, self.eval_kind, self.n, self.seed, r.scope, r.key, r.value
            )?;
        }
        Ok(())
    }
}

fn sample_eval_seqs(bank: &ClassBank, kind: EvalKind, n: usize, seed: u64) -> Result<Vec<Sequence>> {
    let mut rng = stream(seed, kind.name());
    (0..n).map(|_| sample_sequence(kind, bank, &mut rng)).collect()
}

/// Position (1 or 3) of the context label matching the score target, plus the
/// other label position.
fn label_positions_for(seq: &Sequence, target: usize) -> Result<(usize, usize)> {
    let slot = seq
        .slot_with_label(target)
        .ok_or_else(|| Error::invalid("target label not present in context"))?;
    Ok((LABEL_POSITIONS[slot], LABEL_POSITIONS[1 - slot]))
}

/// Force the score target's label into the requested context slot.
fn force_label_slot(seqs: Vec<Sequence>, kind: EvalKind, slot: usize) -> Vec<Sequence> {
    seqs.into_iter()
        .map(|s| {
            let target = score_target(kind, &s);
            match s.slot_with_label(target) {
                Some(cur) if cur != slot => s.swapped(),
                _ => s,
            }
        })
        .collect()
}

fn chunked_forward<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    seqs: &[Sequence],
    hooks: &HookSpec,
    mut each: impl FnMut(&Batch<T>, &ForwardTrace<T>) -> Result<()>,
) -> Result<()> {
    for chunk in seqs.chunks(CHUNK) {
        let batch = assemble_batch::<T>(bank, chunk.to_vec())?;
        let trace = run_forward(params, &batch, hooks, None)?;
        each(&batch, &trace)?;
    }
    Ok(())
}

/// Two-pass protocol: pass 1 unhooked to build the cache, pass 2 with hooks
/// restoring cached quantities.
fn chunked_two_pass<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    seqs: &[Sequence],
    pass2_hooks: &HookSpec,
    mut each: impl FnMut(&Batch<T>, &ForwardTrace<T>) -> Result<()>,
) -> Result<()> {
    for chunk in seqs.chunks(CHUNK) {
        let batch = assemble_batch::<T>(bank, chunk.to_vec())?;
        let cache = run_forward(params, &batch, &HookSpec::none(), None)?;
        let trace = run_forward(params, &batch, pass2_hooks, Some(&cache))?;
        each(&batch, &trace)?;
    }
    Ok(())
}

fn ciwl_accuracy_of<T: Scalar>(batch: &Batch<T>, trace: &ForwardTrace<T>) -> Result<f64> {
    let items: Vec<([usize; 2], usize)> = batch
        .seqs
        .iter()
        .map(|s| (s.context_labels(), score_target(s.kind, s)))
        .collect();
    in_context_accuracy(&trace.logits, &items)
}

/// Attention delta toward the correct label: row weight at the correct label
/// position minus weight at the incorrect one.
pub fn attention_delta(row: &[f64; SEQ_LEN], correct: usize, incorrect: usize) -> f64 {
    row[correct] - row[incorrect]
}

/// Query-row attention of one head for one batch element.
fn query_attention<T: Scalar>(trace: &ForwardTrace<T>, layer: usize, head: usize, b: usize) -> [f64; SEQ_LEN] {
    let p = &trace.heads[layer][head].pattern;
    let base = (b * SEQ_LEN + QUERY_POS) * SEQ_LEN;
    let mut out = [0.0; SEQ_LEN];
    for (j, o) in out.iter_mut().enumerate() {
        *o = p.data()[base + j].as_f64();
    }
    out
}

// ---------------------------------------------------------------------------
// attention_profile
// ---------------------------------------------------------------------------

/// Mean attention from the query position to each position, per head of one
/// layer, plus the correct-minus-incorrect label delta. `label_slot` forces
/// the correct label into context slot 0 (position 1) or 1 (position 3).
pub fn attention_profile<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    kind: EvalKind,
    layer: usize,
    n: usize,
    seed: u64,
    label_slot: Option<usize>,
    checkpoint: &str,
) -> Result<ProbeReport> {
    if layer >= params.config.num_layers {
        return Err(Error::invalid(format!("layer {layer} out of range")));
    }
    let mut seqs = sample_eval_seqs(bank, kind, n, seed)?;
    if let Some(slot) = label_slot {
        if slot > 1 {
            return Err(Error::invalid("label slot must be 0 or 1"));
        }
        seqs = force_label_slot(seqs, kind, slot);
    }
    let heads = params.config.num_heads;
    let mut sums = vec![[0.0f64; SEQ_LEN]; heads];
    let mut delta_sums = vec![0.0f64; heads];
    let mut count = 0usize;
    chunked_forward(params, bank, &seqs, &HookSpec::none(), |batch, trace| {
        for (b, seq) in batch.seqs.iter().enumerate() {
            let target = score_target(kind, seq);
            let (correct, incorrect) = label_positions_for(seq, target)?;
            for (h, sum) in sums.iter_mut().enumerate() {
                let row = query_attention(trace, layer, h, b);
                for (s, v) in sum.iter_mut().zip(row.iter()) {
                    *s += v;
                }
                delta_sums[h] += attention_delta(&row, correct, incorrect);
            }
        }
        count += batch.len();
        Ok(())
    })?;
    let mut report = ProbeReport::new("attention_profile", checkpoint, kind, count, seed);
    for h in 0..heads {
        let scope = format!("l{layer}.h{h}");
        for p in 0..SEQ_LEN {
            report.push(&scope, format!("mean_attn_pos{p}"), sums[h][p] / count as f64);
        }
        report.push(&scope, "delta", delta_sums[h] / count as f64);
    }
    let agg: f64 = delta_sums.iter().sum::<f64>() / (heads * count) as f64;
    report.push("aggregate", "mean_delta", agg);
    Ok(report)
}

// ---------------------------------------------------------------------------
// induction_strength
// ---------------------------------------------------------------------------

/// Per-head attention delta (toward the in-context-correct label vs the other
/// label) for the last layer, over flipped-label sequences. Range [-1, 1].
pub fn induction_strength<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    n: usize,
    seed: u64,
    checkpoint: &str,
) -> Result<ProbeReport> {
    if params.config.num_layers < 2 {
        return Err(Error::invalid("induction strength needs a 2-layer model"));
    }
    let layer = params.config.num_layers - 1;
    let seqs = sample_eval_seqs(bank, EvalKind::EvalFlip, n, seed)?;
    let heads = params.config.num_heads;
    let mut delta_sums = vec![0.0f64; heads];
    let mut count = 0usize;
    chunked_forward(params, bank, &seqs, &HookSpec::none(), |batch, trace| {
        for (b, seq) in batch.seqs.iter().enumerate() {
            let icl = seq.answer_icl.expect("flip has icl answer");
            let (correct, incorrect) = label_positions_for(seq, icl)?;
            for (h, d) in delta_sums.iter_mut().enumerate() {
                let row = query_attention(trace, layer, h, b);
                *d += attention_delta(&row, correct, incorrect);
            }
        }
        count += batch.len();
        Ok(())
    })?;
    let mut report = ProbeReport::new("induction_strength", checkpoint, EvalKind::EvalFlip, count, seed);
    for h in 0..heads {
        report.push(format!("l{layer}.h{h}"), "induction_strength", delta_sums[h] / count as f64);
    }
    report.push(
        "aggregate",
        "mean_induction_strength",
        delta_sums.iter().sum::<f64>() / (heads * count) as f64,
    );
    Ok(report)
}

// ---------------------------------------------------------------------------
// clamp_sweep
// ---------------------------------------------------------------------------

/// Keep a single last-layer head active, clamp its query-row attention to put
/// weight `w` on the correct label and `1-w` on the incorrect label, and
/// measure restricted accuracy across `w_grid`. Each grid point averages the
/// two label placements (correct label at position 1 and at position 3).
pub fn clamp_sweep<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    head: usize,
    w_grid: &[f64],
    n: usize,
    seed: u64,
    checkpoint: &str,
) -> Result<ProbeReport> {
    if params.config.num_layers < 2 {
        return Err(Error::invalid("clamp sweep needs a 2-layer model"));
    }
    let layer = params.config.num_layers - 1;
    let heads = params.config.num_heads;
    if head >= heads {
        return Err(Error::invalid(format!("head {head} out of range")));
    }
    let base_seqs = sample_eval_seqs(bank, EvalKind::EvalCiwl, n, seed)?;
    let mut report = ProbeReport::new("clamp_sweep", checkpoint, EvalKind::EvalCiwl, n, seed);
    let mut accs = Vec::with_capacity(w_grid.len());
    for &w in w_grid {
        let mut acc_sum = 0.0f64;
        for slot in 0..2usize {
            let seqs = force_label_slot(base_seqs.clone(), EvalKind::EvalCiwl, slot);
            let correct_pos = LABEL_POSITIONS[slot];
            let incorrect_pos = LABEL_POSITIONS[1 - slot];
            let rows = clamp_rows_for_labels(correct_pos, incorrect_pos, w)?;
            let mut hooks = HookSpec::none();
            for h in 0..heads {
                if h != head {
                    hooks.push(Hook::ZeroHead { layer, head: h });
                }
            }
            hooks.push(Hook::ClampPattern { layer, head, rows });
            let mut hits = 0.0f64;
            let mut total = 0usize;
            chunked_forward(params, bank, &seqs, &hooks, |batch, trace| {
                hits += ciwl_accuracy_of(batch, trace)? * batch.len() as f64;
                total += batch.len();
                Ok(())
            })?;
            acc_sum += hits / total as f64;
        }
        let acc = acc_sum / 2.0;
        report.push("sweep", format!("{w}"), acc);
        accs.push(acc);
    }
    report.push("aggregate", "spearman_w_accuracy", spearman(w_grid, &accs));
    Ok(report)
}

// ---------------------------------------------------------------------------
// composition ablation
// ---------------------------------------------------------------------------

fn validate_preserve(preserve: &[CacheComponent]) -> Result<()> {
    for c in preserve {
        if *c == CacheComponent::HeadOutputs {
            return Err(Error::invalid(
                "preserve set may contain only patterns, keys, queries, values",
            ));
        }
    }
    Ok(())
}

/// Two-pass protocol: pass 1 caches last-layer quantities; pass 2 removes
/// first-layer head outputs from the last layer's input while restoring the
/// cached members of `preserve`. The first layer's direct contribution to the
/// readout is untouched, so a full preserve set reproduces baseline logits.
pub fn composition_ablation<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    n: usize,
    seed: u64,
    preserve: &[CacheComponent],
) -> Result<f64> {
    if params.config.num_layers < 2 {
        return Err(Error::invalid("composition ablation needs a 2-layer model"));
    }
    validate_preserve(preserve)?;
    let seqs = sample_eval_seqs(bank, EvalKind::EvalCiwl, n, seed)?;
    let mut hooks = HookSpec::none();
    hooks.push(Hook::BlockComposition { src_layer: 0, dst_layer: 1 });
    for &component in preserve {
        hooks.push(Hook::FreezeFromCache { layer: 1, component });
    }
    let mut hits = 0.0f64;
    let mut total = 0usize;
    chunked_two_pass(params, bank, &seqs, &hooks, |batch, trace| {
        hits += ciwl_accuracy_of(batch, trace)? * batch.len() as f64;
        total += batch.len();
        Ok(())
    })?;
    Ok(hits / total as f64)
}

/// Zero the first layer's contribution to the final readout only (its inputs
/// to the last layer stay intact); single pass.
pub fn l1_output_ablation<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if params.config.num_layers < 2 {
        return Err(Error::invalid("output ablation needs a 2-layer model"));
    }
    let seqs = sample_eval_seqs(bank, EvalKind::EvalCiwl, n, seed)?;
    let hooks = HookSpec::of(vec![Hook::ZeroLayerReadout { layer: 0 }]);
    let mut hits = 0.0f64;
    let mut total = 0usize;
    chunked_forward(params, bank, &seqs, &hooks, |batch, trace| {
        hits += ciwl_accuracy_of(batch, trace)? * batch.len() as f64;
        total += batch.len();
        Ok(())
    })?;
    Ok(hits / total as f64)
}

/// The full composition table: baseline, preserve-all, leave-one-out for
/// values/keys/queries, and the first-layer output-only ablation.
pub fn composition_report<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    n: usize,
    seed: u64,
    checkpoint: &str,
) -> Result<ProbeReport> {
    let seqs = sample_eval_seqs(bank, EvalKind::EvalCiwl, n, seed)?;
    let mut baseline_hits = 0.0f64;
    let mut total = 0usize;
    chunked_forward(params, bank, &seqs, &HookSpec::none(), |batch, trace| {
        baseline_hits += ciwl_accuracy_of(batch, trace)? * batch.len() as f64;
        total += batch.len();
        Ok(())
    })?;
    let baseline = baseline_hits / total as f64;

    use CacheComponent::*;
    let all = [Patterns, Keys, Queries, Values];
    let but_values = [Patterns, Keys, Queries];
    // Keys/queries act only through the pattern, so their leave-one-out rows
    // drop Patterns from the preserve set and let the pattern recompute from
    // the live channel.
    let but_keys = [Queries, Values];
    let but_queries = [Keys, Values];

    let mut report = ProbeReport::new("composition", checkpoint, EvalKind::EvalCiwl, n, seed);
    report.push("aggregate", "baseline", baseline);
    report.push("aggregate", "preserve_all", composition_ablation(params, bank, n, seed, &all)?);
    report.push(
        "aggregate",
        "preserve_all_but_values",
        composition_ablation(params, bank, n, seed, &but_values)?,
    );
    report.push(
        "aggregate",
        "preserve_all_but_keys",
        composition_ablation(params, bank, n, seed, &but_keys)?,
    );
    report.push(
        "aggregate",
        "preserve_all_but_queries",
        composition_ablation(params, bank, n, seed, &but_queries)?,
    );
    report.push("aggregate", "l1_output_ablation", l1_output_ablation(params, bank, n, seed)?);
    Ok(report)
}

// ---------------------------------------------------------------------------
// direct-path ablation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirectPathMode {
    /// Heads carry the computation: embeddings removed from the readout via
    /// the pattern-and-value preserving two-pass ablation.
    HeadsOnly,
    /// Embedding-to-unembedding pathway only: every head zeroed.
    EmbedOnly,
}

pub fn direct_path_ablation<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    n: usize,
    seed: u64,
    mode: DirectPathMode,
    checkpoint: &str,
) -> Result<ProbeReport> {
    let seqs = sample_eval_seqs(bank, EvalKind::EvalCiwl, n, seed)?;
    let mut report = ProbeReport::new("direct_path", checkpoint, EvalKind::EvalCiwl, n, seed);
    let mut hits = 0.0f64;
    let mut total = 0usize;
    match mode {
        DirectPathMode::HeadsOnly => {
            let mut hooks = HookSpec::none();
            for layer in 0..params.config.num_layers {
                hooks.push(Hook::FreezeFromCache { layer, component: CacheComponent::Patterns });
                hooks.push(Hook::FreezeFromCache { layer, component: CacheComponent::Values });
            }
            hooks.push(Hook::ZeroDirectPath);
            chunked_two_pass(params, bank, &seqs, &hooks, |batch, trace| {
                hits += ciwl_accuracy_of(batch, trace)? * batch.len() as f64;
                total += batch.len();
                Ok(())
            })?;
            report.push("aggregate", "heads_only_accuracy", hits / total as f64);
        }
        DirectPathMode::EmbedOnly => {
            let mut hooks = HookSpec::none();
            for layer in 0..params.config.num_layers {
                for h in HookSpec::zero_layer(layer, params.config.num_heads) {
                    hooks.push(h);
                }
            }
            chunked_forward(params, bank, &seqs, &hooks, |batch, trace| {
                hits += ciwl_accuracy_of(batch, trace)? * batch.len() as f64;
                total += batch.len();
                Ok(())
            })?;
            report.push("aggregate", "embed_only_accuracy", hits / total as f64);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// temperature probe
// ---------------------------------------------------------------------------

/// Divide one last-layer head's attention scores by each temperature in the
/// grid (query-row support restricted to label positions) and measure
/// restricted accuracy, either with the head in isolation or with all heads
/// active.
pub fn temperature_probe<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    head: usize,
    t_grid: &[f64],
    all_heads_active: bool,
    n: usize,
    seed: u64,
    checkpoint: &str,
) -> Result<ProbeReport> {
    let layer = params.config.num_layers - 1;
    if t_grid.iter().any(|&t| t <= 0.0) {
        return Err(Error::invalid("temperatures must be positive"));
    }
    let seqs = sample_eval_seqs(bank, EvalKind::EvalCiwl, n, seed)?;
    let mut report = ProbeReport::new("temperature", checkpoint, EvalKind::EvalCiwl, n, seed);
    for &t in t_grid {
        let mut hooks = HookSpec::none();
        hooks.push(Hook::Temperature { layer, head, t, restrict_to_labels: true });
        if !all_heads_active {
            for h in 0..params.config.num_heads {
                if h != head {
                    hooks.push(Hook::ZeroHead { layer, head: h });
                }
            }
        }
        let mut hits = 0.0f64;
        let mut total = 0usize;
        chunked_forward(params, bank, &seqs, &hooks, |batch, trace| {
            hits += ciwl_accuracy_of(batch, trace)? * batch.len() as f64;
            total += batch.len();
            Ok(())
        })?;
        report.push("sweep", format!("{t}"), hits / total as f64);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// per-sequence scatter
// ---------------------------------------------------------------------------

/// Per-sequence (delta_head_i, delta_head_j) attention records for a pair of
/// last-layer heads, for dispersion analysis.
pub fn per_seq_attention_scatter<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    head_i: usize,
    head_j: usize,
    n: usize,
    seed: u64,
    checkpoint: &str,
) -> Result<ProbeReport> {
    let layer = params.config.num_layers - 1;
    let heads = params.config.num_heads;
    if head_i >= heads || head_j >= heads {
        return Err(Error::invalid("scatter heads out of range"));
    }
    let seqs = sample_eval_seqs(bank, EvalKind::EvalCiwl, n, seed)?;
    let mut di = Vec::with_capacity(n);
    let mut dj = Vec::with_capacity(n);
    chunked_forward(params, bank, &seqs, &HookSpec::none(), |batch, trace| {
        for (b, seq) in batch.seqs.iter().enumerate() {
            let target = score_target(seq.kind, seq);
            let (correct, incorrect) = label_positions_for(seq, target)?;
            let ri = query_attention(trace, layer, head_i, b);
            let rj = query_attention(trace, layer, head_j, b);
            di.push(attention_delta(&ri, correct, incorrect));
            dj.push(attention_delta(&rj, correct, incorrect));
        }
        Ok(())
    })?;
    let mut report = ProbeReport::new("scatter", checkpoint, EvalKind::EvalCiwl, n, seed);
    for (idx, (a, b)) in di.iter().zip(&dj).enumerate() {
        report.push(format!("seq:{idx}"), format!("delta_h{head_i}"), *a);
        report.push(format!("seq:{idx}"), format!("delta_h{head_j}"), *b);
    }
    report.push("aggregate", "spearman", spearman(&di, &dj));
    report.push("aggregate", "mean_delta_i", di.iter().sum::<f64>() / di.len() as f64);
    report.push("aggregate", "mean_delta_j", dj.iter().sum::<f64>() / dj.len() as f64);
    Ok(report)
}

// ---------------------------------------------------------------------------
// first-layer attention summary
// ---------------------------------------------------------------------------

/// Mean attention from the label positions to the previous token and to self,
/// per first-layer head, per sequence kind. Tracked over checkpoints this
/// exposes the previous-token-to-self transition.
pub fn l1_attention_summary<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    kinds: &[EvalKind],
    n: usize,
    seed: u64,
    checkpoint: &str,
) -> Result<ProbeReport> {
    let heads = params.config.num_heads;
    let mut report = ProbeReport::new(
        "l1_attention",
        checkpoint,
        *kinds.first().unwrap_or(&EvalKind::Bursty),
        n,
        seed,
    );
    for &kind in kinds {
        let seqs = sample_eval_seqs(bank, kind, n, seed)?;
        let mut prev_sums = vec![0.0f64; heads];
        let mut self_sums = vec![0.0f64; heads];
        let mut count = 0usize;
        chunked_forward(params, bank, &seqs, &HookSpec::none(), |batch, trace| {
            for b in 0..batch.len() {
                for h in 0..heads {
                    let p = &trace.heads[0][h].pattern;
                    for &label_pos in &LABEL_POSITIONS {
                        let base = (b * SEQ_LEN + label_pos) * SEQ_LEN;
                        prev_sums[h] += p.data()[base + label_pos - 1].as_f64();
                        self_sums[h] += p.data()[base + label_pos].as_f64();
                    }
                }
            }
            count += batch.len();
            Ok(())
        })?;
        let denom = (count * LABEL_POSITIONS.len()) as f64;
        for h in 0..heads {
            let scope = format!("l0.h{h}");
            report.push(&scope, format!("{}.prev_token", kind.name()), prev_sums[h] / denom);
            report.push(&scope, format!("{}.self", kind.name()), self_sums[h] / denom);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// rank statistics
// ---------------------------------------------------------------------------

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0; // average rank for ties
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return 0.0;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx.sqrt() * vy.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]) + 1.0).abs() < 1e-12);
        // monotone nonlinear is still 1
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 8.0, 27.0, 64.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }
}
