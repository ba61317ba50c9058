//! Synthetic few-shot episodes: a frozen class/exemplar bank plus samplers
//! for the training distributions and the behavioral evaluators.
//!
//! Every sequence is five tokens: exemplar, label, exemplar, label, query
//! exemplar (positions 0..4; the prediction is read at position 4). Exemplar
//! vectors are unit class prototypes plus frozen per-exemplar Gaussian noise,
//! regenerated deterministically from the bank seed.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rngutil::{mix3, rng_from};
use crate::tensor::{Scalar, Tensor};

pub type ClassId = usize;
pub type ExemplarId = usize;
pub type LabelId = usize;

pub const SEQ_LEN: usize = 5;
pub const EXEMPLAR_POSITIONS: [usize; 3] = [0, 2, 4];
pub const LABEL_POSITIONS: [usize; 2] = [1, 3];
pub const QUERY_POS: usize = 4;

/// Sequence distributions: training streams and the four evaluators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EvalKind {
    Bursty,
    MatchedBursty,
    IclOnly,
    CiwlOnly,
    EvalIcl,
    EvalIwl,
    EvalCiwl,
    EvalFlip,
}

impl EvalKind {
    pub const ALL: [EvalKind; 8] = [
        EvalKind::Bursty,
        EvalKind::MatchedBursty,
        EvalKind::IclOnly,
        EvalKind::CiwlOnly,
        EvalKind::EvalIcl,
        EvalKind::EvalIwl,
        EvalKind::EvalCiwl,
        EvalKind::EvalFlip,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EvalKind::Bursty => "bursty",
            EvalKind::MatchedBursty => "matched_bursty",
            EvalKind::IclOnly => "icl_only",
            EvalKind::CiwlOnly => "ciwl_only",
            EvalKind::EvalIcl => "eval_icl",
            EvalKind::EvalIwl => "eval_iwl",
            EvalKind::EvalCiwl => "eval_ciwl",
            EvalKind::EvalFlip => "eval_flip",
        }
    }

    /// Minimum number of distinct classes the sampler draws.
    pub fn min_classes(&self) -> usize {
        match self {
            EvalKind::CiwlOnly | EvalKind::EvalCiwl | EvalKind::EvalIwl => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for EvalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EvalKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown sequence kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankConfig {
    pub num_classes: usize,
    pub exemplars_per_class: usize,
    pub input_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            num_classes: 12800,
            exemplars_per_class: 20,
            input_dim: 64,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Frozen exemplar vectors plus the fixed class-to-label assignment.
pub struct ClassBank {
    pub config: BankConfig,
    /// `num_classes * exemplars_per_class * input_dim`, row-major.
    exemplars: Vec<f32>,
    labels: Vec<LabelId>,
}

const PROTO_TAG: u64 = 0x70726f746f; // "proto"
const NOISE_TAG: u64 = 0x6e6f697365; // "noise"

impl ClassBank {
    pub fn build(config: BankConfig) -> Result<Self> {
        if config.num_classes < 2 {
            return Err(Error::invalid("bank needs at least 2 classes"));
        }
        if config.exemplars_per_class < 1 {
            return Err(Error::invalid("bank needs at least 1 exemplar per class"));
        }
        let (c, e, d) = (config.num_classes, config.exemplars_per_class, config.input_dim);
        let mut exemplars = vec![0.0f32; c * e * d];
        for class in 0..c {
            let mut prng = rng_from(mix3(config.seed, PROTO_TAG, class as u64));
            let mut proto: Vec<f64> = (0..d).map(|_| prng.sample::<f64, _>(StandardNormal)).collect();
            let norm = proto.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in proto.iter_mut() {
                *x /= norm;
            }
            for ex in 0..e {
                let mut nrng = rng_from(mix3(config.seed, NOISE_TAG, (class * e + ex) as u64));
                let base = (class * e + ex) * d;
                for i in 0..d {
                    let noise: f64 = nrng.sample(StandardNormal);
                    exemplars[base + i] = (proto[i] + config.noise * noise) as f32;
                }
            }
        }
        let labels = (0..c).collect();
        Ok(ClassBank { config, exemplars, labels })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn label_vocab(&self) -> usize {
        self.config.num_classes
    }

    pub fn label_of(&self, class: ClassId) -> LabelId {
        self.labels[class]
    }

    pub fn exemplar(&self, class: ClassId, ex: ExemplarId) -> Result<&[f32]> {
        let (c, e, d) =
            (self.config.num_classes, self.config.exemplars_per_class, self.config.input_dim);
        if class >= c {
            return Err(Error::IndexOutOfRange { op: "exemplar", index: class, bound: c });
        }
        if ex >= e {
            return Err(Error::IndexOutOfRange { op: "exemplar", index: ex, bound: e });
        }
        let base = (class * e + ex) * d;
        Ok(&self.exemplars[base..base + d])
    }
}

/// One five-token episode with its answer keys.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub kind: EvalKind,
    /// Context pairs in position order: slot 0 -> positions 0/1, slot 1 -> 2/3.
    pub context: [(ClassId, ExemplarId, LabelId); 2],
    pub query: (ClassId, ExemplarId),
    pub answer_train: LabelId,
    pub answer_icl: Option<LabelId>,
    pub answer_ciwl: Option<LabelId>,
}

impl Sequence {
    pub fn context_labels(&self) -> [LabelId; 2] {
        [self.context[0].2, self.context[1].2]
    }

    /// Swap the two context pairs (used by probes to pin a label position).
    pub fn swapped(&self) -> Sequence {
        let mut s = self.clone();
        s.context.swap(0, 1);
        s
    }

    /// Context slot whose label matches `label`, if any.
    pub fn slot_with_label(&self, label: LabelId) -> Option<usize> {
        (0..2).find(|&s| self.context[s].2 == label)
    }

    /// Loss target used when training on this distribution.
    pub fn train_target(&self) -> LabelId {
        match self.kind {
            EvalKind::IclOnly | EvalKind::EvalIcl => self.answer_icl.expect("icl answer"),
            EvalKind::CiwlOnly | EvalKind::EvalCiwl => self.answer_ciwl.expect("ciwl answer"),
            _ => self.answer_train,
        }
    }
}

/// Draw `n` distinct values in [0, bound) with a fixed number of rng calls.
fn distinct(rng: &mut ChaCha8Rng, bound: usize, out: &mut [usize]) {
    debug_assert!(out.len() <= bound);
    for i in 0..out.len() {
        let mut v = rng.gen_range(0..bound - i);
        // shift past earlier picks, in ascending order
        let mut prev: Vec<usize> = out[..i].to_vec();
        prev.sort_unstable();
        for &p in &prev {
            if v >= p {
                v += 1;
            }
        }
        out[i] = v;
    }
}

pub fn sample_sequence(kind: EvalKind, bank: &ClassBank, rng: &mut ChaCha8Rng) -> Result<Sequence> {
    let c = bank.num_classes();
    if c < kind.min_classes() {
        return Err(Error::invalid(format!(
            "{kind} needs at least {} distinct classes, bank has {c}",
            kind.min_classes()
        )));
    }
    let e = bank.config.exemplars_per_class;
    let seq = match kind {
        EvalKind::Bursty | EvalKind::MatchedBursty => {
            let mut cls = [0usize; 2];
            distinct(rng, c, &mut cls);
            let ex0 = rng.gen_range(0..e);
            let ex1 = rng.gen_range(0..e);
            let qslot = rng.gen_range(0..2usize);
            let qclass = cls[qslot];
            let qex = rng.gen_range(0..e);
            let mut context = [
                (cls[0], ex0, bank.label_of(cls[0])),
                (cls[1], ex1, bank.label_of(cls[1])),
            ];
            if kind == EvalKind::MatchedBursty {
                context[qslot].1 = qex;
            }
            let ans = bank.label_of(qclass);
            Sequence {
                kind,
                context,
                query: (qclass, qex),
                answer_train: ans,
                answer_icl: Some(ans),
                answer_ciwl: Some(ans),
            }
        }
        EvalKind::IclOnly => {
            let mut cls = [0usize; 2];
            distinct(rng, c, &mut cls);
            let ex0 = rng.gen_range(0..e);
            let ex1 = rng.gen_range(0..e);
            let mut labs = [0usize; 2];
            distinct(rng, bank.label_vocab(), &mut labs);
            let qslot = rng.gen_range(0..2usize);
            let qex = rng.gen_range(0..e);
            Sequence {
                kind,
                context: [(cls[0], ex0, labs[0]), (cls[1], ex1, labs[1])],
                query: (cls[qslot], qex),
                answer_train: bank.label_of(cls[qslot]),
                answer_icl: Some(labs[qslot]),
                answer_ciwl: None,
            }
        }
        EvalKind::EvalIcl => {
            let mut cls = [0usize; 2];
            distinct(rng, c, &mut cls);
            let ex0 = rng.gen_range(0..e);
            let ex1 = rng.gen_range(0..e);
            let first: usize = rng.gen_range(0..2);
            let labs = [first, 1 - first];
            let qslot = rng.gen_range(0..2usize);
            let qex = rng.gen_range(0..e);
            Sequence {
                kind,
                context: [(cls[0], ex0, labs[0]), (cls[1], ex1, labs[1])],
                query: (cls[qslot], qex),
                answer_train: bank.label_of(cls[qslot]),
                answer_icl: Some(labs[qslot]),
                answer_ciwl: None,
            }
        }
        EvalKind::CiwlOnly | EvalKind::EvalCiwl => {
            let mut cls = [0usize; 3];
            distinct(rng, c, &mut cls);
            let (qclass, c0, c1) = (cls[0], cls[1], cls[2]);
            let ex0 = rng.gen_range(0..e);
            let ex1 = rng.gen_range(0..e);
            let qex = rng.gen_range(0..e);
            let replaced = rng.gen_range(0..2usize);
            let mut context = [
                (c0, ex0, bank.label_of(c0)),
                (c1, ex1, bank.label_of(c1)),
            ];
            context[replaced].2 = bank.label_of(qclass);
            Sequence {
                kind,
                context,
                query: (qclass, qex),
                answer_train: bank.label_of(qclass),
                answer_icl: None,
                answer_ciwl: Some(bank.label_of(qclass)),
            }
        }
        EvalKind::EvalIwl => {
            let mut cls = [0usize; 3];
            distinct(rng, c, &mut cls);
            let (qclass, c0, c1) = (cls[0], cls[1], cls[2]);
            let ex0 = rng.gen_range(0..e);
            let ex1 = rng.gen_range(0..e);
            let qex = rng.gen_range(0..e);
            Sequence {
                kind,
                context: [
                    (c0, ex0, bank.label_of(c0)),
                    (c1, ex1, bank.label_of(c1)),
                ],
                query: (qclass, qex),
                answer_train: bank.label_of(qclass),
                answer_icl: None,
                answer_ciwl: None,
            }
        }
        EvalKind::EvalFlip => {
            let mut cls = [0usize; 2];
            distinct(rng, c, &mut cls);
            let ex0 = rng.gen_range(0..e);
            let ex1 = rng.gen_range(0..e);
            let qslot = rng.gen_range(0..2usize);
            let qex = rng.gen_range(0..e);
            // labels swapped relative to training
            let context = [
                (cls[0], ex0, bank.label_of(cls[1])),
                (cls[1], ex1, bank.label_of(cls[0])),
            ];
            Sequence {
                kind,
                context,
                query: (cls[qslot], qex),
                answer_train: bank.label_of(cls[qslot]),
                answer_icl: Some(bank.label_of(cls[1 - qslot])),
                answer_ciwl: Some(bank.label_of(cls[qslot])),
            }
        }
    };
    Ok(seq)
}

/// A model-ready batch: exemplar vectors for positions 0/2/4 and label token
/// ids for positions 1/3, sequence-major.
pub struct Batch<T> {
    pub seqs: Vec<Sequence>,
    /// `(3B, d_in)` rows ordered [seq0 ctx0, seq0 ctx1, seq0 query, seq1 ...].
    pub exemplars: Tensor<T>,
    /// `2B` ids ordered [seq0 l1, seq0 l2, seq1 ...].
    pub label_ids: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }
}

/// Per-position input vectors for one sequence (labels embed downstream).
pub fn embed_tokens(bank: &ClassBank, seq: &Sequence) -> Result<[Vec<f32>; 3]> {
    Ok([
        bank.exemplar(seq.context[0].0, seq.context[0].1)?.to_vec(),
        bank.exemplar(seq.context[1].0, seq.context[1].1)?.to_vec(),
        bank.exemplar(seq.query.0, seq.query.1)?.to_vec(),
    ])
}

pub fn assemble_batch<T: Scalar>(bank: &ClassBank, seqs: Vec<Sequence>) -> Result<Batch<T>> {
    let d = bank.config.input_dim;
    let mut ex = Vec::with_capacity(seqs.len() * 3 * d);
    let mut label_ids = Vec::with_capacity(seqs.len() * 2);
    for seq in &seqs {
        for &(class, exid, _) in &seq.context {
            ex.extend(bank.exemplar(class, exid)?.iter().map(|&v| T::from_f64(v as f64)));
        }
        ex.extend(bank.exemplar(seq.query.0, seq.query.1)?.iter().map(|&v| T::from_f64(v as f64)));
        label_ids.push(seq.context[0].2);
        label_ids.push(seq.context[1].2);
    }
    let exemplars = Tensor::from_vec(&[seqs.len() * 3, d], ex)?;
    exemplars.ensure_finite("assemble_batch")?;
    Ok(Batch { seqs, exemplars, label_ids })
}

pub fn sample_batch<T: Scalar>(
    kind: EvalKind,
    bank: &ClassBank,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch<T>> {
    let seqs: Result<Vec<_>> = (0..n).map(|_| sample_sequence(kind, bank, rng)).collect();
    assemble_batch(bank, seqs?)
}

/// CSV export of sampled sequences for eyeballing distributions.
pub fn write_sequences_csv(path: &std::path::Path, seqs: &[Sequence]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "kind,ctx0_class,ctx0_ex,ctx0_label,ctx1_class,ctx1_ex,ctx1_label,query_class,query_ex,answer_train,answer_icl,answer_ciwl"
    )?;
    for s in seqs {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.kind,
            s.context[0].0,
            s.context[0].1,
            s.context[0].2,
            s.context[1].0,
            s.context[1].1,
            s.context[1].2,
            s.query.0,
            s.query.1,
            s.answer_train,
            s.answer_icl.map(|v| v.to_string()).unwrap_or_default(),
            s.answer_ciwl.map(|v| v.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngutil::stream;

    fn small_bank(c: usize, e: usize, noise: f64, seed: u64) -> ClassBank {
        ClassBank::build(BankConfig {
            num_classes: c,
            exemplars_per_class: e,
            input_dim: 16,
            noise,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn zero_noise_collapses_exemplars_to_prototype() {
        let bank = small_bank(4, 3, 0.0, 11);
        for c in 0..4 {
            let first = bank.exemplar(c, 0).unwrap().to_vec();
            let norm: f32 = first.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-5, "prototype norm {norm}");
            for e in 1..3 {
                assert_eq!(bank.exemplar(c, e).unwrap(), &first[..]);
            }
        }
    }

    #[test]
    fn bank_is_seed_deterministic() {
        let a = small_bank(5, 2, 0.1, 3);
        let b = small_bank(5, 2, 0.1, 3);
        let c = small_bank(5, 2, 0.1, 4);
        assert_eq!(a.exemplars, b.exemplars);
        assert_ne!(a.exemplars, c.exemplars);
    }

    #[test]
    fn bank_rejects_degenerate_sizes() {
        assert!(ClassBank::build(BankConfig { num_classes: 1, ..Default::default() }).is_err());
        assert!(ClassBank::build(BankConfig {
            exemplars_per_class: 0,
            num_classes: 4,
            input_dim: 8,
            noise: 0.1,
            seed: 0
        })
        .is_err());
    }

    #[test]
    fn bursty_query_always_in_context() {
        let bank = small_bank(50, 5, 0.1, 7);
        let mut rng = stream(1, "test");
        for _ in 0..500 {
            let s = sample_sequence(EvalKind::Bursty, &bank, &mut rng).unwrap();
            let classes = [s.context[0].0, s.context[1].0];
            assert!(classes.contains(&s.query.0));
            assert_ne!(classes[0], classes[1]);
            assert_eq!(s.answer_train, bank.label_of(s.query.0));
        }
    }

    #[test]
    fn matched_bursty_copies_query_exemplar() {
        let bank = small_bank(50, 5, 0.1, 7);
        let mut rng = stream(2, "test");
        for _ in 0..500 {
            let s = sample_sequence(EvalKind::MatchedBursty, &bank, &mut rng).unwrap();
            let slot = (0..2).find(|&i| s.context[i].0 == s.query.0).unwrap();
            assert_eq!(s.context[slot].1, s.query.1);
            let vecs = embed_tokens(&bank, &s).unwrap();
            assert_eq!(vecs[slot], vecs[2], "matched exemplar must be bit-identical");
        }
    }

    #[test]
    fn flip_answers_always_disagree() {
        let bank = small_bank(30, 4, 0.1, 9);
        let mut rng = stream(3, "test");
        for _ in 0..500 {
            let s = sample_sequence(EvalKind::EvalFlip, &bank, &mut rng).unwrap();
            assert_ne!(s.answer_icl.unwrap(), s.answer_ciwl.unwrap());
            // flipped: the query's in-context label is the other class's label
            let qslot = (0..2).find(|&i| s.context[i].0 == s.query.0).unwrap();
            assert_eq!(s.context[qslot].2, bank.label_of(s.context[1 - qslot].0));
        }
    }

    #[test]
    fn ciwl_places_trained_label_once_without_query_class() {
        let bank = small_bank(30, 4, 0.1, 13);
        let mut rng = stream(4, "test");
        for _ in 0..500 {
            let s = sample_sequence(EvalKind::EvalCiwl, &bank, &mut rng).unwrap();
            assert_ne!(s.context[0].0, s.query.0);
            assert_ne!(s.context[1].0, s.query.0);
            let hits = s
                .context_labels()
                .iter()
                .filter(|&&l| l == s.answer_ciwl.unwrap())
                .count();
            assert_eq!(hits, 1);
        }
    }

    #[test]
    fn iwl_never_leaks_query_label_or_class() {
        let bank = small_bank(30, 4, 0.1, 15);
        let mut rng = stream(5, "test");
        for _ in 0..500 {
            let s = sample_sequence(EvalKind::EvalIwl, &bank, &mut rng).unwrap();
            assert_ne!(s.context[0].0, s.query.0);
            assert_ne!(s.context[1].0, s.query.0);
            assert!(!s.context_labels().contains(&s.answer_train));
        }
    }

    #[test]
    fn eval_icl_uses_binary_labels() {
        let bank = small_bank(30, 4, 0.1, 17);
        let mut rng = stream(6, "test");
        for _ in 0..500 {
            let s = sample_sequence(EvalKind::EvalIcl, &bank, &mut rng).unwrap();
            let mut labels = s.context_labels();
            labels.sort_unstable();
            assert_eq!(labels, [0, 1]);
            assert!(s.answer_icl.unwrap() <= 1);
        }
    }

    #[test]
    fn sampling_needs_enough_classes() {
        let bank = small_bank(2, 4, 0.1, 21);
        let mut rng = stream(7, "test");
        assert!(sample_sequence(EvalKind::EvalCiwl, &bank, &mut rng).is_err());
        assert!(sample_sequence(EvalKind::Bursty, &bank, &mut rng).is_ok());
    }

    #[test]
    fn sampling_is_reproducible() {
        let bank = small_bank(30, 4, 0.1, 23);
        let mut r1 = stream(99, "data");
        let mut r2 = stream(99, "data");
        for _ in 0..50 {
            let a = sample_sequence(EvalKind::Bursty, &bank, &mut r1).unwrap();
            let b = sample_sequence(EvalKind::Bursty, &bank, &mut r2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn icl_only_labels_carry_no_weight_signal() {
        // Over many sequences, class/label coincidence stays at chance.
        let c = 100;
        let bank = small_bank(c, 4, 0.1, 29);
        let mut rng = stream(8, "test");
        let n = 10_000;
        let mut matches = 0usize;
        let mut slots = 0usize;
        for _ in 0..n {
            let s = sample_sequence(EvalKind::IclOnly, &bank, &mut rng).unwrap();
            for slot in 0..2 {
                slots += 1;
                if s.context[slot].2 == bank.label_of(s.context[slot].0) {
                    matches += 1;
                }
            }
        }
        let expected = slots as f64 / c as f64;
        let sd = (slots as f64 * (1.0 / c as f64) * (1.0 - 1.0 / c as f64)).sqrt();
        assert!(
            (matches as f64 - expected).abs() < 4.0 * sd,
            "matches {matches} vs expected {expected} +- {sd}"
        );
    }
}
