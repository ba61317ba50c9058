//! Training campaigns: Adam on a configured sequence stream with periodic
//! evaluator suites, geometric checkpointing, frozen partitions, transplanted
//! initialization, and deterministic resume.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, load_params, save_checkpoint};
use crate::data::{assemble_batch, sample_sequence, BankConfig, ClassBank, EvalKind};
use crate::error::{Error, Result};
use crate::expconfig::Doc;
use crate::hooks::{EdgeClass, Hook, HookSpec};
use crate::metrics::{
    in_context_accuracy, mean_cross_entropy, plain_accuracy, score_target, uses_in_context,
    MetricsLog,
};
use crate::model::{
    in_partition, is_lower, loss_and_grads, run_forward, ModelConfig, ModelParams, Partition,
    Positional,
};
use crate::optim::{AdamHyper, AdamState};
use crate::rngutil::stream;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrozenPart {
    None,
    Lower,
    Upper,
}

impl FrozenPart {
    pub fn name(&self) -> &'static str {
        match self {
            FrozenPart::None => "none",
            FrozenPart::Lower => "lower",
            FrozenPart::Upper => "upper",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FrozenPart::None),
            "lower" => Ok(FrozenPart::Lower),
            "upper" => Ok(FrozenPart::Upper),
            _ => Err(Error::Config(format!("unknown frozen partition `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitSource {
    Fresh,
    Checkpoint(PathBuf),
    /// Compose LOWER and UPPER from separate sources; `None` means fresh.
    Transplant { lower_from: Option<PathBuf>, upper_from: Option<PathBuf> },
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub bank_noise: f64,
    pub bank_exemplars: usize,
    pub bank_seed: u64,
    pub data: EvalKind,
    pub batch_size: usize,
    pub lr: f64,
    pub total_sequences: u64,
    pub eval_start: u64,
    pub eval_growth: f64,
    pub eval_n: usize,
    pub eval_seed: u64,
    pub ckpt_start: u64,
    pub ckpt_growth: f64,
    pub seed: u64,
    pub data_seed: u64,
    pub frozen: FrozenPart,
    pub init: InitSource,
    pub block_prev_token_layers: Vec<usize>,
    pub ablate_heads: Vec<(usize, usize)>,
    pub save_optimizer: bool,
    pub evaluators: Vec<EvalKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            bank_noise: 0.1,
            bank_exemplars: 20,
            bank_seed: 0,
            data: EvalKind::Bursty,
            batch_size: 32,
            lr: 1e-5,
            total_sequences: 24_000_000,
            eval_start: 64,
            eval_growth: 1.15,
            eval_n: 2000,
            eval_seed: 17,
            ckpt_start: 100,
            ckpt_growth: 1.5,
            seed: 0,
            data_seed: 0,
            frozen: FrozenPart::None,
            init: InitSource::Fresh,
            block_prev_token_layers: Vec::new(),
            ablate_heads: Vec::new(),
            save_optimizer: true,
            evaluators: vec![
                EvalKind::Bursty,
                EvalKind::EvalIcl,
                EvalKind::EvalIwl,
                EvalKind::EvalCiwl,
                EvalKind::EvalFlip,
            ],
        }
    }
}

impl TrainConfig {
    pub fn bank_config(&self) -> BankConfig {
        BankConfig {
            num_classes: self.model.label_vocab,
            exemplars_per_class: self.bank_exemplars,
            input_dim: self.model.input_dim,
            noise: self.bank_noise,
            seed: self.bank_seed,
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.total_sequences.div_ceil(self.batch_size as u64)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        match self.data {
            EvalKind::Bursty | EvalKind::MatchedBursty | EvalKind::IclOnly | EvalKind::CiwlOnly => {}
            k => return Err(Error::Config(format!("`{k}` is an evaluator, not a training stream"))),
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval_growth <= 1.0 || self.ckpt_growth <= 1.0 {
            return Err(Error::Config("schedule growth factors must exceed 1".into()));
        }
        Ok(())
    }

    /// Persistent hooks applied at every training and eval step of this run.
    pub fn persistent_hooks(&self) -> HookSpec {
        let mut hooks = HookSpec::none();
        for &layer in &self.block_prev_token_layers {
            hooks.push(Hook::BlockAttnEdge { layer, edge: EdgeClass::PrevToken });
        }
        for &(layer, head) in &self.ablate_heads {
            hooks.push(Hook::ZeroHead { layer, head });
        }
        hooks
    }

    pub fn to_doc(&self) -> Doc {
        let mut d = Doc::new();
        d.set("model.layers", self.model.num_layers);
        d.set("model.d_model", self.model.d_model);
        d.set("model.heads", self.model.num_heads);
        d.set("model.classes", self.model.label_vocab);
        d.set("model.input_dim", self.model.input_dim);
        d.set(
            "model.positional",
            match self.model.positional {
                Positional::Learned => "learned",
                Positional::Sinusoidal => "sinusoidal",
            },
        );
        d.set("bank.noise", self.bank_noise);
        d.set("bank.exemplars", self.bank_exemplars);
        d.set("bank.seed", self.bank_seed);
        d.set("train.data", self.data.name());
        d.set("train.batch_size", self.batch_size);
        d.set("train.lr", self.lr);
        d.set("train.total_sequences", self.total_sequences);
        d.set("train.eval_start", self.eval_start);
        d.set("train.eval_growth", self.eval_growth);
        d.set("train.eval_n", self.eval_n);
        d.set("train.eval_seed", self.eval_seed);
        d.set("train.ckpt_start", self.ckpt_start);
        d.set("train.ckpt_growth", self.ckpt_growth);
        d.set("train.seed", self.seed);
        d.set("train.data_seed", self.data_seed);
        d.set("train.frozen", self.frozen.name());
        match &self.init {
            InitSource::Fresh => d.set("train.init", "fresh"),
            InitSource::Checkpoint(p) => {
                d.set("train.init", "checkpoint");
                d.set("train.init_checkpoint", p.display());
            }
            InitSource::Transplant { lower_from, upper_from } => {
                d.set("train.init", "transplant");
                if let Some(p) = lower_from {
                    d.set("train.init_lower_from", p.display());
                }
                if let Some(p) = upper_from {
                    d.set("train.init_upper_from", p.display());
                }
            }
        }
        if !self.block_prev_token_layers.is_empty() {
            let s: Vec<String> =
                self.block_prev_token_layers.iter().map(|l| l.to_string()).collect();
            d.set("train.block_prev_token", s.join(","));
        }
        if !self.ablate_heads.is_empty() {
            let s: Vec<String> =
                self.ablate_heads.iter().map(|(l, h)| format!("l{l}.h{h}")).collect();
            d.set("train.ablate_heads", s.join(","));
        }
        d.set("train.save_optimizer", self.save_optimizer);
        let evals: Vec<&str> = self.evaluators.iter().map(|e| e.name()).collect();
        d.set("train.evaluators", evals.join(","));
        d
    }

    pub fn from_doc(doc: &Doc) -> Result<Self> {
        let defaults = TrainConfig::default();
        let model = model_config_from_doc(doc)?;
        let seed = doc.get_or("train.seed", defaults.seed)?;
        let init = match doc.get("train.init").unwrap_or("fresh") {
            "fresh" => InitSource::Fresh,
            "checkpoint" => {
                InitSource::Checkpoint(PathBuf::from(doc.require("train.init_checkpoint")?))
            }
            "transplant" => InitSource::Transplant {
                lower_from: doc.get("train.init_lower_from").map(PathBuf::from),
                upper_from: doc.get("train.init_upper_from").map(PathBuf::from),
            },
            other => return Err(Error::Config(format!("unknown init source `{other}`"))),
        };
        let mut block_prev = Vec::new();
        if let Some(s) = doc.get("train.block_prev_token") {
            for part in s.split(',').filter(|p| !p.trim().is_empty()) {
                block_prev.push(
                    part.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad layer `{part}`")))?,
                );
            }
        }
        let mut ablate = Vec::new();
        if let Some(s) = doc.get("train.ablate_heads") {
            for part in s.split(',').filter(|p| !p.trim().is_empty()) {
                ablate.push(parse_head_ref(part.trim())?);
            }
        }
        let evaluators = match doc.get("train.evaluators") {
            None => defaults.evaluators.clone(),
            Some(s) => s
                .split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| p.trim().parse())
                .collect::<Result<Vec<_>>>()?,
        };
        let config = TrainConfig {
            model,
            bank_noise: doc.get_or("bank.noise", defaults.bank_noise)?,
            bank_exemplars: doc.get_or("bank.exemplars", defaults.bank_exemplars)?,
            bank_seed: doc.get_or("bank.seed", defaults.bank_seed)?,
            data: doc.get("train.data").unwrap_or("bursty").parse()?,
            batch_size: doc.get_or("train.batch_size", defaults.batch_size)?,
            lr: doc.get_or("train.lr", defaults.lr)?,
            total_sequences: doc.get_or("train.total_sequences", defaults.total_sequences)?,
            eval_start: doc.get_or("train.eval_start", defaults.eval_start)?,
            eval_growth: doc.get_or("train.eval_growth", defaults.eval_growth)?,
            eval_n: doc.get_or("train.eval_n", defaults.eval_n)?,
            eval_seed: doc.get_or("train.eval_seed", defaults.eval_seed)?,
            ckpt_start: doc.get_or("train.ckpt_start", defaults.ckpt_start)?,
            ckpt_growth: doc.get_or("train.ckpt_growth", defaults.ckpt_growth)?,
            seed,
            data_seed: doc.get_or("train.data_seed", seed)?,
            frozen: FrozenPart::parse(doc.get("train.frozen").unwrap_or("none"))?,
            init,
            block_prev_token_layers: block_prev,
            ablate_heads: ablate,
            save_optimizer: doc.get_or("train.save_optimizer", true)?,
            evaluators,
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn parse_head_ref(s: &str) -> Result<(usize, usize)> {
    let err = || Error::Config(format!("bad head reference `{s}`, expected l<L>.h<H>"));
    let rest = s.strip_prefix('l').ok_or_else(err)?;
    let (l, h) = rest.split_once(".h").ok_or_else(err)?;
    Ok((l.parse().map_err(|_| err())?, h.parse().map_err(|_| err())?))
}

pub fn model_config_from_doc(doc: &Doc) -> Result<ModelConfig> {
    let defaults = ModelConfig::default();
    let config = ModelConfig {
        num_layers: doc.get_or("model.layers", defaults.num_layers)?,
        d_model: doc.get_or("model.d_model", defaults.d_model)?,
        num_heads: doc.get_or("model.heads", defaults.num_heads)?,
        label_vocab: doc.get_or("model.classes", defaults.label_vocab)?,
        input_dim: doc.get_or("model.input_dim", defaults.input_dim)?,
        positional: match doc.get("model.positional").unwrap_or("learned") {
            "learned" => Positional::Learned,
            "sinusoidal" => Positional::Sinusoidal,
            other => return Err(Error::Config(format!("unknown positional kind `{other}`"))),
        },
    };
    config.validate()?;
    Ok(config)
}

/// Geometric step schedule: {0} union {start * growth^k} union {last}.
pub fn geometric_schedule(start: u64, growth: f64, last: u64) -> Vec<u64> {
    let mut steps = vec![0u64];
    let mut v = start.max(1);
    while v < last {
        steps.push(v);
        let next = (v as f64 * growth).ceil() as u64;
        v = next.max(v + 1);
    }
    if last > 0 {
        steps.push(last);
    }
    steps.dedup();
    steps
}

pub fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join("checkpoints").join(format!("ckpt_{step:010}.bin"))
}

/// Sorted (step, path) pairs for a run directory.
pub fn list_checkpoints(out: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let dir = out.join("checkpoints");
    let mut found = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if let Some(stem) = name.strip_prefix("ckpt_").and_then(|s| s.strip_suffix(".bin")) {
                if let Ok(step) = stem.parse::<u64>() {
                    found.push((step, path));
                }
            }
        }
    }
    found.sort_by_key(|(s, _)| *s);
    Ok(found)
}

/// Build initial parameters per the configured init source.
pub fn build_init_params<T: Scalar>(config: &TrainConfig) -> Result<ModelParams<T>> {
    match &config.init {
        InitSource::Fresh => ModelParams::init(&config.model, config.seed),
        InitSource::Checkpoint(path) => {
            let params = load_params::<T>(path)?;
            if params.config != config.model {
                return Err(Error::Config(format!(
                    "checkpoint model config {:?} does not match run config",
                    params.config
                )));
            }
            Ok(params)
        }
        InitSource::Transplant { lower_from, upper_from } => {
            let mut params = ModelParams::init(&config.model, config.seed)?;
            if let Some(path) = lower_from {
                let src = load_params::<T>(path)?;
                copy_partition(&mut params, &src, Partition::Lower)?;
            }
            if let Some(path) = upper_from {
                let src = load_params::<T>(path)?;
                copy_partition(&mut params, &src, Partition::Upper)?;
            }
            Ok(params)
        }
    }
}

/// Copy one partition of `src` into `dst`; shapes must agree.
pub fn copy_partition<T: Scalar>(
    dst: &mut ModelParams<T>,
    src: &ModelParams<T>,
    part: Partition,
) -> Result<()> {
    if dst.config != src.config {
        return Err(Error::Config(
            "transplant source has an incompatible model config".into(),
        ));
    }
    let names: Vec<String> = src
        .named()
        .into_iter()
        .filter(|(n, _)| in_partition(n, part))
        .map(|(n, _)| n)
        .collect();
    let src_map: std::collections::BTreeMap<String, crate::tensor::Tensor<T>> =
        src.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
    for name in names {
        dst.set(&name, src_map[&name].clone())?;
    }
    Ok(())
}

/// Compose a model from the LOWER partition of one source and the UPPER
/// partition of another.
pub fn compose_params<T: Scalar>(
    lower: &ModelParams<T>,
    upper: &ModelParams<T>,
) -> Result<ModelParams<T>> {
    let mut out = lower.clone();
    copy_partition(&mut out, upper, Partition::Upper)?;
    Ok(out)
}

/// One evaluator suite pass: fixed seed, so the eval set is identical across
/// checkpoints of a run.
pub fn eval_suite<T: Scalar>(
    params: &ModelParams<T>,
    bank: &ClassBank,
    evaluators: &[EvalKind],
    n_per_eval: usize,
    seed: u64,
    hooks: &HookSpec,
) -> Result<Vec<(String, String, f64)>> {
    const CHUNK: usize = 250;
    let mut out = Vec::new();
    for &kind in evaluators {
        let mut rng = stream(seed, kind.name());
        let mut remaining = n_per_eval;
        let mut acc_hits = 0.0f64;
        let mut plain_hits = 0.0f64;
        let mut loss_sum = 0.0f64;
        let mut total = 0usize;
        while remaining > 0 {
            let take = remaining.min(CHUNK);
            let seqs: Result<Vec<_>> =
                (0..take).map(|_| sample_sequence(kind, bank, &mut rng)).collect();
            let batch = assemble_batch::<T>(bank, seqs?)?;
            let trace = run_forward(params, &batch, hooks, None)?;
            let targets: Vec<usize> =
                batch.seqs.iter().map(|s| score_target(kind, s)).collect();
            if uses_in_context(kind) {
                let items: Vec<([usize; 2], usize)> = batch
                    .seqs
                    .iter()
                    .zip(&targets)
                    .map(|(s, &t)| (s.context_labels(), t))
                    .collect();
                acc_hits += in_context_accuracy(&trace.logits, &items)? * take as f64;
            }
            plain_hits += plain_accuracy(&trace.logits, &targets)? * take as f64;
            loss_sum += mean_cross_entropy(&trace.logits, &targets)? * take as f64;
            total += take;
            remaining -= take;
        }
        let n = total as f64;
        if uses_in_context(kind) {
            out.push((kind.name().to_string(), "in_context_accuracy".to_string(), acc_hits / n));
        }
        out.push((kind.name().to_string(), "plain_accuracy".to_string(), plain_hits / n));
        out.push((kind.name().to_string(), "loss".to_string(), loss_sum / n));
    }
    Ok(out)
}

pub struct TrainOutcome {
    pub metrics: MetricsLog,
    pub checkpoint_steps: Vec<u64>,
    pub final_step: u64,
}

/// Train from scratch (or from the configured init source) into `out`.
pub fn train<T: Scalar>(config: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out.join("checkpoints"))?;
    let doc = config.to_doc();
    doc.save(&out.join("config.resolved"))?;
    std::fs::write(
        out.join("version.txt"),
        format!("coopetition {}\n", env!("CARGO_PKG_VERSION")),
    )?;

    let params = build_init_params::<T>(config)?;
    let adam = AdamState::new(AdamHyper { lr: config.lr, ..Default::default() });
    let data_rng = stream(config.data_seed, "data");
    run_loop(config, out, params, adam, data_rng, 0, MetricsLog::new())
}

/// Continue an interrupted run from its newest checkpoint; bitwise-identical
/// to the uninterrupted run in single-threaded mode.
pub fn resume<T: Scalar>(out: &Path) -> Result<TrainOutcome> {
    let doc = Doc::load(&out.join("config.resolved"))?;
    let config = TrainConfig::from_doc(&doc)?;
    let ckpts = list_checkpoints(out)?;
    let (step, path) = ckpts
        .last()
        .ok_or_else(|| Error::Checkpoint("no checkpoints to resume from".into()))?;
    let ckpt = load_checkpoint::<T>(path, None)?;
    let adam = ckpt
        .adam
        .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
    let mut rng = stream(config.data_seed, "data");
    rng.set_word_pos(ckpt.data_rng_word_pos);
    let metrics_path = out.join("metrics.csv");
    let mut metrics = if metrics_path.exists() {
        MetricsLog::read_csv(&metrics_path)?
    } else {
        MetricsLog::new()
    };
    metrics.truncate_after(*step);
    run_loop(&config, out, ckpt.params, adam, rng, *step, metrics)
}

fn run_loop<T: Scalar>(
    config: &TrainConfig,
    out: &Path,
    mut params: ModelParams<T>,
    mut adam: AdamState<T>,
    mut data_rng: ChaCha8Rng,
    start_step: u64,
    mut metrics: MetricsLog,
) -> Result<TrainOutcome> {
    let bank = ClassBank::build(config.bank_config())?;
    let hooks = config.persistent_hooks();
    hooks.validate(config.model.num_layers, config.model.num_heads)?;
    let total_steps = config.total_steps();
    let eval_steps = geometric_schedule(config.eval_start, config.eval_growth, total_steps);
    let ckpt_steps = geometric_schedule(config.ckpt_start, config.ckpt_growth, total_steps);
    let doc = config.to_doc();

    let frozen_filter = |name: &str| -> bool {
        let part_frozen = match config.frozen {
            FrozenPart::None => false,
            FrozenPart::Lower => is_lower(name),
            FrozenPart::Upper => !is_lower(name),
        };
        part_frozen || (config.model.positional == Positional::Sinusoidal && name == "pos_emb")
    };

    let mut saved_steps = Vec::new();
    let bsz = config.batch_size;
    for step in start_step..=total_steps {
        if eval_steps.binary_search(&step).is_ok() {
            let rows = eval_suite(&params, &bank, &config.evaluators, config.eval_n, config.eval_seed, &hooks)?;
            for (evaluator, metric, value) in rows {
                metrics.push(step, step * bsz as u64, &evaluator, &metric, value);
            }
            metrics.write_csv(&out.join("metrics.csv"))?;
        }
        if ckpt_steps.binary_search(&step).is_ok() {
            save_checkpoint(
                &checkpoint_path(out, step),
                &doc,
                step,
                step * bsz as u64,
                data_rng.get_word_pos(),
                &params,
                if config.save_optimizer { Some(&adam) } else { None },
            )?;
            saved_steps.push(step);
        }
        if step == total_steps {
            break;
        }

        let seqs: Result<Vec<_>> =
            (0..bsz).map(|_| sample_sequence(config.data, &bank, &mut data_rng)).collect();
        let batch = assemble_batch::<T>(&bank, seqs?)?;
        let targets: Vec<usize> = batch.seqs.iter().map(|s| s.train_target()).collect();
        let (loss, grads, _) = loss_and_grads(&params, &batch, &hooks, &targets).map_err(|e| {
            Error::invalid(format!(
                "training aborted at step {step} ({e}); last checkpoint retained at step {:?}",
                saved_steps.last()
            ))
        })?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: format!("train step {step}") });
        }
        let mut named = params.named_mut();
        adam.step(&mut named, &grads, &frozen_filter)?;
    }

    Ok(TrainOutcome { metrics, checkpoint_steps: saved_steps, final_step: total_steps })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransplantMode {
    UpperFromFinal,
    LowerFromStep(u64),
}

/// Recompose every checkpoint of a run with a fixed partition from one
/// checkpoint, then run the evaluator suite on each composition.
pub fn weight_transplant_eval<T: Scalar>(
    run_dir: &Path,
    mode: TransplantMode,
    eval_n: Option<usize>,
) -> Result<MetricsLog> {
    let doc = Doc::load(&run_dir.join("config.resolved"))?;
    let config = TrainConfig::from_doc(&doc)?;
    let bank = ClassBank::build(config.bank_config())?;
    let ckpts = list_checkpoints(run_dir)?;
    if ckpts.is_empty() {
        return Err(Error::Checkpoint("run has no checkpoints".into()));
    }
    let n = eval_n.unwrap_or(config.eval_n);
    let fixed: ModelParams<T> = match mode {
        TransplantMode::UpperFromFinal => load_params(&ckpts.last().unwrap().1)?,
        TransplantMode::LowerFromStep(k) => {
            let (_, path) = ckpts
                .iter()
                .find(|(s, _)| *s == k)
                .ok_or_else(|| Error::Checkpoint(format!("no checkpoint at step {k}")))?;
            load_params(path)?
        }
    };
    let mut log = MetricsLog::new();
    for (step, path) in &ckpts {
        let base: ModelParams<T> = load_params(path)?;
        let composed = match mode {
            TransplantMode::UpperFromFinal => compose_params(&base, &fixed)?,
            TransplantMode::LowerFromStep(_) => compose_params(&fixed, &base)?,
        };
        let rows = eval_suite(
            &composed,
            &bank,
            &config.evaluators,
            n,
            config.eval_seed,
            &HookSpec::none(),
        )?;
        for (evaluator, metric, value) in rows {
            log.push(*step, step * config.batch_size as u64, &evaluator, &metric, value);
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_schedule_covers_endpoints() {
        let s = geometric_schedule(100, 1.5, 1000);
        assert_eq!(s.first(), Some(&0));
        assert_eq!(s.last(), Some(&1000));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.contains(&100));
    }

    #[test]
    fn config_doc_round_trip() {
        let mut config = TrainConfig {
            total_sequences: 6400,
            block_prev_token_layers: vec![0],
            ablate_heads: vec![(0, 1), (0, 4)],
            frozen: FrozenPart::Upper,
            init: InitSource::Transplant {
                lower_from: None,
                upper_from: Some(PathBuf::from("runs/x/checkpoints/ckpt_0000000001.bin")),
            },
            ..TrainConfig::default()
        };
        config.model.label_vocab = 64;
        let doc = config.to_doc();
        let back = TrainConfig::from_doc(&doc).unwrap();
        assert_eq!(back.to_doc().to_text(), doc.to_text());
        assert_eq!(back.ablate_heads, vec![(0, 1), (0, 4)]);
        assert_eq!(back.frozen, FrozenPart::Upper);
    }

    #[test]
    fn head_ref_parsing() {
        assert_eq!(parse_head_ref("l0.h7").unwrap(), (0, 7));
        assert!(parse_head_ref("h7").is_err());
        assert!(parse_head_ref("l0h7").is_err());
    }

    #[test]
    fn evaluator_kind_cannot_be_training_stream() {
        let config =
            TrainConfig { data: EvalKind::EvalFlip, ..TrainConfig::default() };
        assert!(config.validate().is_err());
    }
}
