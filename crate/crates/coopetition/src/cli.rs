//! Command-line front end: reproducible experiment campaigns driven by flat
//! key/value config files (or bundled presets), writing CSVs and checkpoints
//! into a run directory.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::data::{sample_sequence, ClassBank, EvalKind};
use crate::expconfig::Doc;
use crate::hooks::HookSpec;
use crate::probes::{self, DirectPathMode};
use crate::rngutil::stream;
use crate::toy::{toy_sweep, write_sweep_summary_csv, write_trace_csv, ToyConfig};
use crate::trainer::{
    eval_suite, list_checkpoints, train, weight_transplant_eval, TrainConfig, TransplantMode,
};

pub const PRESETS: &[(&str, &str)] = &[
    ("standard_bursty", include_str!("../presets/standard_bursty.conf")),
    ("matched_query", include_str!("../presets/matched_query.conf")),
    ("one_layer", include_str!("../presets/one_layer.conf")),
    ("icl_only_scratch", include_str!("../presets/icl_only_scratch.conf")),
    ("icl_only_boosted", include_str!("../presets/icl_only_boosted.conf")),
    ("ciwl_only", include_str!("../presets/ciwl_only.conf")),
    ("low_data_diversity", include_str!("../presets/low_data_diversity.conf")),
    ("prev_token_blocked", include_str!("../presets/prev_token_blocked.conf")),
    ("l1_heads_ablated", include_str!("../presets/l1_heads_ablated.conf")),
    ("toy_paper_settings", include_str!("../presets/toy_paper_settings.conf")),
    ("toy_mu_zero", include_str!("../presets/toy_mu_zero.conf")),
];

#[derive(Parser)]
#[command(
    name = "coopetition",
    version,
    about = "Tiny-transformer strategy-dynamics lab: training, probing, and a toy model"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Config file path (flat `key = value` lines).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset name (see `list-presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (default: $COOPETITION_OUT/<name> or runs/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override config keys, e.g. `--set train.lr=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed override(s); multi-seed runs get `-s<seed>` directory suffixes.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Rayon worker threads (results are bitwise identical across counts).
    #[arg(long)]
    threads: Option<usize>,
    /// Training float width.
    #[arg(long, default_value = "32", value_parser = ["32", "64"])]
    precision: String,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model per the config; writes metrics.csv and checkpoints.
    Train(ConfigArgs),
    /// Continue an interrupted run from its newest checkpoint.
    Resume {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "32", value_parser = ["32", "64"])]
        precision: String,
    },
    /// Run the evaluator suite on a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a mechanistic probe on a checkpoint (or every checkpoint of a run).
    Probe(ProbeArgs),
    /// Recompose checkpoints with a fixed partition and re-evaluate.
    Transplant {
        #[arg(long)]
        run: PathBuf,
        /// `upper-from-final` or `lower-from-step`.
        #[arg(long)]
        mode: String,
        /// Checkpoint step for `lower-from-step`.
        #[arg(long)]
        step: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Simulate the toy model once per seed; writes trace CSVs.
    Toy(ConfigArgs),
    /// Toy-model seed sweep with signature detection summary.
    Sweep(ConfigArgs),
    /// Sample sequences from a distribution into a CSV.
    Data {
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// List bundled presets.
    ListPresets,
}

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("rayon pool already initialized")?;
    }
    Ok(())
}

fn load_doc(args: &ConfigArgs) -> anyhow::Result<(Doc, String)> {
    let (mut doc, name) = match (&args.config, &args.preset) {
        (Some(path), None) => {
            let doc = Doc::load(path)?;
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("run")
                .to_string();
            (doc, name)
        }
        (None, Some(preset)) => {
            let text = PRESETS
                .iter()
                .find(|(n, _)| n == preset)
                .map(|(_, t)| *t)
                .ok_or_else(|| {
                    anyhow!(
                        "unknown preset `{preset}`; available: {}",
                        PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
                    )
                })?;
            (Doc::parse(text)?, preset.clone())
        }
        _ => bail!("exactly one of --config or --preset is required"),
    };
    doc.apply_overrides(&args.sets)?;
    Ok((doc, name))
}

fn out_dir(args: &ConfigArgs, doc: &Doc, name: &str) -> PathBuf {
    if let Some(out) = &args.out {
        return out.clone();
    }
    if let Some(out) = doc.get("out") {
        return PathBuf::from(out);
    }
    let root = std::env::var("COOPETITION_OUT").unwrap_or_else(|_| "runs".to_string());
    Path::new(&root).join(name)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => {
            init_threads(args.threads)?;
            let (mut doc, name) = load_doc(&args)?;
            let seeds = if args.seed.is_empty() { vec![] } else { args.seed.clone() };
            let base_out = out_dir(&args, &doc, &name);
            let run_one = |doc: &Doc, out: &Path| -> anyhow::Result<()> {
                let config = TrainConfig::from_doc(doc)?;
                let outcome = match args.precision.as_str() {
                    "64" => train::<f64>(&config, out)?,
                    _ => train::<f32>(&config, out)?,
                };
                println!(
                    "run complete: {} steps, {} checkpoints, metrics at {}",
                    outcome.final_step,
                    outcome.checkpoint_steps.len(),
                    out.join("metrics.csv").display()
                );
                Ok(())
            };
            if seeds.is_empty() {
                run_one(&doc, &base_out)?;
            } else {
                for &seed in &seeds {
                    doc.set("train.seed", seed);
                    doc.set("train.data_seed", seed);
                    let out = if seeds.len() == 1 {
                        base_out.clone()
                    } else {
                        base_out.with_file_name(format!(
                            "{}-s{}",
                            base_out.file_name().unwrap_or_default().to_string_lossy(),
                            seed
                        ))
                    };
                    run_one(&doc, &out)?;
                }
            }
        }
        Command::Resume { run, threads, precision } => {
            init_threads(threads)?;
            let outcome = match precision.as_str() {
                "64" => crate::trainer::resume::<f64>(&run)?,
                _ => crate::trainer::resume::<f32>(&run)?,
            };
            println!("resumed to step {}", outcome.final_step);
        }
        Command::Eval { ckpt, n, seed, threads } => {
            init_threads(threads)?;
            let params = crate::checkpoint::load_params::<f32>(&ckpt)?;
            let header = crate::checkpoint::read_file(&ckpt)?.0;
            let config = TrainConfig::from_doc(&header)?;
            let bank = ClassBank::build(config.bank_config())?;
            let rows = eval_suite(&params, &bank, &config.evaluators, n, seed, &HookSpec::none())?;
            for (evaluator, metric, value) in rows {
                println!("{evaluator},{metric},{value}");
            }
        }
        Command::Probe(args) => run_probe(args)?,
        Command::Transplant { run, mode, step, n, out, threads } => {
            init_threads(threads)?;
            let mode = match (mode.as_str(), step) {
                ("upper-from-final", _) => TransplantMode::UpperFromFinal,
                ("lower-from-step", Some(k)) => TransplantMode::LowerFromStep(k),
                ("lower-from-step", None) => bail!("--step is required for lower-from-step"),
                (m, _) => bail!("unknown transplant mode `{m}`"),
            };
            let log = weight_transplant_eval::<f32>(&run, mode, n)?;
            let out = out.unwrap_or_else(|| {
                run.join(match mode {
                    TransplantMode::UpperFromFinal => "transplant_upper_from_final.csv".to_string(),
                    TransplantMode::LowerFromStep(k) => format!("transplant_lower_from_{k}.csv"),
                })
            });
            log.write_csv(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Toy(args) | Command::Sweep(args) => {
            init_threads(args.threads)?;
            let (doc, name) = load_doc(&args)?;
            let out = out_dir(&args, &doc, &name);
            std::fs::create_dir_all(&out)?;
            let base = toy_config_from_doc(&doc)?;
            let seeds: Vec<u64> = if !args.seed.is_empty() {
                args.seed.clone()
            } else if let Some(spec) = doc.get("toy.seeds") {
                parse_seed_list(spec)?
            } else {
                vec![base.seed]
            };
            let configs: Vec<ToyConfig> =
                seeds.iter().map(|&s| ToyConfig { seed: s, ..base.clone() }).collect();
            let mut resolved = doc.clone();
            resolved.set(
                "toy.seeds",
                seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            );
            resolved.save(&out.join("config.resolved"))?;
            std::fs::write(
                out.join("version.txt"),
                format!("coopetition {}\n", env!("CARGO_PKG_VERSION")),
            )?;
            let results = toy_sweep(&configs)?;
            for (trace, _) in &results {
                write_trace_csv(&out.join(format!("trace_seed{}.csv", trace.config.seed)), trace)?;
            }
            write_sweep_summary_csv(&out.join("sweep_summary.csv"), &results)?;
            let transient = results.iter().filter(|(_, s)| s.transient).count();
            let exited = results.iter().filter(|(_, s)| s.exited_plateau).count();
            println!(
                "{} seeds: {} exited the plateau, {} transient; summary at {}",
                results.len(),
                exited,
                transient,
                out.join("sweep_summary.csv").display()
            );
        }
        Command::Data { kind, n, seed, classes, out } => {
            let kind: EvalKind = kind.parse()?;
            let bank = ClassBank::build(crate::data::BankConfig {
                num_classes: classes,
                ..Default::default()
            })?;
            let mut rng = stream(seed, "data-export");
            let seqs: crate::Result<Vec<_>> =
                (0..n).map(|_| sample_sequence(kind, &bank, &mut rng)).collect();
            crate::data::write_sequences_csv(&out, &seqs?)?;
            println!("wrote {}", out.display());
        }
        Command::ListPresets => {
            for (name, text) in PRESETS {
                let first = text
                    .lines()
                    .find(|l| l.starts_with('#'))
                    .map(|l| l.trim_start_matches('#').trim())
                    .unwrap_or("");
                println!("{name:24} {first}");
            }
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct ProbeArgs {
    /// One checkpoint file.
    #[arg(long, conflicts_with = "run")]
    ckpt: Option<PathBuf>,
    /// Run directory; with --all-checkpoints probes every checkpoint.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    all_checkpoints: bool,
    /// attention_profile | induction | clamp | composition | direct_path |
    /// temperature | scatter | l1_attention
    #[arg(long)]
    probe: String,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Head index for clamp/temperature; first head of the pair for scatter.
    #[arg(long)]
    head: Option<usize>,
    /// Second head for scatter.
    #[arg(long)]
    head2: Option<usize>,
    /// Layer for attention_profile.
    #[arg(long)]
    layer: Option<usize>,
    /// Force correct-label context slot (0 or 1) for attention_profile.
    #[arg(long)]
    label_slot: Option<usize>,
    /// Comma-separated grid for clamp (weights) or temperature values.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    /// direct_path mode: heads_only | embed_only.
    #[arg(long)]
    mode: Option<String>,
    /// temperature probe: keep all heads active.
    #[arg(long)]
    all_heads: bool,
    /// Eval kind for attention_profile / l1_attention.
    #[arg(long, default_value = "eval_ciwl")]
    kind: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

const PROBE_NAMES: &[&str] = &[
    "attention_profile",
    "induction",
    "clamp",
    "composition",
    "direct_path",
    "temperature",
    "scatter",
    "l1_attention",
];

fn run_probe(args: ProbeArgs) -> anyhow::Result<()> {
    init_threads(args.threads)?;
    if !PROBE_NAMES.contains(&args.probe.as_str()) {
        bail!("unknown probe `{}`; valid names: {}", args.probe, PROBE_NAMES.join(", "));
    }
    let targets: Vec<(String, PathBuf)> = match (&args.ckpt, &args.run) {
        (Some(ckpt), None) => {
            vec![(ckpt.file_stem().unwrap().to_string_lossy().into_owned(), ckpt.clone())]
        }
        (None, Some(run)) => {
            let all = list_checkpoints(run)?;
            let picked: Vec<_> = if args.all_checkpoints {
                all
            } else {
                all.into_iter().last().into_iter().collect()
            };
            picked
                .into_iter()
                .map(|(step, path)| (format!("ckpt_{step:010}"), path))
                .collect()
        }
        _ => bail!("exactly one of --ckpt or --run is required"),
    };
    if targets.is_empty() {
        bail!("no checkpoints found");
    }
    let out_dir = args.out.clone().unwrap_or_else(|| {
        args.run
            .clone()
            .map(|r| r.join("probes"))
            .unwrap_or_else(|| PathBuf::from("probes"))
    });
    std::fs::create_dir_all(&out_dir)?;

    for (ckpt_id, path) in targets {
        let params = crate::checkpoint::load_params::<f32>(&path)?;
        let header = crate::checkpoint::read_file(&path)?.0;
        let config = TrainConfig::from_doc(&header)?;
        let bank = ClassBank::build(config.bank_config())?;
        let kind: EvalKind = args.kind.parse()?;
        let report = match args.probe.as_str() {
            "attention_profile" => probes::attention_profile(
                &params,
                &bank,
                kind,
                args.layer.unwrap_or(params.config.num_layers - 1),
                args.n,
                args.seed,
                args.label_slot,
                &ckpt_id,
            )?,
            "induction" => probes::induction_strength(&params, &bank, args.n, args.seed, &ckpt_id)?,
            "clamp" => {
                let head = args.head.ok_or_else(|| anyhow!("--head is required for clamp"))?;
                let grid: Vec<f64> = if args.grid.is_empty() {
                    (0..=10).map(|i| i as f64 / 10.0).collect()
                } else {
                    args.grid.clone()
                };
                probes::clamp_sweep(&params, &bank, head, &grid, args.n, args.seed, &ckpt_id)?
            }
            "composition" => {
                probes::composition_report(&params, &bank, args.n, args.seed, &ckpt_id)?
            }
            "direct_path" => {
                let mode = match args.mode.as_deref() {
                    Some("heads_only") | None => DirectPathMode::HeadsOnly,
                    Some("embed_only") => DirectPathMode::EmbedOnly,
                    Some(m) => bail!("unknown direct_path mode `{m}`"),
                };
                probes::direct_path_ablation(&params, &bank, args.n, args.seed, mode, &ckpt_id)?
            }
            "temperature" => {
                let head =
                    args.head.ok_or_else(|| anyhow!("--head is required for temperature"))?;
                let grid: Vec<f64> = if args.grid.is_empty() {
                    vec![1.0, 0.5, 0.25, 0.1, 0.05]
                } else {
                    args.grid.clone()
                };
                probes::temperature_probe(
                    &params,
                    &bank,
                    head,
                    &grid,
                    args.all_heads,
                    args.n,
                    args.seed,
                    &ckpt_id,
                )?
            }
            "scatter" => {
                let head = args.head.ok_or_else(|| anyhow!("--head is required for scatter"))?;
                let head2 = args.head2.ok_or_else(|| anyhow!("--head2 is required for scatter"))?;
                probes::per_seq_attention_scatter(
                    &params, &bank, head, head2, args.n, args.seed, &ckpt_id,
                )?
            }
            "l1_attention" => {
                let kinds = [EvalKind::Bursty, EvalKind::EvalIcl, EvalKind::EvalCiwl, EvalKind::EvalFlip];
                probes::l1_attention_summary(&params, &bank, &kinds, args.n, args.seed, &ckpt_id)?
            }
            _ => unreachable!(),
        };
        let out = out_dir.join(format!("{}_{}.csv", ckpt_id, args.probe));
        report.write_csv(&out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn parse_seed_list(spec: &str) -> anyhow::Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let part = part.trim();
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse()?;
            let b: u64 = b.parse()?;
            out.extend(a..b);
        } else {
            out.push(part.parse()?);
        }
    }
    Ok(out)
}

fn toy_config_from_doc(doc: &Doc) -> anyhow::Result<ToyConfig> {
    let d = ToyConfig::default();
    Ok(ToyConfig {
        dims: [
            doc.get_or("toy.dim_a", d.dims[0])?,
            doc.get_or("toy.dim_b", d.dims[1])?,
            doc.get_or("toy.dim_c", d.dims[2])?,
            doc.get_or("toy.dim_d", d.dims[3])?,
        ],
        mu1: doc.get_or("toy.mu1", d.mu1)?,
        alpha: doc.get_or("toy.alpha", d.alpha)?,
        lr: doc.get_or("toy.lr", d.lr)?,
        steps: doc.get_or("toy.steps", d.steps)?,
        seed: doc.get_or("toy.seed", d.seed)?,
        scaled_norm: doc.get_or("toy.scaled_norm", d.scaled_norm)?,
        record_norms: doc.get_or("toy.record_norms", d.record_norms)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_seed_lists_expand() {
        for (name, text) in PRESETS {
            let doc = Doc::parse(text).unwrap_or_else(|e| panic!("preset {name}: {e}"));
            if doc.contains("train.data") {
                TrainConfig::from_doc(&doc).unwrap_or_else(|e| panic!("preset {name}: {e}"));
            } else {
                toy_config_from_doc(&doc).unwrap_or_else(|e| panic!("preset {name}: {e}"));
            }
        }
        assert_eq!(parse_seed_list("0..3,7").unwrap(), vec![0, 1, 2, 7]);
    }
}
