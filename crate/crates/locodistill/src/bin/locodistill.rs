use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use locodistill::amp::train::{train, PolicyArtifact, TrainConfig};
use locodistill::dataset::{collect, file_hash, read_dataset, CollectConfig};
use locodistill::diffusion::{train_dp, DpArtifact, DpTrainConfig};
use locodistill::eval::{evaluate, EvalPolicy, EvalProtocol, MetricsReport, TargetKind};
use locodistill::randomize::{RangeProfile, SetupId};
use locodistill::runner::{audit, report, run_matrix, write_atomic, RunConfig, RunRegistry};

#[derive(Parser)]
#[command(name = "locodistill", about = "Biped locomotion: AMP experts, dataset distillation, diffusion policies")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the AMP + PPO expert policy.
    TrainRl {
        /// TOML training configuration; defaults apply for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for last/best checkpoints and the log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect expert transitions under a randomization setup.
    Collect {
        #[arg(long)]
        expert: PathBuf,
        #[arg(long)]
        setup: SetupId,
        /// Number of transitions to keep.
        #[arg(long)]
        size: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        workers: usize,
        /// Range profile: training or evaluation.
        #[arg(long, default_value = "training")]
        profile: String,
        /// Output dataset path (manifest written alongside).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a diffusion policy on a collected dataset.
    TrainDp {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; the checkpoint is written as dp.ckpt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a policy checkpoint on a target environment.
    Eval {
        /// Expert or diffusion checkpoint; the kind is read from its manifest.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value = "fixed")]
        target: TargetKind,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Number of evaluation seeds (0..n).
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Report path; text records plus a JSON sidecar.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full experiment matrix from a declarative config.
    Matrix {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render result tables and normalized plots from a run registry.
    Report {
        #[arg(long)]
        registry: PathBuf,
    },
    /// Recompute every aggregate from raw episode logs and compare exactly.
    Audit {
        #[arg(long)]
        registry: PathBuf,
    },
}

fn load_toml<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(toml::from_str(&text)?)
        }
    }
}

fn render_report_text(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str("seed\tsuccess_rate\ttracking_error\tsmoothness\n");
    for s in &report.per_seed {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\n",
            s.seed, s.success_rate, s.tracking_error, s.smoothness
        ));
    }
    out.push_str(&format!(
        "aggregate\t{:.6} ± {:.6}\t{:.6} ± {:.6}\t{:.6} ± {:.6}\n",
        report.success_rate.mean,
        report.success_rate.std,
        report.tracking_error.mean,
        report.tracking_error.std,
        report.smoothness.mean,
        report.smoothness.std,
    ));
    out
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Cmd::TrainRl { config, seed, out } => {
            let cfg: TrainConfig = load_toml(&config)?;
            let result = train(&cfg, seed, Some(&out))?;
            println!(
                "trained {} env steps over {} iterations; greedy score {:.3} -> {:.3}",
                cfg.total_steps,
                result.history.len(),
                result.init_eval,
                result.best_eval
            );
            println!("checkpoints: {}", out.join("best.ckpt").display());
        }
        Cmd::Collect {
            expert,
            setup,
            size,
            seed,
            workers,
            profile,
            out,
        } => {
            let (artifact, _) = PolicyArtifact::load(&expert)?;
            let profile = match profile.as_str() {
                "training" => RangeProfile::Training,
                "evaluation" => RangeProfile::Evaluation,
                other => bail!("unknown profile: {other}"),
            };
            let cfg = CollectConfig {
                setup,
                profile,
                n_transitions: size,
                seed,
                workers,
                expert_hash: file_hash(&expert)?,
                ..Default::default()
            };
            let manifest = collect(&artifact, &cfg, &out)?;
            println!(
                "wrote {} transitions (obs {}, act {}) to {}",
                manifest.count,
                manifest.obs_dim,
                manifest.act_dim,
                out.display()
            );
        }
        Cmd::TrainDp {
            dataset,
            config,
            seed,
            out,
        } => {
            let cfg: DpTrainConfig = load_toml(&config)?;
            let (records, manifest) = read_dataset(&dataset)?;
            let ckpt = out.join("dp.ckpt");
            let result = train_dp(&records, &manifest, &cfg, seed, Some(&ckpt))?;
            if let Some(last) = result.history.last() {
                println!(
                    "{} epochs; final train loss {:.4}, val loss {:.4}",
                    result.history.len(),
                    last.train_loss,
                    last.val_loss
                );
            }
            println!("checkpoint: {}", ckpt.display());
        }
        Cmd::Eval {
            policy,
            target,
            episodes,
            seeds,
            out,
        } => {
            let protocol = EvalProtocol {
                target,
                episodes,
                seeds: (0..seeds).collect(),
                ..Default::default()
            };
            let kind = locodistill::checkpoint::Checkpoint::load(&policy)?
                .manifest
                .kind
                .clone();
            let report = match kind.as_str() {
                "amp-policy" => {
                    let (artifact, _) = PolicyArtifact::load(&policy)?;
                    evaluate(&EvalPolicy::Expert(&artifact), &protocol)?
                }
                "diffusion-policy" => {
                    let (artifact, _) = DpArtifact::load(&policy)?;
                    evaluate(&EvalPolicy::Diffusion(&artifact), &protocol)?
                }
                other => bail!("unsupported checkpoint kind: {other}"),
            };
            let text = render_report_text(&report);
            write_atomic(&out, text.as_bytes())?;
            write_atomic(
                &out.with_extension("json"),
                &serde_json::to_vec_pretty(&report)?,
            )?;
            print!("{text}");
        }
        Cmd::Matrix { config } => {
            let mut cfg = RunConfig::load(&config)?;
            // the only supported environment overrides
            if let Ok(v) = std::env::var("LOCODISTILL_WORKERS") {
                cfg.collect.workers = v.parse().context("LOCODISTILL_WORKERS")?;
            }
            if let Ok(v) = std::env::var("LOCODISTILL_OUTPUT_ROOT") {
                cfg.output_root = PathBuf::from(v);
            }
            let registry = run_matrix(&cfg)?;
            let mut by_status = std::collections::BTreeMap::new();
            for r in registry.records() {
                *by_status.entry(format!("{:?}", r.status)).or_insert(0u32) += 1;
            }
            println!(
                "matrix finished: {} registry records ({})",
                registry.records().len(),
                by_status
                    .iter()
                    .map(|(k, v)| format!("{v} {k}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
        Cmd::Report { registry } => {
            let reg = RunRegistry::open(&registry)?;
            let files = report(&reg)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
        }
        Cmd::Audit { registry } => {
            let reg = RunRegistry::open(&registry)?;
            let result = audit(&reg)?;
            println!(
                "audit: {} reports and {} table cells recomputed, {} mismatches",
                result.reports_checked,
                result.cells_checked,
                result.mismatches.len()
            );
            for m in &result.mismatches {
                println!("MISMATCH {m}");
            }
            if !result.passed() {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
