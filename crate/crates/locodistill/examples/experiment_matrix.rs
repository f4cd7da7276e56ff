//! Run a miniature end-to-end experiment matrix: expert, datasets, diffusion
//! policies, evaluations, report tables, and the exact-recompute audit.
//!
//! Everything lands in a temporary directory with an append-only
//! `registry.jsonl` ledger; rerunning the same config reuses completed
//! stages. The full-scale version of this pipeline is `locodistill matrix
//! --config run.toml`.

use locodistill::randomize::SetupId;
use locodistill::runner::{
    audit, report, run_matrix, CollectSection, DiffusionSection, EvalSection, ExpertSection,
    RunConfig,
};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = RunConfig {
        output_root: dir.path().to_path_buf(),
        master_seed: 3,
        expert: ExpertSection {
            total_steps: 0, // untrained expert: fast, still exercises the plumbing
            num_envs: 2,
            hidden: vec![16],
            ..Default::default()
        },
        collect: CollectSection {
            setups: vec![SetupId::None, SetupId::Dynamics],
            sizes: vec![500],
            workers: 2,
            episode_seconds: 2.0,
            ..Default::default()
        },
        diffusion: DiffusionSection {
            epochs: 1,
            batch: 32,
            history: 2,
            horizon: 2,
            steps: 3,
            width: 8,
            heads: 2,
            decoder_depth: 1,
            seeds: 1,
            ..Default::default()
        },
        eval: EvalSection {
            episodes: 2,
            episode_steps: 50,
            seeds: vec![0],
        },
    };

    let registry = run_matrix(&cfg)?;
    println!("registry ledger:");
    for r in registry.records() {
        println!("  [{:?}] {} ({:.1}s)", r.status, r.name, r.seconds);
    }

    let files = report(&registry)?;
    println!("\nreport artifacts:");
    for f in &files {
        println!("  {}", f.file_name().unwrap().to_string_lossy());
    }
    let table = std::fs::read_to_string(dir.path().join("report/table_fixed.txt"))?;
    println!("\n{table}");

    let audit_result = audit(&registry)?;
    println!(
        "audit: {} reports, {} cells recomputed, {} mismatches",
        audit_result.reports_checked,
        audit_result.cells_checked,
        audit_result.mismatches.len()
    );
    Ok(())
}
