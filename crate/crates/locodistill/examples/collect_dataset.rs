//! Collect an expert transition dataset and read it back.
//!
//! Uses a freshly initialized (untrained) policy so the example runs in
//! seconds; a real distillation run loads a trained checkpoint. Shows the
//! sharded deterministic collection, the manifest sidecar, and per-column
//! normalization statistics stored for downstream diffusion training.

use locodistill::amp::train::{PolicyArtifact, TrainConfig};
use locodistill::dataset::{collect, read_dataset, CollectConfig};
use locodistill::randomize::{RangeProfile, SetupId};

fn main() -> anyhow::Result<()> {
    let expert = PolicyArtifact::init(0, &TrainConfig {
        hidden: vec![32, 32],
        ..Default::default()
    });

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("demo.ldds");
    let cfg = CollectConfig {
        setup: SetupId::Dynamics,
        profile: RangeProfile::Training,
        n_transitions: 5_000,
        seed: 42,
        workers: 4,
        ..Default::default()
    };
    let manifest = collect(&expert, &cfg, &path)?;
    println!(
        "collected {} transitions under setup '{}' ({} profile)",
        manifest.count,
        manifest.setup_id.as_str(),
        format!("{:?}", manifest.profile).to_lowercase()
    );
    println!("obs dim {}, act dim {}", manifest.obs_dim, manifest.act_dim);

    let (records, manifest2) = read_dataset(&path)?;
    assert_eq!(manifest2.count as usize, records.len());
    let episodes = records.iter().map(|r| r.episode_id).max().unwrap() + 1;
    println!("read back {} records across {} episodes", records.len(), episodes);
    println!(
        "first record: episode {}, step {}, obs[0..3] = {:?}",
        records[0].episode_id,
        records[0].step_index,
        &records[0].obs[0..3]
    );
    println!(
        "stored obs normalization (first 3 dims): mean {:?}, std {:?}",
        &manifest.obs_mean[0..3],
        &manifest.obs_std[0..3]
    );
    Ok(())
}
