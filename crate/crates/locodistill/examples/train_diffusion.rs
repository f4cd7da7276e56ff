//! Train a miniature conditional diffusion policy and sample from it.
//!
//! Collects a tiny dataset with an untrained expert, fits a small denoiser
//! for a couple of epochs, then draws action plans with the DDPM ancestral
//! sampler, conditioned on an observation history and a velocity goal.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use locodistill::amp::train::{PolicyArtifact, TrainConfig};
use locodistill::dataset::{collect, read_dataset, CollectConfig};
use locodistill::diffusion::{
    build_noise_schedule, sample_actions, DiffusionConfig, DpTrainConfig, ScheduleConfig, train_dp,
};
use locodistill::randomize::SetupId;

fn main() -> anyhow::Result<()> {
    let expert = PolicyArtifact::init(0, &TrainConfig {
        hidden: vec![32, 32],
        ..Default::default()
    });
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("tiny.ldds");
    collect(
        &expert,
        &CollectConfig {
            setup: SetupId::None,
            n_transitions: 3_000,
            workers: 2,
            ..Default::default()
        },
        &path,
    )?;
    let (records, manifest) = read_dataset(&path)?;

    let cfg = DpTrainConfig {
        diffusion: DiffusionConfig {
            history: 2,
            horizon: 4,
            width: 32,
            heads: 2,
            decoder_depth: 1,
            schedule: ScheduleConfig {
                steps: 10,
                ..Default::default()
            },
            ..Default::default()
        },
        epochs: 2,
        batch: 64,
        ..Default::default()
    };
    let result = train_dp(&records, &manifest, &cfg, 0, None)?;
    for e in &result.history {
        println!(
            "epoch {:>2}: train loss {:.4}, val loss {:.4}",
            e.epoch, e.train_loss, e.val_loss
        );
    }

    let art = &result.artifact;
    let schedule = build_noise_schedule(&art.model.cfg.schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let history = Array2::zeros((1, art.model.cfg.history_dim()));
    let goal = Array2::from_shape_vec((1, 2), vec![1.0, 0.0])?;
    let plan = sample_actions(&art.model, &history, &goal, &schedule, &mut rng);
    println!("\nsampled action plan ({} steps x {} joints):", plan.nrows(), plan.ncols());
    for row in plan.rows() {
        println!("  {:?}", row.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
    Ok(())
}
