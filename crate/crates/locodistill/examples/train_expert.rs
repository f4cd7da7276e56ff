//! Smoke-scale AMP + PPO expert training.
//!
//! Runs a heavily shrunk version of the full training loop (a few thousand
//! environment steps, small networks) and prints the per-iteration reward
//! decomposition. A real training run uses `locodistill train-rl` with the
//! default budget (3M steps); this example only demonstrates the moving
//! parts: reference-motion discriminator, style reward, and PPO updates.

use locodistill::amp::train::{train, TrainConfig};
use locodistill::amp::{generate_reference_clips, GaitParams};
use locodistill::randomize::SetupId;

fn main() -> anyhow::Result<()> {
    let library = generate_reference_clips(&GaitParams::default());
    println!(
        "reference library: {} clips, {} frames total",
        library.clips.len(),
        library.clips.iter().map(|c| c.frames.len()).sum::<usize>()
    );

    let cfg = TrainConfig {
        total_steps: 8_192,
        num_envs: 4,
        horizon: 32,
        hidden: vec![32, 32],
        setup: SetupId::None,
        eval_interval: 16,
        eval_episodes: 1,
        ..Default::default()
    };
    let result = train(&cfg, 0, None)?;
    println!(
        "\n{:>4} {:>9} {:>7} {:>7} {:>7} {:>8}",
        "iter", "steps", "task", "style", "reg", "ep_len"
    );
    for s in &result.history {
        println!(
            "{:>4} {:>9} {:>7.3} {:>7.3} {:>7.3} {:>8.1}",
            s.iteration, s.env_steps, s.mean_task, s.mean_style, s.mean_regularization, s.mean_episode_len
        );
    }
    println!(
        "\ngreedy task score: {:.3} at init, {:.3} for the best iterate",
        result.init_eval, result.best_eval
    );
    println!(
        "policy action std: {:?}",
        result
            .artifact
            .policy
            .log_std
            .iter()
            .map(|s| (s.exp() * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
    Ok(())
}
