//! Evaluate a policy under the fixed and randomized target protocols.
//!
//! The do-nothing baseline (PD hold at the default pose) survives every
//! episode but ignores the velocity command, so it scores perfect success
//! with ~1.0 m/s tracking error — a useful reference point for both metric
//! definitions and the evaluation plumbing.

use locodistill::eval::{evaluate, EvalPolicy, EvalProtocol, TargetKind};

fn main() -> anyhow::Result<()> {
    for target in [TargetKind::Fixed, TargetKind::Randomized] {
        let protocol = EvalProtocol {
            target,
            episodes: 10,
            seeds: vec![0, 1, 2],
            ..Default::default()
        };
        let report = evaluate(&EvalPolicy::DoNothing, &protocol)?;
        println!("--- target: {} ---", target.as_str());
        for s in &report.per_seed {
            println!(
                "seed {}: success {:.2}, tracking {:.3} m/s, smoothness {:.3}",
                s.seed, s.success_rate, s.tracking_error, s.smoothness
            );
        }
        println!(
            "aggregate: success {:.2} +/- {:.2}, tracking {:.3} +/- {:.3}, smoothness {:.3} +/- {:.3}\n",
            report.success_rate.mean,
            report.success_rate.std,
            report.tracking_error.mean,
            report.tracking_error.std,
            report.smoothness.mean,
            report.smoothness.std
        );
    }
    println!("a trained checkpoint is evaluated the same way:");
    println!("  locodistill eval --policy runs/expert/best.ckpt --target fixed --episodes 100 --out eval.txt");
    Ok(())
}
