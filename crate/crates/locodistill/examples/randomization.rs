//! Tour of the domain-randomization setups.
//!
//! Each setup toggles one axis (dynamics, terrain, perturbations, morphology
//! scale, initial states) or all of them. The example samples a few episode
//! environments per setup and prints what actually varied, then shows the
//! morphology scale law on one draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use locodistill::randomize::{apply_scale, build_setup, sample_episode, RangeProfile, SetupId};
use locodistill::sim::RobotModel;

fn main() {
    let base = RobotModel::default();
    for setup in SetupId::ALL {
        let cfg = build_setup(setup, RangeProfile::Training);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        print!("{:<16}", setup.as_str());
        let mut masses = Vec::new();
        let mut heights = Vec::new();
        let mut kicks = 0;
        for _ in 0..4 {
            let env = sample_episode(&cfg, &base, &mut rng).expect("sample episode");
            masses.push(env.model.link_masses[0]);
            // terrain relief over the first 5 m of travel
            let hs: Vec<f64> = (0..=100).map(|i| env.terrain.height(i as f64 * 0.05)).collect();
            heights.push(hs.iter().cloned().fold(f64::MIN, f64::max) - hs.iter().cloned().fold(f64::MAX, f64::min));
            kicks += env.perturbation.is_some() as usize;
        }
        println!(
            "torso mass {:>5.2}..{:<5.2}  terrain relief {:>5.3}..{:<5.3}  kicks {}/4",
            masses.iter().cloned().fold(f64::MAX, f64::min),
            masses.iter().cloned().fold(f64::MIN, f64::max),
            heights.iter().cloned().fold(f64::MAX, f64::min),
            heights.iter().cloned().fold(f64::MIN, f64::max),
            kicks
        );
    }

    println!("\nscale law at k = 1.2 (mass x k^3, inertia x k^5, gains/torques x k^4):");
    let scaled = apply_scale(&base, 1.2).expect("scale");
    println!(
        "  torso mass {:.3} -> {:.3}, inertia {:.4} -> {:.4}, hip kp {:.1} -> {:.1}",
        base.link_masses[0],
        scaled.link_masses[0],
        base.link_inertias[0],
        scaled.link_inertias[0],
        base.pd_gains[0].0,
        scaled.pd_gains[0].0
    );
}
