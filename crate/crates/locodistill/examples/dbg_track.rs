use locodistill::amp::train::PolicyArtifact;
use locodistill::amp::{generate_reference_clips, GaitParams};
use locodistill::sim::{compute_observation, Command, RobotModel, SimState, Simulator, Terrain, NUM_JOINTS};

fn main() -> anyhow::Result<()> {
    let path = std::env::args().nth(1).expect("ckpt path");
    let (artifact, _) = PolicyArtifact::load(std::path::Path::new(&path))?;
    let model = RobotModel::default();
    for v_hat in [0.0, 0.3, 0.6, 1.0] {
        let mut sim = Simulator::new(model.clone(), Terrain::flat(1.0));
        let mut state = sim.standing_state();
        if std::env::args().nth(2).is_some() {
            let lib = generate_reference_clips(&GaitParams::default());
            let clip = &lib.clips[1];
            let f = &clip.frames[0];
            state = locodistill::sim::SimState::zeroed();
            state.q[1] = f.base_height;
            state.q[2] = f.pitch;
            state.q[3..3 + NUM_JOINTS].copy_from_slice(&f.joint_pos);
            state.qdot[0] = clip.speed;
            state.qdot[3..3 + NUM_JOINTS].copy_from_slice(&f.joint_vel);
        }
        let command = Command { v_hat_x: v_hat, omega_hat: 0.0 };
        let mut vsum = 0.0;
        let mut steps = 0;
        for _ in 0..500 {
            let obs = compute_observation(&state, &command, false);
            let action = artifact.mean_action(&obs);
            let res = sim.step(&state, &action, &command);
            state = res.state;
            vsum += state.qdot[0];
            steps += 1;
            if res.terminated { break; }
        }
        println!("v_hat {:.1}: v_mean {:+.3} steps {}", v_hat, vsum / steps as f64, steps);
    }
    Ok(())
}
