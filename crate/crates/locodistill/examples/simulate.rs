//! Step the planar biped simulator and watch it balance under PD control.
//!
//! Zero action means "hold the default pose", so the robot stands; a constant
//! forward hip offset makes it lean and eventually fall. The example prints
//! base state and mechanical energy every half second for both cases.

use locodistill::sim::{Command, RobotModel, Simulator, Terrain, CONTROL_RATE};

fn run(label: &str, action: [f64; 4], steps: usize) {
    let sim = Simulator::new(RobotModel::default(), Terrain::flat(1.0));
    let mut state = sim.standing_state();
    let command = Command::default();
    println!("--- {label} ---");
    println!("{:>6} {:>8} {:>8} {:>8} {:>10}", "t [s]", "x", "height", "pitch", "energy");
    for step in 0..steps {
        let result = sim.step(&state, &action, &command);
        if step % (CONTROL_RATE as usize / 2) == 0 {
            let e = sim.chain().mechanical_energy(&result.state.q, &result.state.qdot);
            println!(
                "{:>6.2} {:>8.3} {:>8.3} {:>8.3} {:>10.3}",
                step as f64 / CONTROL_RATE,
                result.state.q[0],
                result.state.q[1],
                result.state.q[2],
                e
            );
        }
        if result.terminated {
            println!("terminated at step {step} (height/pitch out of bounds)");
            return;
        }
        state = result.state;
    }
    println!("survived all {steps} steps");
}

fn main() {
    run("stand (zero action)", [0.0; 4], 250);
    run("lean forward (constant hip offset)", [0.8, 0.0, 0.8, 0.0], 250);
}
