//! Cross-checks the recursive Newton-Euler forward dynamics against an
//! independent oracle built from numerically differentiated Lagrangian
//! energies. The oracle computes link kinematics directly from trigonometry
//! and never touches the chain code paths.

use locodistill::sim::{RobotModel, DOF, GRAVITY};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct trigonometric kinematics of the 5-link biped, written
/// independently of `PlanarChain`.
///
/// q = [x, z, pitch, lh, lk, rh, rk]; knee flexion is positive and rotates
/// the shank clockwise (absolute shank angle = pitch + hip - knee).
struct DirectKinematics {
    model: RobotModel,
}

impl DirectKinematics {
    /// (com position, absolute angle) per massive link:
    /// torso, l thigh, l shank, r thigh, r shank.
    fn links(&self, q: &[f64; DOF]) -> Vec<([f64; 2], f64)> {
        let m = &self.model;
        let base = [q[0], q[1]];
        let pitch = q[2];
        let mut out = Vec::with_capacity(5);
        // torso COM sits at local (0, +ct); rotated by pitch that is a
        // world offset of (-ct sin, ct cos)
        let ct = m.com_offsets[0];
        out.push((
            [base[0] - ct * pitch.sin(), base[1] + ct * pitch.cos()],
            pitch,
        ));
        for (hip_idx, knee_idx) in [(3usize, 4usize), (5usize, 6usize)] {
            let alpha = pitch + q[hip_idx]; // absolute thigh angle
            let beta = alpha - q[knee_idx]; // absolute shank angle (knee flips)
            let lt = m.link_lengths[1];
            let cth = m.com_offsets[1];
            let csh = m.com_offsets[2];
            let thigh_com = [
                base[0] + cth * alpha.sin(),
                base[1] - cth * alpha.cos(),
            ];
            let knee = [base[0] + lt * alpha.sin(), base[1] - lt * alpha.cos()];
            let shank_com = [
                knee[0] + csh * beta.sin(),
                knee[1] - csh * beta.cos(),
            ];
            out.push((thigh_com, alpha));
            out.push((shank_com, beta));
        }
        out
    }

    /// (com velocity, angular rate) per massive link, differentiated by hand
    /// so the kinetic energy is exact.
    fn link_velocities(&self, q: &[f64; DOF], qd: &[f64; DOF]) -> Vec<([f64; 2], f64)> {
        let m = &self.model;
        let pitch = q[2];
        let pd = qd[2];
        let ct = m.com_offsets[0];
        let mut out = Vec::with_capacity(5);
        out.push((
            [
                qd[0] - ct * pitch.cos() * pd,
                qd[1] - ct * pitch.sin() * pd,
            ],
            pd,
        ));
        for (hip_idx, knee_idx) in [(3usize, 4usize), (5usize, 6usize)] {
            let alpha = pitch + q[hip_idx];
            let ad = pd + qd[hip_idx];
            let beta = alpha - q[knee_idx];
            let bd = ad - qd[knee_idx];
            let lt = m.link_lengths[1];
            let cth = m.com_offsets[1];
            let csh = m.com_offsets[2];
            out.push((
                [
                    qd[0] + cth * alpha.cos() * ad,
                    qd[1] + cth * alpha.sin() * ad,
                ],
                ad,
            ));
            out.push((
                [
                    qd[0] + lt * alpha.cos() * ad + csh * beta.cos() * bd,
                    qd[1] + lt * alpha.sin() * ad + csh * beta.sin() * bd,
                ],
                bd,
            ));
        }
        out
    }

    fn kinetic(&self, q: &[f64; DOF], qd: &[f64; DOF]) -> f64 {
        let mut ke = 0.0;
        for (i, (v, w)) in self.link_velocities(q, qd).into_iter().enumerate() {
            let mass = self.model.link_masses[i];
            let inertia = self.model.link_inertias[i];
            ke += 0.5 * mass * (v[0] * v[0] + v[1] * v[1]) + 0.5 * inertia * w * w;
        }
        ke
    }

    fn potential(&self, q: &[f64; DOF]) -> f64 {
        self.links(q)
            .iter()
            .zip(self.model.link_masses.iter())
            .map(|((com, _), &m)| m * GRAVITY * com[1])
            .sum()
    }

    /// Mass matrix as the Hessian of kinetic energy in the velocities.
    /// KE is exactly quadratic in qd, so the four-point rule below is exact
    /// for any step; a large step keeps roundoff negligible.
    fn mass_matrix(&self, q: &[f64; DOF]) -> DMatrix<f64> {
        let h = 0.5;
        let mut m = DMatrix::zeros(DOF, DOF);
        for i in 0..DOF {
            for j in i..DOF {
                let eval = |si: f64, sj: f64| {
                    let mut qd = [0.0; DOF];
                    qd[i] += si * h;
                    qd[j] += sj * h;
                    self.kinetic(q, &qd)
                };
                // 2 KE = qd' M qd, so M_ij via the four-point rule
                let val =
                    (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                        / (4.0 * h * h);
                m[(i, j)] = val;
                m[(j, i)] = val;
            }
        }
        m
    }

    /// Forward dynamics from the Euler-Lagrange equations with all partial
    /// derivatives taken numerically:
    /// `M qdd = tau + dKE/dq - dPE/dq - (d(M qd)/dq) qd`.
    fn forward_dynamics(&self, q: &[f64; DOF], qd: &[f64; DOF], tau: &[f64; DOF]) -> Vec<f64> {
        let h = 1e-5;
        let m = self.mass_matrix(q);
        let mut rhs = DVector::zeros(DOF);
        // dKE/dq - dPE/dq
        for i in 0..DOF {
            let mut qp = *q;
            qp[i] += h;
            let mut qm = *q;
            qm[i] -= h;
            let dke = (self.kinetic(&qp, qd) - self.kinetic(&qm, qd)) / (2.0 * h);
            let dpe = (self.potential(&qp) - self.potential(&qm)) / (2.0 * h);
            rhs[i] = tau[i] + dke - dpe;
        }
        // (d(M qd)/dq) qd
        let qdv = DVector::from_row_slice(qd);
        for i in 0..DOF {
            let mut qp = *q;
            qp[i] += h;
            let mut qm = *q;
            qm[i] -= h;
            let mp = self.mass_matrix(&qp);
            let mm = self.mass_matrix(&qm);
            let dm_qd = (&mp - &mm) / (2.0 * h) * &qdv;
            for r in 0..DOF {
                rhs[r] -= dm_qd[r] * qd[i];
            }
        }
        let sol = m.lu().solve(&rhs).expect("oracle mass matrix singular");
        sol.iter().cloned().collect()
    }
}

#[test]
fn forward_dynamics_matches_lagrangian_oracle() {
    let model = RobotModel::default();
    let chain = model.chain();
    let oracle = DirectKinematics {
        model: model.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..20 {
        let mut q = [0.0; DOF];
        let mut qd = [0.0; DOF];
        let mut tau = [0.0; DOF];
        q[0] = rng.gen_range(-1.0..1.0);
        q[1] = rng.gen_range(1.0..3.0);
        q[2] = rng.gen_range(-0.8..0.8);
        for i in 3..DOF {
            q[i] = rng.gen_range(-1.0..1.0);
            tau[i] = rng.gen_range(-20.0..20.0);
        }
        for i in 0..DOF {
            qd[i] = rng.gen_range(-2.0..2.0);
        }
        let got = chain.forward_dynamics(&q, &qd, &tau).unwrap();
        let want = oracle.forward_dynamics(&q, &qd, &tau);
        for i in 0..DOF {
            let denom = want[i].abs().max(1.0);
            assert!(
                (got[i] - want[i]).abs() / denom < 1e-4,
                "trial {trial} coord {i}: rnea {} vs oracle {}",
                got[i],
                want[i]
            );
        }
    }
}

#[test]
fn mass_matrix_matches_oracle() {
    let model = RobotModel::default();
    let chain = model.chain();
    let oracle = DirectKinematics {
        model: model.clone(),
    };
    let q = [0.3, 1.5, -0.2, 0.4, 0.7, -0.3, 0.2];
    let got = chain.mass_matrix(&q);
    let want = oracle.mass_matrix(&q);
    for i in 0..DOF {
        for j in 0..DOF {
            assert!(
                (got[(i, j)] - want[(i, j)]).abs() < 1e-4 * want[(i, j)].abs().max(1.0),
                "M[{i},{j}]: {} vs {}",
                got[(i, j)],
                want[(i, j)]
            );
        }
    }
}
