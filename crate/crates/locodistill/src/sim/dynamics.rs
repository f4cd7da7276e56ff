//! Planar articulated rigid-body dynamics.
//!
//! A [`PlanarChain`] is a kinematic tree of 1-DoF joints (prismatic along a
//! parent-frame axis, or revolute) with a rigid body attached to each joint
//! frame. Inverse dynamics uses the planar recursive Newton-Euler algorithm
//! with spatial vectors `(omega, vx, vy)`; the mass matrix is assembled from
//! unit-acceleration inverse-dynamics columns and forward dynamics solves
//! `M(q) qdd = tau - bias(q, qd)`.
//!
//! Gravity enters through the usual fictitious base acceleration; external
//! point forces are expected to be mapped to generalized forces by the caller
//! via [`PlanarChain::point_jacobian`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointKind {
    /// Translation along the parent frame x axis.
    PrismaticX,
    /// Translation along the parent frame y (vertical) axis.
    PrismaticY,
    /// Rotation about the out-of-plane axis, scaled by `axis_sign`.
    Revolute,
}

#[derive(Clone, Debug)]
pub struct PlanarJoint {
    pub kind: JointKind,
    /// Parent joint index, or `None` for the root.
    pub parent: Option<usize>,
    /// Joint frame origin in the parent frame (before joint motion).
    pub offset: [f64; 2],
    /// +1 or -1; flips the revolute axis.
    pub axis_sign: f64,
}

/// Rigid body fixed in the frame of the joint with the same index.
#[derive(Clone, Copy, Debug)]
pub struct PlanarBody {
    pub mass: f64,
    /// COM in the body (joint) frame.
    pub com: [f64; 2],
    /// Rotational inertia about the COM.
    pub inertia: f64,
}

impl PlanarBody {
    pub fn massless() -> Self {
        Self {
            mass: 0.0,
            com: [0.0, 0.0],
            inertia: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlanarChain {
    pub joints: Vec<PlanarJoint>,
    pub bodies: Vec<PlanarBody>,
    /// Gravitational acceleration magnitude (positive, acts along -y).
    pub gravity: f64,
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("singular mass matrix")]
    SingularMassMatrix,
    #[error("non-finite dynamics input")]
    NonFiniteInput,
}

/// Planar spatial motion/force vector `(angular, x, y)`.
type Sv = [f64; 3];

fn rot(angle: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Motion transform into a child frame rotated by `r` with origin at `t`
/// (both relative to the parent frame).
fn xform_motion(v: Sv, r: f64, t: [f64; 2]) -> Sv {
    let lin = [v[1] - v[0] * t[1], v[2] + v[0] * t[0]];
    let lin = rot(-r, lin);
    [v[0], lin[0], lin[1]]
}

/// Force transform from a child frame back to its parent.
fn xform_force_to_parent(f: Sv, r: f64, t: [f64; 2]) -> Sv {
    let lin = rot(r, [f[1], f[2]]);
    [f[0] + t[0] * lin[1] - t[1] * lin[0], lin[0], lin[1]]
}

fn cross_motion(v: Sv, m: Sv) -> Sv {
    [
        0.0,
        v[2] * m[0] - v[0] * m[2],
        -v[1] * m[0] + v[0] * m[1],
    ]
}

fn cross_force(v: Sv, f: Sv) -> Sv {
    [v[1] * f[2] - v[2] * f[1], -v[0] * f[2], v[0] * f[1]]
}

fn apply_inertia(b: &PlanarBody, v: Sv) -> Sv {
    let [cx, cy] = b.com;
    let i0 = b.inertia + b.mass * (cx * cx + cy * cy);
    [
        i0 * v[0] - b.mass * cy * v[1] + b.mass * cx * v[2],
        -b.mass * cy * v[0] + b.mass * v[1],
        b.mass * cx * v[0] + b.mass * v[2],
    ]
}

impl PlanarChain {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    fn joint_motion(&self, i: usize, q: f64) -> (f64, [f64; 2], Sv) {
        let j = &self.joints[i];
        match j.kind {
            JointKind::PrismaticX => (0.0, [j.offset[0] + q, j.offset[1]], [0.0, 1.0, 0.0]),
            JointKind::PrismaticY => (0.0, [j.offset[0], j.offset[1] + q], [0.0, 0.0, 1.0]),
            JointKind::Revolute => (j.axis_sign * q, j.offset, [j.axis_sign, 0.0, 0.0]),
        }
    }

    /// Inverse dynamics: generalized forces that realize `qdd` at `(q, qd)`,
    /// including gravity.
    pub fn inverse_dynamics(&self, q: &[f64], qd: &[f64], qdd: &[f64]) -> Vec<f64> {
        let n = self.dof();
        let mut v = vec![[0.0; 3]; n];
        let mut a = vec![[0.0; 3]; n];
        let mut f = vec![[0.0; 3]; n];
        let mut rs = vec![0.0; n];
        let mut ts = vec![[0.0; 2]; n];
        let mut subspace = vec![[0.0; 3]; n];

        for i in 0..n {
            let (r, t, s) = self.joint_motion(i, q[i]);
            rs[i] = r;
            ts[i] = t;
            subspace[i] = s;
            let (vp, ap) = match self.joints[i].parent {
                Some(p) => (v[p], a[p]),
                // fictitious upward base acceleration stands in for gravity
                None => ([0.0; 3], [0.0, 0.0, self.gravity]),
            };
            let vi_from_parent = xform_motion(vp, r, t);
            let sqd = [s[0] * qd[i], s[1] * qd[i], s[2] * qd[i]];
            let vi = [
                vi_from_parent[0] + sqd[0],
                vi_from_parent[1] + sqd[1],
                vi_from_parent[2] + sqd[2],
            ];
            let ai_from_parent = xform_motion(ap, r, t);
            let coriolis = cross_motion(vi, sqd);
            let ai = [
                ai_from_parent[0] + s[0] * qdd[i] + coriolis[0],
                ai_from_parent[1] + s[1] * qdd[i] + coriolis[1],
                ai_from_parent[2] + s[2] * qdd[i] + coriolis[2],
            ];
            v[i] = vi;
            a[i] = ai;
            let iv = apply_inertia(&self.bodies[i], vi);
            let ia = apply_inertia(&self.bodies[i], ai);
            let vxiv = cross_force(vi, iv);
            f[i] = [ia[0] + vxiv[0], ia[1] + vxiv[1], ia[2] + vxiv[2]];
        }

        let mut tau = vec![0.0; n];
        for i in (0..n).rev() {
            let s = subspace[i];
            tau[i] = s[0] * f[i][0] + s[1] * f[i][1] + s[2] * f[i][2];
            if let Some(p) = self.joints[i].parent {
                let fp = xform_force_to_parent(f[i], rs[i], ts[i]);
                f[p][0] += fp[0];
                f[p][1] += fp[1];
                f[p][2] += fp[2];
            }
        }
        tau
    }

    /// Joint-space mass matrix from unit-acceleration inverse dynamics.
    pub fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.dof();
        let zero_qd = vec![0.0; n];
        let g_only = self.inverse_dynamics(q, &zero_qd, &zero_qd);
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.inverse_dynamics(q, &zero_qd, &e);
            for i in 0..n {
                m[(i, j)] = col[i] - g_only[i];
            }
            e[j] = 0.0;
        }
        m
    }

    /// Gravity + Coriolis/centrifugal generalized forces.
    pub fn bias_forces(&self, q: &[f64], qd: &[f64]) -> Vec<f64> {
        let n = self.dof();
        self.inverse_dynamics(q, qd, &vec![0.0; n])
    }

    /// Solve `M(q) qdd = tau - bias(q, qd)` for the accelerations.
    pub fn forward_dynamics(
        &self,
        q: &[f64],
        qd: &[f64],
        tau: &[f64],
    ) -> Result<Vec<f64>, DynamicsError> {
        if q.iter().chain(qd).chain(tau).any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFiniteInput);
        }
        let m = self.mass_matrix(q);
        let bias = self.bias_forces(q, qd);
        let rhs = DVector::from_iterator(
            self.dof(),
            tau.iter().zip(bias.iter()).map(|(t, b)| t - b),
        );
        let lu = m.lu();
        let sol = lu.solve(&rhs).ok_or(DynamicsError::SingularMassMatrix)?;
        Ok(sol.iter().cloned().collect())
    }

    /// Absolute frame pose (angle, origin) of every body.
    pub fn frames(&self, q: &[f64]) -> Vec<(f64, [f64; 2])> {
        let n = self.dof();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (r, t, _) = self.joint_motion(i, q[i]);
            let (pa, pp) = match self.joints[i].parent {
                Some(p) => out[p],
                None => (0.0, [0.0, 0.0]),
            };
            let origin = {
                let d = rot(pa, t);
                [pp[0] + d[0], pp[1] + d[1]]
            };
            out.push((pa + r, origin));
        }
        out
    }

    /// World position of a point fixed in `body`'s frame.
    pub fn point_position(&self, q: &[f64], body: usize, local: [f64; 2]) -> [f64; 2] {
        let (angle, origin) = self.frames(q)[body];
        let d = rot(angle, local);
        [origin[0] + d[0], origin[1] + d[1]]
    }

    /// 2 x n Jacobian of a body-fixed point.
    pub fn point_jacobian(&self, q: &[f64], body: usize, local: [f64; 2]) -> Vec<[f64; 2]> {
        let n = self.dof();
        let frames = self.frames(q);
        let p = {
            let (angle, origin) = frames[body];
            let d = rot(angle, local);
            [origin[0] + d[0], origin[1] + d[1]]
        };
        let mut cols = vec![[0.0, 0.0]; n];
        // walk ancestors of `body` (inclusive)
        let mut cur = Some(body);
        while let Some(i) = cur {
            let j = &self.joints[i];
            let parent_angle = match j.parent {
                Some(pi) => frames[pi].0,
                None => 0.0,
            };
            cols[i] = match j.kind {
                JointKind::PrismaticX => rot(parent_angle, [1.0, 0.0]),
                JointKind::PrismaticY => rot(parent_angle, [0.0, 1.0]),
                JointKind::Revolute => {
                    let o = frames[i].1;
                    let rel = [p[0] - o[0], p[1] - o[1]];
                    [-j.axis_sign * rel[1], j.axis_sign * rel[0]]
                }
            };
            cur = j.parent;
        }
        cols
    }

    /// World velocity of a body-fixed point: `J(q) qd`.
    pub fn point_velocity(&self, q: &[f64], qd: &[f64], body: usize, local: [f64; 2]) -> [f64; 2] {
        let jac = self.point_jacobian(q, body, local);
        let mut v = [0.0, 0.0];
        for (col, &qdi) in jac.iter().zip(qd.iter()) {
            v[0] += col[0] * qdi;
            v[1] += col[1] * qdi;
        }
        v
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass).sum()
    }

    /// System COM position.
    pub fn com_position(&self, q: &[f64]) -> [f64; 2] {
        let mut p = [0.0, 0.0];
        let mut m = 0.0;
        for (i, b) in self.bodies.iter().enumerate() {
            if b.mass == 0.0 {
                continue;
            }
            let c = self.point_position(q, i, b.com);
            p[0] += b.mass * c[0];
            p[1] += b.mass * c[1];
            m += b.mass;
        }
        [p[0] / m, p[1] / m]
    }

    /// System COM velocity.
    pub fn com_velocity(&self, q: &[f64], qd: &[f64]) -> [f64; 2] {
        let mut v = [0.0, 0.0];
        let mut m = 0.0;
        for (i, b) in self.bodies.iter().enumerate() {
            if b.mass == 0.0 {
                continue;
            }
            let c = self.point_velocity(q, qd, i, b.com);
            v[0] += b.mass * c[0];
            v[1] += b.mass * c[1];
            m += b.mass;
        }
        [v[0] / m, v[1] / m]
    }

    /// Kinetic plus gravitational potential energy.
    pub fn mechanical_energy(&self, q: &[f64], qd: &[f64]) -> f64 {
        let m = self.mass_matrix(q);
        let qdv = DVector::from_row_slice(qd);
        let ke = 0.5 * qdv.dot(&(&m * &qdv));
        let pe: f64 = self
            .bodies
            .iter()
            .enumerate()
            .filter(|(_, b)| b.mass > 0.0)
            .map(|(i, b)| b.mass * self.gravity * self.point_position(q, i, b.com)[1])
            .sum();
        ke + pe
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pendulum(mass: f64, l_com: f64, inertia: f64) -> PlanarChain {
        PlanarChain {
            joints: vec![PlanarJoint {
                kind: JointKind::Revolute,
                parent: None,
                offset: [0.0, 0.0],
                axis_sign: 1.0,
            }],
            bodies: vec![PlanarBody {
                mass,
                com: [0.0, -l_com],
                inertia,
            }],
            gravity: GRAVITY,
        }
    }

    #[test]
    fn pendulum_gravity_torque() {
        // tau_id(q, 0, 0) = m g l sin(q) for a point pendulum hanging down
        let p = pendulum(2.0, 0.5, 0.0);
        for &q in &[0.0, 0.3, -0.7, 1.2] {
            let tau = p.inverse_dynamics(&[q], &[0.0], &[0.0]);
            let expect = 2.0 * GRAVITY * 0.5 * q.sin();
            assert!((tau[0] - expect).abs() < 1e-10, "q={q}");
        }
    }

    #[test]
    fn pendulum_mass_matrix() {
        let p = pendulum(2.0, 0.5, 0.1);
        let m = p.mass_matrix(&[0.4]);
        let expect = 0.1 + 2.0 * 0.5 * 0.5;
        assert!((m[(0, 0)] - expect).abs() < 1e-12);
    }

    #[test]
    fn small_oscillation_period() {
        // semi-implicit Euler at 2 ms should hit the analytic period within 1%
        let (mass, l_com, inertia) = (3.0, 0.4, 0.05);
        let p = pendulum(mass, l_com, inertia);
        let i_pivot = inertia + mass * l_com * l_com;
        let analytic = 2.0 * std::f64::consts::PI * (i_pivot / (mass * GRAVITY * l_com)).sqrt();

        let dt = 0.002;
        let mut q = 0.02;
        let mut qd = 0.0;
        let mut crossings = Vec::new();
        let mut prev_q = q;
        for step in 0..4000 {
            let qdd = p.forward_dynamics(&[q], &[qd], &[0.0]).unwrap()[0];
            qd += qdd * dt;
            q += qd * dt;
            let t = (step + 1) as f64 * dt;
            if prev_q <= 0.0 && q > 0.0 {
                // linear interpolation of the upward zero crossing
                let frac = -prev_q / (q - prev_q);
                crossings.push(t - dt + frac * dt);
            }
            prev_q = q;
        }
        assert!(crossings.len() >= 3);
        let period = (crossings[crossings.len() - 1] - crossings[0])
            / (crossings.len() - 1) as f64;
        assert!(
            (period - analytic).abs() / analytic < 0.01,
            "period {period} vs analytic {analytic}"
        );
    }

    #[test]
    fn double_pendulum_energy_conserved() {
        let chain = PlanarChain {
            joints: vec![
                PlanarJoint {
                    kind: JointKind::Revolute,
                    parent: None,
                    offset: [0.0, 0.0],
                    axis_sign: 1.0,
                },
                PlanarJoint {
                    kind: JointKind::Revolute,
                    parent: Some(0),
                    offset: [0.0, -0.5],
                    axis_sign: 1.0,
                },
            ],
            bodies: vec![
                PlanarBody {
                    mass: 1.0,
                    com: [0.0, -0.25],
                    inertia: 0.02,
                },
                PlanarBody {
                    mass: 0.7,
                    com: [0.0, -0.2],
                    inertia: 0.01,
                },
            ],
            gravity: GRAVITY,
        };
        let mut q = vec![0.9, -0.4];
        let mut qd = vec![0.0, 0.0];
        let e0 = chain.mechanical_energy(&q, &qd);
        let dt = 0.0005;
        for _ in 0..2000 {
            let qdd = chain.forward_dynamics(&q, &qd, &[0.0, 0.0]).unwrap();
            for i in 0..2 {
                qd[i] += qdd[i] * dt;
                q[i] += qd[i] * dt;
            }
        }
        let e1 = chain.mechanical_energy(&q, &qd);
        assert!((e1 - e0).abs() / e0.abs().max(1.0) < 0.01);
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let chain = PlanarChain {
            joints: vec![
                PlanarJoint {
                    kind: JointKind::PrismaticX,
                    parent: None,
                    offset: [0.0, 0.0],
                    axis_sign: 1.0,
                },
                PlanarJoint {
                    kind: JointKind::PrismaticY,
                    parent: Some(0),
                    offset: [0.0, 0.0],
                    axis_sign: 1.0,
                },
                PlanarJoint {
                    kind: JointKind::Revolute,
                    parent: Some(1),
                    offset: [0.0, 0.0],
                    axis_sign: 1.0,
                },
                PlanarJoint {
                    kind: JointKind::Revolute,
                    parent: Some(2),
                    offset: [0.1, -0.2],
                    axis_sign: -1.0,
                },
            ],
            bodies: vec![
                PlanarBody::massless(),
                PlanarBody::massless(),
                PlanarBody {
                    mass: 2.0,
                    com: [0.0, 0.1],
                    inertia: 0.1,
                },
                PlanarBody {
                    mass: 1.0,
                    com: [0.0, -0.15],
                    inertia: 0.05,
                },
            ],
            gravity: GRAVITY,
        };
        let q = [0.3, -0.1, 0.5, -0.8];
        let local = [0.05, -0.3];
        let jac = chain.point_jacobian(&q, 3, local);
        let h = 1e-7;
        for j in 0..4 {
            let mut qp = q;
            qp[j] += h;
            let mut qm = q;
            qm[j] -= h;
            let pp = chain.point_position(&qp, 3, local);
            let pm = chain.point_position(&qm, 3, local);
            let fd = [(pp[0] - pm[0]) / (2.0 * h), (pp[1] - pm[1]) / (2.0 * h)];
            assert!((jac[j][0] - fd[0]).abs() < 1e-6);
            assert!((jac[j][1] - fd[1]).abs() < 1e-6);
        }
    }
}
