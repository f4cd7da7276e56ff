//! Heightfield terrain.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    Flat,
    Bumpy,
    Obstacles,
}

/// Ground height sampled uniformly over x, linearly interpolated between
/// samples and clamped outside the sampled extent. `x = 0` sits at the
/// center of the field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub kind: TerrainKind,
    pub heightfield: Vec<f64>,
    /// m between samples.
    pub spacing: f64,
    /// Coulomb friction coefficient of the ground (already combined with
    /// any body-friction randomization).
    pub friction: f64,
}

impl Terrain {
    pub fn flat(friction: f64) -> Self {
        Self {
            kind: TerrainKind::Flat,
            heightfield: vec![0.0; 2],
            spacing: 1.0,
            friction,
        }
    }

    /// Linearly interpolated height at `x`; clamps outside the extent.
    pub fn height(&self, x: f64) -> f64 {
        let n = self.heightfield.len();
        if n == 1 {
            return self.heightfield[0];
        }
        let half = (n - 1) as f64 * self.spacing / 2.0;
        let u = ((x + half) / self.spacing).clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n - 2);
        let frac = u - i as f64;
        self.heightfield[i] * (1.0 - frac) + self.heightfield[i + 1] * frac
    }
}

/// Contact summary for one foot over its heel/toe points.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FootContact {
    pub in_contact: bool,
    /// Sum of normal forces, N (>= 0).
    pub normal_force: f64,
    /// Sum of tangential forces, N.
    pub tangential_force: f64,
    /// Deepest penetration, m.
    pub penetration: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ContactReport {
    pub left: FootContact,
    pub right: FootContact,
}

/// Penalty contact parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ContactParams {
    /// Normal spring stiffness, N/m.
    pub kn: f64,
    /// Normal damping, N s/m.
    pub cn: f64,
    /// Tangential viscous gain, N s/m (clamped to the Coulomb cone).
    pub kt: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            kn: 2.0e4,
            cn: 200.0,
            kt: 300.0,
        }
    }
}

/// Penalty force at a single contact point. Returns `(fx, fz, penetration)`;
/// zero when the point is above ground.
pub fn point_contact_force(
    terrain: &Terrain,
    params: &ContactParams,
    pos: [f64; 2],
    vel: [f64; 2],
) -> ([f64; 2], f64) {
    let ground = terrain.height(pos[0]);
    let pen = ground - pos[1];
    if pen <= 0.0 {
        return ([0.0, 0.0], 0.0);
    }
    let fn_ = (params.kn * pen - params.cn * vel[1]).max(0.0);
    let limit = terrain.friction * fn_;
    let ft = (-params.kt * vel[0]).clamp(-limit, limit);
    ([ft, fn_], pen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_is_zero_everywhere() {
        let t = Terrain::flat(1.0);
        for &x in &[-100.0, -1.0, 0.0, 0.33, 57.0] {
            assert_eq!(t.height(x), 0.0);
        }
    }

    #[test]
    fn interpolation_hits_samples_and_midpoints() {
        let t = Terrain {
            kind: TerrainKind::Bumpy,
            heightfield: vec![0.1, 0.3, -0.2],
            spacing: 0.5,
            friction: 1.0,
        };
        // extent is [-0.5, 0.5]
        assert!((t.height(-0.5) - 0.1).abs() < 1e-15);
        assert!((t.height(0.0) - 0.3).abs() < 1e-15);
        assert!((t.height(-0.25) - 0.2).abs() < 1e-15);
        // clamped outside
        assert!((t.height(-9.0) - 0.1).abs() < 1e-15);
        assert!((t.height(9.0) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn contact_force_unilateral_and_in_cone() {
        let t = Terrain::flat(0.8);
        let p = ContactParams::default();
        // above ground: no force
        let (f, pen) = point_contact_force(&t, &p, [0.0, 0.01], [0.0, -1.0]);
        assert_eq!(f, [0.0, 0.0]);
        assert_eq!(pen, 0.0);
        // penetrating, sliding fast: friction saturates the cone
        let (f, pen) = point_contact_force(&t, &p, [0.0, -0.005], [2.0, 0.0]);
        assert!(pen > 0.0);
        assert!(f[1] >= 0.0);
        assert!(f[0].abs() <= 0.8 * f[1] + 1e-12);
        assert!((f[0].abs() - 0.8 * f[1]).abs() < 1e-9);
        // separating quickly: normal force clamps at zero
        let (f, _) = point_contact_force(&t, &p, [0.0, -1e-4], [0.0, 5.0]);
        assert_eq!(f[1], 0.0);
    }
}
