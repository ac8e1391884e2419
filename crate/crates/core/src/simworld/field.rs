use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ScenarioSpec;
use crate::ekf::rotation_matrix;

/// Smooth synthetic magnetic field: a constant background plus Gaussian bumps.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    pub centers: Vec<Vector2<f64>>,
    /// World-frame amplitude of each bump [uT].
    pub moments: Vec<Vector3<f64>>,
    /// Bump radius [m].
    pub length_scale: f64,
    /// World-frame background field [uT].
    pub background: Vector3<f64>,
}

impl FieldModel {
    pub fn constant(background: Vector3<f64>) -> Self {
        Self { centers: Vec::new(), moments: Vec::new(), length_scale: 1.0, background }
    }

    pub fn world_at(&self, p: Vector2<f64>) -> Vector3<f64> {
        let inv = 1.0 / (2.0 * self.length_scale * self.length_scale);
        self.centers
            .iter()
            .zip(&self.moments)
            .fold(self.background, |acc, (c, m)| acc + m * (-(p - c).norm_squared() * inv).exp())
    }
}

/// Field in the gravity-aligned body frame of a sensor at `p` with heading `psi`.
pub fn field_at(field: &FieldModel, p: Vector2<f64>, psi: f64) -> Vector3<f64> {
    let w = field.world_at(p);
    let h = rotation_matrix(psi).transpose() * Vector2::new(w.x, w.y);
    Vector3::new(h.x, h.y, w.z)
}

/// Places bumps along the first lap of the scenario path.
///
/// Bumps are spread evenly over the first `coverage` fraction of the lap, each
/// pushed sideways by up to `lateral_offset`, with amplitudes drawn from
/// `N(0, strength^2)` per component.
pub fn make_field(seed: u64, spec: &ScenarioSpec) -> FieldModel {
    let f = &spec.field;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lap = spec.trajectory.lap();
    let span = lap.length() * f.coverage;
    let count = match f.anomaly_count {
        Some(n) => n,
        None => (span / f.anomaly_spacing).floor().max(0.0) as usize,
    };
    let mut centers = Vec::with_capacity(count);
    let mut moments = Vec::with_capacity(count);
    for k in 0..count {
        let s = (k as f64 + 0.5) * span / count as f64;
        let (p, dir) = lap.point(s);
        let normal = Vector2::new(-dir.y, dir.x);
        let offset: f64 = rng.gen_range(-1.0..=1.0) * f.lateral_offset;
        centers.push(p + normal * offset);
        let m: Vector3<f64> = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * f.anomaly_strength);
        moments.push(m);
    }
    FieldModel { centers, moments, length_scale: f.length_scale, background: f.background }
}
