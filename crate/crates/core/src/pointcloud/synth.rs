//! Synthetic scene pairs: rigidly moving parts sampled on simple surfaces,
//! with occlusion and sensor jitter on the target.

use std::f64::consts::PI;

use super::{random_subset, FlowField, PointCloud, ScenePair};
use crate::error::{Error, Result};
use crate::numerics::{RealArray, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    Box,
    Sphere,
    Plane,
    /// Each part draws one of the three families.
    Mixed,
}

impl ShapeFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(Self::Box),
            "sphere" => Ok(Self::Sphere),
            "plane" => Ok(Self::Plane),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Config(format!("unknown shape family `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Box => "box",
            Self::Sphere => "sphere",
            Self::Plane => "plane",
            Self::Mixed => "mixed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGenConfig {
    pub n1: usize,
    pub n2: usize,
    pub n_parts: usize,
    pub max_rotation_deg: f64,
    pub max_translation_m: f64,
    pub noise_sigma_m: f64,
    pub occlusion_fraction: f64,
    pub shape: ShapeFamily,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            n1: 256,
            n2: 256,
            n_parts: 1,
            max_rotation_deg: 20.0,
            max_translation_m: 0.3,
            noise_sigma_m: 0.005,
            occlusion_fraction: 0.0,
            shape: ShapeFamily::Box,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n1 == 0 || self.n2 == 0 {
            return bad("scene point counts must be positive");
        }
        if self.n_parts == 0 || self.n_parts > self.n1 {
            return bad("scene.n_parts must be in 1..=n1");
        }
        if !(0.0..1.0).contains(&self.occlusion_fraction) {
            return bad("scene.occlusion_fraction must be in [0, 1)");
        }
        if self.max_rotation_deg < 0.0 || self.max_translation_m < 0.0 || self.noise_sigma_m < 0.0 {
            return bad("motion bounds and noise must be nonnegative");
        }
        Ok(())
    }

    /// Number of source correspondences removed from the target.
    pub fn occluded_count(&self) -> usize {
        (self.occlusion_fraction * self.n1 as f64).round() as usize
    }
}

/// `p -> rotation * p + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self::translation([0.0; 3])
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: t,
        }
    }

    /// Rotation by `angle` radians about a unit `axis` (Rodrigues).
    pub fn axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
        let [x, y, z] = axis;
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + self.translation[i])
    }
}

#[derive(Clone, Debug)]
struct Part {
    family: ShapeFamily,
    center: [f64; 3],
    orient: [[f64; 3]; 3],
    /// Box half extents, sphere radius in `[0]`, plane half sizes in `[0..2]`.
    size: [f64; 3],
}

impl Part {
    fn random(family: ShapeFamily, index: usize, n_parts: usize, rng: &mut RngStream) -> Self {
        let family = match family {
            ShapeFamily::Mixed => [ShapeFamily::Box, ShapeFamily::Sphere, ShapeFamily::Plane][rng.below(3)],
            f => f,
        };
        // Parts sit on a ring wide enough that they rarely overlap.
        let center = if n_parts == 1 {
            [0.0; 3]
        } else {
            let phi = 2.0 * PI * index as f64 / n_parts as f64;
            let radius = 0.6 * n_parts as f64;
            [radius * phi.cos(), radius * phi.sin(), rng.uniform_range(-0.3, 0.3)]
        };
        let size = match family {
            ShapeFamily::Box => std::array::from_fn(|_| rng.uniform_range(0.2, 0.6)),
            ShapeFamily::Sphere => [rng.uniform_range(0.3, 0.6), 0.0, 0.0],
            _ => [rng.uniform_range(0.3, 0.7), rng.uniform_range(0.3, 0.7), 0.0],
        };
        let axis = random_unit(rng);
        let orient = RigidMotion::axis_angle(axis, rng.uniform_range(-PI, PI));
        Self {
            family,
            center,
            orient,
            size,
        }
    }

    fn sample_surface(&self, rng: &mut RngStream) -> [f64; 3] {
        let local = match self.family {
            ShapeFamily::Box => {
                let [a, b, c] = self.size;
                let areas = [b * c, b * c, a * c, a * c, a * b, a * b];
                let total: f64 = areas.iter().sum();
                let mut u = rng.uniform() * total;
                let mut face = 5;
                for (f, &ar) in areas.iter().enumerate() {
                    if u < ar {
                        face = f;
                        break;
                    }
                    u -= ar;
                }
                let s = rng.uniform_range(-1.0, 1.0);
                let t = rng.uniform_range(-1.0, 1.0);
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [sign * a, s * b, t * c],
                    1 => [s * a, sign * b, t * c],
                    _ => [s * a, t * b, sign * c],
                }
            }
            ShapeFamily::Sphere => {
                let d = random_unit(rng);
                d.map(|v| v * self.size[0])
            }
            _ => [
                rng.uniform_range(-self.size[0], self.size[0]),
                rng.uniform_range(-self.size[1], self.size[1]),
                0.0,
            ],
        };
        let r = &self.orient;
        std::array::from_fn(|i| {
            r[i][0] * local[0] + r[i][1] * local[1] + r[i][2] * local[2] + self.center[i]
        })
    }
}

fn random_unit(rng: &mut RngStream) -> [f64; 3] {
    loop {
        let (a, b) = rng.normal_pair();
        let c = rng.normal();
        let n = (a * a + b * b + c * c).sqrt();
        if n > 1e-9 {
            return [a / n, b / n, c / n];
        }
    }
}

/// Random motion within the configured bounds, rotating about `center`.
fn random_motion(cfg: &SceneGenConfig, center: [f64; 3], rng: &mut RngStream) -> RigidMotion {
    let angle = rng.uniform_range(-1.0, 1.0) * cfg.max_rotation_deg.to_radians();
    let rotation = RigidMotion::axis_angle(random_unit(rng), angle);
    let t: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(-1.0, 1.0) * cfg.max_translation_m);
    let rc = RigidMotion { rotation, translation: [0.0; 3] }.apply(center);
    RigidMotion {
        rotation,
        translation: std::array::from_fn(|i| center[i] - rc[i] + t[i]),
    }
}

/// Generates a scene pair with random per-part rigid motions.
pub fn generate_scene(cfg: &SceneGenConfig, rng: &mut RngStream) -> Result<ScenePair> {
    generate(cfg, None, rng)
}

/// Generates a scene pair with the given motion for each part.
pub fn generate_scene_with_motions(cfg: &SceneGenConfig, motions: &[RigidMotion], rng: &mut RngStream) -> Result<ScenePair> {
    if motions.len() != cfg.n_parts {
        return Err(Error::InvalidArgument(format!(
            "{} motions for {} parts",
            motions.len(),
            cfg.n_parts
        )));
    }
    generate(cfg, Some(motions), rng)
}

fn generate(cfg: &SceneGenConfig, motions: Option<&[RigidMotion]>, rng: &mut RngStream) -> Result<ScenePair> {
    cfg.validate()?;
    let parts: Vec<Part> = (0..cfg.n_parts).map(|i| Part::random(cfg.shape, i, cfg.n_parts, rng)).collect();
    let motions: Vec<RigidMotion> = match motions {
        Some(m) => m.to_vec(),
        None => parts.iter().map(|p| random_motion(cfg, p.center, rng)).collect(),
    };

    // Every part gets at least one point; the first parts absorb the remainder.
    let owner: Vec<usize> = (0..cfg.n1).map(|i| i * cfg.n_parts / cfg.n1).collect();

    let mut source = Vec::with_capacity(cfg.n1 * 3);
    let mut flow = Vec::with_capacity(cfg.n1 * 3);
    let mut moved = Vec::with_capacity(cfg.n1);
    for &p in &owner {
        let x = parts[p].sample_surface(rng);
        let xs = x.map(|v| v as f32);
        let y = motions[p].apply(xs.map(|v| v as f64));
        let f: [f32; 3] = std::array::from_fn(|i| (y[i] - xs[i] as f64) as f32);
        // The target is built from the stored values so warping the source
        // by the flow reproduces it exactly when there is no jitter.
        moved.push(std::array::from_fn::<f32, 3, _>(|i| xs[i] + f[i]));
        source.extend_from_slice(&xs);
        flow.extend_from_slice(&f);
    }

    let n_occ = cfg.occluded_count();
    let mut valid_mask = vec![true; cfg.n1];
    for i in random_subset(cfg.n1, n_occ, rng) {
        valid_mask[i] = false;
    }

    let mut kept: Vec<[f32; 3]> = moved
        .iter()
        .zip(&valid_mask)
        .filter_map(|(m, &v)| v.then_some(*m))
        .collect();
    if kept.len() > cfg.n2 {
        let idx = random_subset(kept.len(), cfg.n2, rng);
        kept = idx.iter().map(|&i| kept[i]).collect();
    }
    let mut pad_part = 0;
    while kept.len() < cfg.n2 {
        let x = parts[pad_part].sample_surface(rng);
        let y = motions[pad_part].apply(x);
        kept.push(y.map(|v| v as f32));
        pad_part = (pad_part + 1) % cfg.n_parts;
    }
    if cfg.noise_sigma_m > 0.0 {
        for p in kept.iter_mut() {
            for v in p.iter_mut() {
                *v = (*v as f64 + cfg.noise_sigma_m * rng.normal()) as f32;
            }
        }
    }
    let perm = random_subset(kept.len(), kept.len(), rng);
    let target: Vec<[f32; 3]> = perm.iter().map(|&i| kept[i]).collect();

    ScenePair::new(
        PointCloud::new(RealArray::new(vec![cfg.n1, 3], source)?)?,
        PointCloud::from_points(&target)?,
        FlowField::new(RealArray::new(vec![cfg.n1, 3], flow)?)?,
        valid_mask,
    )
}
