//! Scene container: splat parameters, their textures and persistence.

mod io;
pub mod sh;

pub use io::{
    decode_scene, encode_scene, load_scene, save_scene, write_atomic, ByteReader, SectionWriter,
};
pub use sh::eval_sh;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Result};
use crate::geometry::{build_local_frame, LocalFrame};
use crate::texture::TextureAtlas;
use crate::Vec3;

/// One flat Gaussian splat.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian2D {
    pub mu: Vec3,
    /// Tangent-plane standard deviations `(s_x, s_y)`, world units.
    pub scale: [f64; 2],
    /// Unit quaternion `(w, x, y, z)`.
    pub rot: [f64; 4],
    pub opacity_logit: f64,
    /// SH coefficients, one RGB triple per basis function.
    pub sh: Vec<[f64; 3]>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Gaussian2D {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn frame(&self) -> Result<LocalFrame> {
        build_local_frame(self.mu, self.rot, self.scale)
    }

    /// Rescales `rot` to unit norm.
    pub fn renormalize_rotation(&mut self) {
        let n = self.rot.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            self.rot = self.rot.map(|x| x / n);
        } else {
            self.rot = [1.0, 0.0, 0.0, 0.0];
        }
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian2D>,
    pub textures: TextureAtlas,
    pub sh_degree: u32,
    pub background: [f64; 3],
}

impl Scene {
    /// Scene with neutral 1x1 textures for every splat.
    pub fn new(gaussians: Vec<Gaussian2D>, sh_degree: u32, background: [f64; 3]) -> Result<Self> {
        let textures = TextureAtlas::neutral(gaussians.len());
        let scene = Self {
            gaussians,
            textures,
            sh_degree,
            background,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn empty(sh_degree: u32, background: [f64; 3]) -> Self {
        Self {
            gaussians: Vec::new(),
            textures: TextureAtlas::default(),
            sh_degree,
            background,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > sh::MAX_SH_DEGREE {
            return Err(domain(format!("sh degree {} exceeds 3", self.sh_degree)));
        }
        if self.textures.len() != self.gaussians.len() {
            return Err(domain(format!(
                "{} textures for {} gaussians",
                self.textures.len(),
                self.gaussians.len()
            )));
        }
        let bands = sh::num_coeffs(self.sh_degree);
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.sh.len() != bands {
                return Err(domain(format!(
                    "gaussian {i} has {} sh coefficients, expected {bands}",
                    g.sh.len()
                )));
            }
            if !(g.scale[0] > 0.0 && g.scale[1] > 0.0) || !g.scale.iter().all(|s| s.is_finite()) {
                return Err(domain(format!(
                    "gaussian {i} has non-positive scale {:?}",
                    g.scale
                )));
            }
            let norm = g.rot.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-3 {
                return Err(domain(format!("gaussian {i} rotation norm {norm}")));
            }
            if !g.mu.iter().all(|x| x.is_finite()) || !g.opacity_logit.is_finite() {
                return Err(domain(format!("gaussian {i} has non-finite parameters")));
            }
        }
        Ok(())
    }
}

/// Random initialization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Scale range as a fraction of the bounds diagonal.
    pub scale_min: f64,
    pub scale_max: f64,
    pub opacity: f64,
    pub background: [f64; 3],
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            scale_min: 0.02,
            scale_max: 0.08,
            opacity: 0.1,
            background: [0.0; 3],
        }
    }
}

/// Seeded random scene: centers uniform in `bounds`, log-uniform scales,
/// uniformly random rotations, gray color and neutral 1x1 textures.
pub fn init_scene(count: usize, bounds: Aabb, rng_seed: u64, sh_degree: u32) -> Result<Scene> {
    init_scene_with(count, bounds, rng_seed, sh_degree, &InitConfig::default())
}

pub fn init_scene_with(
    count: usize,
    bounds: Aabb,
    rng_seed: u64,
    sh_degree: u32,
    cfg: &InitConfig,
) -> Result<Scene> {
    if count == 0 {
        return Err(domain("init_scene needs at least one gaussian"));
    }
    if !(cfg.scale_min > 0.0 && cfg.scale_max >= cfg.scale_min) {
        return Err(domain("invalid initial scale range"));
    }
    if sh_degree > sh::MAX_SH_DEGREE {
        return Err(domain(format!("sh degree {sh_degree} exceeds 3")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let diag = bounds.diagonal().max(1e-9);
    let (lo, hi) = ((cfg.scale_min * diag).ln(), (cfg.scale_max * diag).ln());
    let bands = sh::num_coeffs(sh_degree);
    let gaussians = (0..count)
        .map(|_| {
            let mu = Vec3::from_fn(|k, _| {
                let (a, b) = (bounds.min[k], bounds.max[k]);
                if b > a {
                    rng.random_range(a..b)
                } else {
                    a
                }
            });
            let mut log_s = || {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            };
            let scale = [log_s().exp(), log_s().exp()];
            let rot = random_rotation(&mut rng);
            Gaussian2D {
                mu,
                scale,
                rot,
                opacity_logit: logit(cfg.opacity),
                sh: vec![[0.0; 3]; bands],
            }
        })
        .collect();
    Scene::new(gaussians, sh_degree, cfg.background)
}

/// Uniform sample on the unit 3-sphere by rejection from the 4-ball.
fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n2: f64 = q.iter().map(|x| x * x).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return q.map(|x| x / n);
        }
    }
}
