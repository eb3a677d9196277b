//! Procedural ground-truth scenes rendered from a ring of cameras.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Error, Result};
use crate::geometry::Camera;
use crate::model::{logit, sh::SH_C0, sh::SH_OFFSET, Gaussian2D, Scene};
use crate::raster::{render, RenderConfig, RenderMode};
use crate::train::dataset::{Dataset, View};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Single-color card; the background matches the card.
    Flat,
    /// Two-color checkerboard card.
    Checker,
    /// Card of thin vertical stripes.
    Stripes,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [SynthKind::Flat, SynthKind::Checker, SynthKind::Stripes];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Flat => "flat",
            SynthKind::Checker => "checker",
            SynthKind::Stripes => "stripes",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                domain(format!(
                    "unknown scene '{s}' (expected flat, checker or stripes)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_views: usize,
    /// Square image side in pixels.
    pub resolution: u32,
    pub seed: u64,
    /// Splats per card side.
    pub grid: usize,
    /// Checker squares or stripe pairs per card side.
    pub cells: usize,
    /// Card half-width in world units.
    pub half_size: f64,
    pub camera_distance: f64,
    /// Half-angle of the camera arc, radians.
    pub arc: f64,
    pub fov_y: f64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, n_views: usize, resolution: u32, seed: u64) -> Self {
        Self {
            kind,
            n_views,
            resolution,
            seed,
            grid: 48,
            cells: 4,
            half_size: 1.0,
            camera_distance: 3.0,
            arc: 35f64.to_radians(),
            fov_y: 0.9,
        }
    }
}

fn pattern(kind: SynthKind, cells: usize, colors: &[[f64; 3]; 2], x: f64, y: f64) -> [f64; 3] {
    let cell = |t: f64| ((t * cells as f64).floor() as i64).rem_euclid(2);
    match kind {
        SynthKind::Flat => colors[0],
        SynthKind::Checker => colors[((cell(x) + cell(y)) % 2) as usize],
        SynthKind::Stripes => colors[cell(2.0 * x) as usize],
    }
}

/// Builds the ground-truth card scene and renders it from `n_views` cameras
/// spread over an arc in front of it.
pub fn synth_dataset(spec: &SynthSpec) -> Result<(Dataset, Scene)> {
    if spec.n_views < 2 {
        return Err(domain(format!(
            "synth needs at least 2 views, got {}",
            spec.n_views
        )));
    }
    if spec.resolution == 0 || spec.grid == 0 || spec.cells == 0 {
        return Err(domain("synth resolution, grid and cells must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let colors = match spec.kind {
        SynthKind::Flat => [a; 2],
        _ => {
            // keep the two colors well apart
            [a, a.map(|c| if c > 0.5 { c - 0.4 } else { c + 0.4 })]
        }
    };
    let background = match spec.kind {
        SynthKind::Flat => colors[0],
        _ => [0.05; 3],
    };

    let g = spec.grid;
    // a little depth jitter keeps the front-to-back order of overlapping
    // splats stable under small perturbations of their centers
    let jitter = 1e-3 * spec.half_size;
    let step = 2.0 * spec.half_size / g as f64;
    let mut gaussians = Vec::with_capacity(g * g);
    for j in 0..g {
        for i in 0..g {
            let x = -spec.half_size + (i as f64 + 0.5) * step;
            let y = -spec.half_size + (j as f64 + 0.5) * step;
            let c = pattern(
                spec.kind,
                spec.cells,
                &colors,
                (x + spec.half_size) / (2.0 * spec.half_size),
                (y + spec.half_size) / (2.0 * spec.half_size),
            );
            gaussians.push(Gaussian2D {
                mu: Vec3::new(x, y, rng.random_range(-jitter..jitter)),
                scale: [0.6 * step, 0.6 * step],
                rot: [1.0, 0.0, 0.0, 0.0],
                opacity_logit: logit(0.98),
                sh: vec![c.map(|v| (v - SH_OFFSET) / SH_C0)],
            });
        }
    }
    let scene = Scene::new(gaussians, 0, background)?;

    let phase = rng.random_range(-0.05..0.05);
    let cfg = RenderConfig::default();
    let views = (0..spec.n_views)
        .map(|k| {
            let t = k as f64 / (spec.n_views - 1) as f64;
            let theta = -spec.arc + 2.0 * spec.arc * t + phase;
            let eye = Vec3::new(theta.sin(), -0.15, -theta.cos()) * spec.camera_distance;
            let camera = Camera::look_at(
                eye,
                Vec3::zeros(),
                Vec3::new(0.0, -1.0, 0.0),
                spec.fov_y,
                spec.resolution,
                spec.resolution,
            )?;
            let image = render(&scene, &camera, RenderMode::Full, &cfg).image;
            Ok(View {
                file: format!("view_{k:03}.ppm"),
                camera,
                image,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset::new(views)?, scene))
}
