//! Tiled rasterization of textured 2D Gaussians.
//!
//! Every pixel gathers the splats whose `sigma_cut` footprint covers it,
//! sorts the fragments by exact ray/splat depth and composites them front to
//! back. The backward pass recomputes the same fragments and differentiates
//! the full dependency graph; it also accumulates the per-splat absolute
//! positional-gradient statistic that drives texture upscaling.

mod backward;
mod composite;
mod forward;

pub use backward::backward;
pub use composite::{composite_pixel, composite_pixel_with, shade_fragment, shade_fragment_with};
pub use forward::{render, render_tinted};

use crate::geometry::DEFAULT_SIGMA_CUT;
use crate::image::Image;

/// Which appearance terms are rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RenderMode {
    Full,
    /// Texture color residual forced to zero and texture alpha to one.
    NoTexture,
    /// Spherical-harmonic base color forced to zero.
    NoBaseColor,
    /// Both of the above: zero color, Gaussian alpha only.
    AlphaOnly,
}

impl RenderMode {
    pub fn uses_texture(self) -> bool {
        matches!(self, RenderMode::Full | RenderMode::NoBaseColor)
    }

    pub fn uses_base_color(self) -> bool {
        matches!(self, RenderMode::Full | RenderMode::NoTexture)
    }

    pub fn name(self) -> &'static str {
        match self {
            RenderMode::Full => "full",
            RenderMode::NoTexture => "no-texture",
            RenderMode::NoBaseColor => "no-base-color",
            RenderMode::AlphaOnly => "alpha-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            RenderMode::Full,
            RenderMode::NoTexture,
            RenderMode::NoBaseColor,
            RenderMode::AlphaOnly,
        ]
        .into_iter()
        .find(|m| m.name() == s)
    }
}

/// Rasterizer constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Footprint radius in standard deviations.
    pub sigma_cut: f64,
    /// Fragments with alpha below this are skipped.
    pub alpha_min: f64,
    /// Upper clamp on fragment alpha.
    pub alpha_max: f64,
    /// Compositing stops once transmittance falls below this.
    pub t_min: f64,
    pub tile_size: u32,
    /// Local radius (in standard deviations) mapped onto the texture's
    /// `[-1, 1]` domain.
    pub texture_extent_sigma: f64,
    /// Record a hash of every discrete branch taken while rendering.
    pub track_branches: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            sigma_cut: DEFAULT_SIGMA_CUT,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.999,
            t_min: 1e-4,
            tile_size: 16,
            texture_extent_sigma: 1.0,
            track_branches: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Composited color clamped to `[0, 1]`.
    pub image: Image,
    /// `1 - final transmittance` per pixel.
    pub alpha_map: Vec<f64>,
    /// Number of fragments composited over the whole image.
    pub fragments: u64,
    /// Hash of fragment lists, texel cells and clamp states; only set when
    /// [`RenderConfig::track_branches`] is on. Two renders with equal
    /// signatures lie on the same smooth piece of the image function.
    pub branch_signature: Option<u64>,
}

/// Per-splat selection statistic: sum over covered pixels of the norm of the
/// per-pixel positional gradient through alpha, and the number of pixels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientStats {
    pub accum_abs_grad: Vec<f64>,
    pub pixel_count: Vec<u64>,
}

impl GradientStats {
    pub fn new(n: usize) -> Self {
        Self {
            accum_abs_grad: vec![0.0; n],
            pixel_count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.accum_abs_grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accum_abs_grad.is_empty()
    }

    /// Zeroes every accumulator.
    pub fn reset(&mut self) {
        self.accum_abs_grad.iter_mut().for_each(|x| *x = 0.0);
        self.pixel_count.iter_mut().for_each(|x| *x = 0);
    }

    pub fn accumulate(&mut self, other: &GradientStats) {
        assert_eq!(self.len(), other.len(), "stats for different scenes");
        for (a, b) in self.accum_abs_grad.iter_mut().zip(&other.accum_abs_grad) {
            *a += b;
        }
        for (a, b) in self.pixel_count.iter_mut().zip(&other.pixel_count) {
            *a += b;
        }
    }

    /// Mean per-pixel magnitude for splat `i` (zero if never covered).
    pub fn mean(&self, i: usize) -> f64 {
        match self.pixel_count[i] {
            0 => 0.0,
            n => self.accum_abs_grad[i] / n as f64,
        }
    }
}

/// Zeroes `stats` in place.
pub fn reset_stats(stats: &mut GradientStats) {
    stats.reset();
}

/// Loss gradient with respect to every trainable parameter.
///
/// Texel gradients are indexed by global texel number (atlas offset / 4 plus
/// the row-major texel index inside the entry).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneGradients {
    pub d_mu: Vec<[f64; 3]>,
    pub d_scale: Vec<[f64; 2]>,
    pub d_rot: Vec<[f64; 4]>,
    pub d_opacity_logit: Vec<f64>,
    /// `bands` entries per splat, splat-major.
    pub d_sh: Vec<[f64; 3]>,
    pub d_rgb_texels: Vec<[f64; 3]>,
    pub d_alpha_texels: Vec<f64>,
}

impl SceneGradients {
    pub fn zeros(n: usize, bands: usize, texels: usize) -> Self {
        Self {
            d_mu: vec![[0.0; 3]; n],
            d_scale: vec![[0.0; 2]; n],
            d_rot: vec![[0.0; 4]; n],
            d_opacity_logit: vec![0.0; n],
            d_sh: vec![[0.0; 3]; n * bands],
            d_rgb_texels: vec![[0.0; 3]; texels],
            d_alpha_texels: vec![0.0; texels],
        }
    }

    pub fn is_finite(&self) -> bool {
        let flat = self
            .d_mu
            .iter()
            .flatten()
            .chain(self.d_scale.iter().flatten())
            .chain(self.d_rot.iter().flatten())
            .chain(self.d_opacity_logit.iter())
            .chain(self.d_sh.iter().flatten())
            .chain(self.d_rgb_texels.iter().flatten())
            .chain(self.d_alpha_texels.iter());
        flat.into_iter().all(|x| x.is_finite())
    }
}
