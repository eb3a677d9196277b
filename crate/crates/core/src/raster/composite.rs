//! Per-fragment shading and front-to-back compositing.

use super::{RenderConfig, RenderMode};
use crate::geometry::RaySplatHit;
use crate::model::{eval_sh, Gaussian2D};
use crate::texture::{Bilinear, TexelSource};
use crate::Vec3;

/// Everything the backward pass needs to know about one shaded fragment.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shade {
    pub gauss: f64,
    /// Texture lookup stencil; `None` when textures are disabled.
    pub stencil: Option<Bilinear>,
    /// Sampled alpha after clamping to `[0, 1]`.
    pub tex_alpha: f64,
    /// Whether the raw sampled alpha was inside `[0, 1]`.
    pub tex_alpha_free: bool,
    pub alpha_raw: f64,
    pub alpha: f64,
    pub color: [f64; 3],
}

impl Shade {
    pub fn alpha_clamped(&self, cfg: &RenderConfig) -> bool {
        self.alpha_raw > cfg.alpha_max
    }
}

/// Shades local coordinates `(u, v)` given the splat's opacity and base
/// color. `tex` is `None` for texture-free shading; `tex_rgb` switches the
/// color residual on or off independently of the alpha texture.
#[inline]
pub(crate) fn shade_local<T: TexelSource + ?Sized>(
    opacity: f64,
    base: [f64; 3],
    tex: Option<&T>,
    tex_rgb: bool,
    u: f64,
    v: f64,
    cfg: &RenderConfig,
) -> Shade {
    let gauss = (-0.5 * (u * u + v * v)).exp();
    let (stencil, rgb, tex_alpha, tex_alpha_free) = match tex {
        Some(t) => {
            let e = cfg.texture_extent_sigma;
            let s = Bilinear::new(u / e, v / e, t.width(), t.height());
            let raw = s.sample(t);
            let rgb = if tex_rgb {
                [raw[0], raw[1], raw[2]]
            } else {
                [0.0; 3]
            };
            let free = (0.0..=1.0).contains(&raw[3]);
            (Some(s), rgb, raw[3].clamp(0.0, 1.0), free)
        }
        None => (None, [0.0; 3], 1.0, true),
    };
    let alpha_raw = opacity * gauss * tex_alpha;
    Shade {
        gauss,
        stencil,
        tex_alpha,
        tex_alpha_free,
        alpha_raw,
        alpha: alpha_raw.clamp(0.0, cfg.alpha_max),
        color: [base[0] + rgb[0], base[1] + rgb[1], base[2] + rgb[2]],
    }
}

/// Color and alpha of one fragment with the default rasterizer constants.
pub fn shade_fragment<T: TexelSource + ?Sized>(
    g: &Gaussian2D,
    tex: &T,
    hit: &RaySplatHit,
    view_dir: &Vec3,
    mode: RenderMode,
) -> ([f64; 3], f64) {
    shade_fragment_with(g, tex, hit, view_dir, mode, &RenderConfig::default())
}

pub fn shade_fragment_with<T: TexelSource + ?Sized>(
    g: &Gaussian2D,
    tex: &T,
    hit: &RaySplatHit,
    view_dir: &Vec3,
    mode: RenderMode,
    cfg: &RenderConfig,
) -> ([f64; 3], f64) {
    let base = if mode.uses_base_color() {
        eval_sh(&g.sh, view_dir)
    } else {
        [0.0; 3]
    };
    let tex = mode.uses_texture().then_some(tex);
    let s = shade_local(g.opacity(), base, tex, true, hit.u, hit.v, cfg);
    (s.color, s.alpha)
}

/// Running front-to-back compositor.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Accum {
    pub color: [f64; 3],
    pub transmittance: f64,
    pub used: usize,
}

impl Accum {
    pub fn new() -> Self {
        Self {
            color: [0.0; 3],
            transmittance: 1.0,
            used: 0,
        }
    }

    /// Adds one fragment; returns `false` once compositing should stop.
    #[inline]
    pub fn push(&mut self, c: [f64; 3], alpha: f64, t_min: f64) -> bool {
        let w = alpha * self.transmittance;
        for ch in 0..3 {
            self.color[ch] += c[ch] * w;
        }
        self.transmittance *= 1.0 - alpha;
        self.used += 1;
        self.transmittance >= t_min
    }

    pub fn finish(&self, background: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|ch| self.color[ch] + background[ch] * self.transmittance)
    }
}

/// Front-to-back compositing with the default early-termination threshold.
pub fn composite_pixel(fragments: &[([f64; 3], f64)], background: [f64; 3]) -> [f64; 3] {
    composite_pixel_with(fragments, background, RenderConfig::default().t_min)
}

/// `sum_i c_i a_i prod_{j<i} (1 - a_j) + bg prod_i (1 - a_i)`, stopping after
/// the fragment that drops transmittance below `t_min`.
pub fn composite_pixel_with(
    fragments: &[([f64; 3], f64)],
    background: [f64; 3],
    t_min: f64,
) -> [f64; 3] {
    let mut acc = Accum::new();
    for &(c, a) in fragments {
        if !acc.push(c, a, t_min) {
            break;
        }
    }
    acc.finish(background)
}
