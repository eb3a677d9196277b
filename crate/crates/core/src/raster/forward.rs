//! Forward pass: splat preparation, tile binning and per-pixel compositing.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::Matrix4;
use rayon::prelude::*;

use super::composite::{shade_local, Accum, Shade};
use super::{RenderConfig, RenderMode, RenderOutput};
use crate::geometry::{bbox_from_transform, intersect, splat_to_screen, Camera, ScreenRect};
use crate::image::Image;
use crate::model::{eval_sh, Scene};
use crate::texture::TextureAtlas;
use crate::Vec3;

/// How per-splat color is formed.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Appearance<'a> {
    Mode(RenderMode),
    /// Flat per-splat colors with the alpha texture still applied.
    Tint(&'a [[f64; 3]]),
}

impl Appearance<'_> {
    fn uses_texture(&self) -> bool {
        match self {
            Appearance::Mode(m) => m.uses_texture(),
            Appearance::Tint(_) => true,
        }
    }

    fn uses_texture_rgb(&self) -> bool {
        matches!(self, Appearance::Mode(m) if m.uses_texture())
    }
}

/// A splat that survived culling, ready for per-pixel intersection.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub id: u32,
    pub m: Matrix4<f64>,
    pub rect: ScreenRect,
    pub opacity: f64,
    pub base: [f64; 3],
    pub view_dir: Vec3,
}

pub(crate) fn prepare(
    scene: &Scene,
    cam: &Camera,
    look: Appearance,
    cfg: &RenderConfig,
) -> Vec<Prepared> {
    scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let frame = g.frame().ok()?;
            let m = splat_to_screen(cam, &frame);
            let rect = bbox_from_transform(&m, cam.width(), cam.height(), cfg.sigma_cut)?;
            let view_dir = cam.view_dir(&g.mu);
            let base = match look {
                Appearance::Mode(mode) if mode.uses_base_color() => eval_sh(&g.sh, &view_dir),
                Appearance::Mode(_) => [0.0; 3],
                Appearance::Tint(t) => t[i],
            };
            Some(Prepared {
                id: i as u32,
                m,
                rect,
                opacity: g.opacity(),
                base,
                view_dir,
            })
        })
        .collect()
}

/// Prepared-splat indices overlapping each tile, tiles in row-major order.
pub(crate) struct Tiles {
    pub size: u32,
    pub nx: u32,
    pub bins: Vec<Vec<u32>>,
}

impl Tiles {
    pub fn build(preps: &[Prepared], width: u32, height: u32, size: u32) -> Self {
        let size = size.max(1);
        let nx = width.div_ceil(size);
        let ny = height.div_ceil(size);
        let mut bins = vec![Vec::new(); (nx * ny) as usize];
        for (k, p) in preps.iter().enumerate() {
            let r = p.rect;
            if r.x0 >= r.x1 || r.y0 >= r.y1 {
                continue;
            }
            for ty in r.y0 / size..=(r.y1 - 1) / size {
                for tx in r.x0 / size..=(r.x1 - 1) / size {
                    bins[(ty * nx + tx) as usize].push(k as u32);
                }
            }
        }
        Self { size, nx, bins }
    }

    pub fn rect(&self, t: usize, width: u32, height: u32) -> ScreenRect {
        let (tx, ty) = (t as u32 % self.nx, t as u32 / self.nx);
        ScreenRect {
            x0: tx * self.size,
            y0: ty * self.size,
            x1: ((tx + 1) * self.size).min(width),
            y1: ((ty + 1) * self.size).min(height),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Fragment {
    /// Position of the splat in the tile bin.
    pub slot: u32,
    pub id: u32,
    pub depth: f64,
    pub u: f64,
    pub v: f64,
    pub shade: Shade,
}

/// Context shared by every pixel of one pass.
pub(crate) struct PassContext<'a> {
    pub preps: &'a [Prepared],
    pub atlas: &'a TextureAtlas,
    pub cfg: &'a RenderConfig,
    pub textured: bool,
    pub tex_rgb: bool,
}

impl<'a> PassContext<'a> {
    pub fn new(
        preps: &'a [Prepared],
        scene: &'a Scene,
        look: Appearance,
        cfg: &'a RenderConfig,
    ) -> Self {
        Self {
            preps,
            atlas: &scene.textures,
            cfg,
            textured: look.uses_texture(),
            tex_rgb: look.uses_texture_rgb(),
        }
    }

    /// Collects the fragments of pixel `(x, y)` sorted front to back.
    pub fn gather(&self, bin: &[u32], x: u32, y: u32, out: &mut Vec<Fragment>) {
        out.clear();
        let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let cut2 = self.cfg.sigma_cut * self.cfg.sigma_cut;
        for (slot, &k) in bin.iter().enumerate() {
            let p = &self.preps[k as usize];
            if !p.rect.contains(x, y) {
                continue;
            }
            let hit = intersect(&p.m, px, py);
            if !hit.valid || hit.u * hit.u + hit.v * hit.v > cut2 {
                continue;
            }
            let tex = self.textured.then(|| self.atlas.view(p.id as usize));
            let shade = shade_local(
                p.opacity,
                p.base,
                tex.as_ref(),
                self.tex_rgb,
                hit.u,
                hit.v,
                self.cfg,
            );
            if shade.alpha < self.cfg.alpha_min {
                continue;
            }
            out.push(Fragment {
                slot: slot as u32,
                id: p.id,
                depth: hit.depth,
                u: hit.u,
                v: hit.v,
                shade,
            });
        }
        out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
    }
}

/// Composites sorted fragments; returns the accumulator (its `used` field
/// counts the fragments that contributed).
pub(crate) fn composite_fragments(frags: &[Fragment], t_min: f64) -> Accum {
    let mut acc = Accum::new();
    for f in frags {
        if !acc.push(f.shade.color, f.shade.alpha, t_min) {
            break;
        }
    }
    acc
}

/// Hashes every discrete decision that shaped one pixel.
pub(crate) fn hash_pixel(
    h: &mut DefaultHasher,
    frags: &[Fragment],
    used: usize,
    rgb: [f64; 3],
    cfg: &RenderConfig,
) {
    used.hash(h);
    for (n, f) in frags.iter().enumerate() {
        f.id.hash(h);
        if n < used {
            f.shade.alpha_clamped(cfg).hash(h);
            f.shade.tex_alpha_free.hash(h);
            if let Some(s) = f.shade.stencil {
                (s.x0, s.y0, s.dfx_du != 0.0, s.dfy_dv != 0.0).hash(h);
            }
        }
    }
    for c in rgb {
        (0.0..=1.0).contains(&c).hash(h);
    }
}

struct TileResult {
    color: Vec<[f64; 3]>,
    alpha: Vec<f64>,
    fragments: u64,
    hash: u64,
}

fn render_with(scene: &Scene, cam: &Camera, look: Appearance, cfg: &RenderConfig) -> RenderOutput {
    let (w, h) = (cam.width(), cam.height());
    let preps = prepare(scene, cam, look, cfg);
    let tiles = Tiles::build(&preps, w, h, cfg.tile_size);
    let ctx = PassContext::new(&preps, scene, look, cfg);

    let results: Vec<TileResult> = (0..tiles.bins.len())
        .into_par_iter()
        .map(|t| {
            let r = tiles.rect(t, w, h);
            let bin = &tiles.bins[t];
            let mut frags = Vec::new();
            let mut hasher = DefaultHasher::new();
            let mut out = TileResult {
                color: Vec::with_capacity(((r.x1 - r.x0) * (r.y1 - r.y0)) as usize),
                alpha: Vec::new(),
                fragments: 0,
                hash: 0,
            };
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    ctx.gather(bin, x, y, &mut frags);
                    let acc = composite_fragments(&frags, cfg.t_min);
                    let rgb = acc.finish(scene.background);
                    if cfg.track_branches {
                        hash_pixel(&mut hasher, &frags, acc.used, rgb, cfg);
                    }
                    out.color.push(rgb.map(|c| c.clamp(0.0, 1.0)));
                    out.alpha.push(1.0 - acc.transmittance);
                    out.fragments += acc.used as u64;
                }
            }
            out.hash = hasher.finish();
            out
        })
        .collect();

    let mut image = Image::new(w, h);
    let mut alpha_map = vec![0.0; (w * h) as usize];
    let mut fragments = 0;
    let mut sig = DefaultHasher::new();
    for (t, res) in results.iter().enumerate() {
        let r = tiles.rect(t, w, h);
        let mut k = 0;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                image.set(x, y, res.color[k]);
                alpha_map[(y * w + x) as usize] = res.alpha[k];
                k += 1;
            }
        }
        fragments += res.fragments;
        res.hash.hash(&mut sig);
    }
    RenderOutput {
        image,
        alpha_map,
        fragments,
        branch_signature: cfg.track_branches.then(|| sig.finish()),
    }
}

/// Renders `scene` from `cam`.
pub fn render(scene: &Scene, cam: &Camera, mode: RenderMode, cfg: &RenderConfig) -> RenderOutput {
    render_with(scene, cam, Appearance::Mode(mode), cfg)
}

/// Renders each splat in a flat color (`tints[i]`), keeping geometry and the
/// alpha textures. Used for visualizing per-splat attributes.
pub fn render_tinted(
    scene: &Scene,
    cam: &Camera,
    tints: &[[f64; 3]],
    cfg: &RenderConfig,
) -> RenderOutput {
    assert_eq!(tints.len(), scene.len(), "one tint per splat");
    render_with(scene, cam, Appearance::Tint(tints), cfg)
}
