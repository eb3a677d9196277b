//! Shared test fixtures: random desk-scale scenes, a brute-force renderer
//! and a finite-difference gradient checker.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texsplat::geometry::{build_local_frame, ray_splat_uv};
use texsplat::image::Image;
use texsplat::model::sh::num_coeffs;
use texsplat::raster::{backward, composite_pixel_with, render, shade_fragment_with};
use texsplat::texture::{atlas_rebuild, Texture};
use texsplat::{Camera, Gaussian2D, RenderConfig, RenderMode, Scene, SceneGradients, Vec3};

pub fn camera(size: u32) -> Camera {
    Camera::look_at(
        Vec3::new(0.3, -0.2, -3.0),
        Vec3::zeros(),
        Vec3::new(0.0, -1.0, 0.0),
        0.8,
        size,
        size,
    )
    .unwrap()
}

pub struct SceneSpec {
    pub splats: usize,
    pub sh_degree: u32,
    /// Largest texture side; sizes are drawn from powers of two up to this.
    pub max_texture: u32,
    /// Opacity range as probabilities.
    pub opacity: (f64, f64),
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            splats: 5,
            sh_degree: 0,
            max_texture: 4,
            opacity: (0.2, 0.8),
        }
    }
}

/// Random rotation tilted by at most ~50 degrees away from facing the camera.
fn tilted_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-0.3..0.3),
    );
    let axis = axis.normalize();
    let angle: f64 = rng.random_range(-0.9..0.9);
    let (s, c) = (0.5 * angle).sin_cos();
    [c, s * axis.x, s * axis.y, s * axis.z]
}

pub fn random_scene(seed: u64, spec: &SceneSpec) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bands = num_coeffs(spec.sh_degree);
    let (lo, hi) = (
        spec.opacity.0.ln() - (1.0 - spec.opacity.0).ln(),
        spec.opacity.1.ln() - (1.0 - spec.opacity.1).ln(),
    );
    let gaussians: Vec<Gaussian2D> = (0..spec.splats)
        .map(|_| Gaussian2D {
            mu: Vec3::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.5..0.5),
            ),
            scale: [rng.random_range(0.15..0.45), rng.random_range(0.15..0.45)],
            rot: tilted_rotation(&mut rng),
            opacity_logit: rng.random_range(lo..hi),
            sh: (0..bands)
                .map(|b| {
                    let amp = if b == 0 { 0.5 } else { 0.12 };
                    std::array::from_fn(|_| rng.random_range(-amp..amp))
                })
                .collect(),
        })
        .collect();
    let sizes: Vec<u32> =
        std::iter::successors(Some(1u32), |s| (s * 2 <= spec.max_texture).then_some(s * 2))
            .collect();
    let textures: Vec<Texture> = (0..spec.splats)
        .map(|_| {
            let w = sizes[rng.random_range(0..sizes.len())];
            let h = sizes[rng.random_range(0..sizes.len())];
            let n = (w * h) as usize;
            let rgb = (0..n)
                .map(|_| std::array::from_fn(|_| rng.random_range(-0.15..0.15)))
                .collect();
            let alpha = (0..n).map(|_| rng.random_range(0.35..0.95)).collect();
            Texture::new(w, h, rgb, alpha).unwrap()
        })
        .collect();
    let background = std::array::from_fn(|_| rng.random_range(0.0..0.6));
    let mut scene = Scene::new(gaussians, spec.sh_degree, background).unwrap();
    scene.textures = atlas_rebuild(&textures);
    scene
}

/// Every pixel against every splat, using only the public per-fragment
/// functions.
pub fn brute_force_render(
    scene: &Scene,
    cam: &Camera,
    mode: RenderMode,
    cfg: &RenderConfig,
) -> Image {
    let mut img = Image::new(cam.width(), cam.height());
    for y in 0..cam.height() {
        for x in 0..cam.width() {
            let mut frags = Vec::new();
            for (i, g) in scene.gaussians.iter().enumerate() {
                let frame = build_local_frame(g.mu, g.rot, g.scale).unwrap();
                let hit = ray_splat_uv(cam, &frame, [f64::from(x) + 0.5, f64::from(y) + 0.5]);
                if !hit.valid || hit.u * hit.u + hit.v * hit.v > cfg.sigma_cut * cfg.sigma_cut {
                    continue;
                }
                let tex = scene.textures.view(i);
                let (c, a) = shade_fragment_with(g, &tex, &hit, &cam.view_dir(&g.mu), mode, cfg);
                if a < cfg.alpha_min {
                    continue;
                }
                frags.push((hit.depth, i, c, a));
            }
            frags.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let list: Vec<([f64; 3], f64)> = frags.iter().map(|f| (f.2, f.3)).collect();
            let rgb = composite_pixel_with(&list, scene.background, cfg.t_min);
            img.set(x, y, rgb.map(|c| c.clamp(0.0, 1.0)));
        }
    }
    img
}

pub fn random_weights(seed: u64, w: u32, h: u32) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let data = (0..3 * w * h)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Image::from_data(w, h, data).unwrap()
}

/// Which scalar of the scene a finite difference perturbs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Param {
    Mu(usize, usize),
    Scale(usize, usize),
    Rot(usize, usize),
    Opacity(usize),
    Sh(usize, usize, usize),
    TexRgb(usize, usize),
    TexAlpha(usize),
}

impl Param {
    pub fn group(&self) -> &'static str {
        match self {
            Param::Mu(..) => "mu",
            Param::Scale(..) => "scale",
            Param::Rot(..) => "rot",
            Param::Opacity(..) => "opacity",
            Param::Sh(..) => "sh",
            Param::TexRgb(..) => "tex_rgb",
            Param::TexAlpha(..) => "tex_alpha",
        }
    }

    pub fn all(scene: &Scene) -> Vec<Param> {
        let bands = num_coeffs(scene.sh_degree);
        let mut out = Vec::new();
        for i in 0..scene.len() {
            (0..3).for_each(|k| out.push(Param::Mu(i, k)));
            (0..2).for_each(|k| out.push(Param::Scale(i, k)));
            (0..4).for_each(|k| out.push(Param::Rot(i, k)));
            out.push(Param::Opacity(i));
            for b in 0..bands {
                (0..3).for_each(|c| out.push(Param::Sh(i, b, c)));
            }
        }
        for t in 0..scene.textures.texel_count() {
            (0..3).for_each(|c| out.push(Param::TexRgb(t, c)));
            out.push(Param::TexAlpha(t));
        }
        out
    }

    pub fn add(&self, scene: &mut Scene, d: f64) {
        let bands = num_coeffs(scene.sh_degree);
        match *self {
            Param::Mu(i, k) => scene.gaussians[i].mu[k] += d,
            Param::Scale(i, k) => scene.gaussians[i].scale[k] += d,
            Param::Rot(i, k) => scene.gaussians[i].rot[k] += d,
            Param::Opacity(i) => scene.gaussians[i].opacity_logit += d,
            Param::Sh(i, b, c) => {
                debug_assert!(b < bands);
                scene.gaussians[i].sh[b][c] += d
            }
            Param::TexRgb(t, c) => scene.textures.texels_mut()[4 * t + c] += d,
            Param::TexAlpha(t) => scene.textures.texels_mut()[4 * t + 3] += d,
        }
    }

    pub fn analytic(&self, g: &SceneGradients, bands: usize) -> f64 {
        match *self {
            Param::Mu(i, k) => g.d_mu[i][k],
            Param::Scale(i, k) => g.d_scale[i][k],
            Param::Rot(i, k) => g.d_rot[i][k],
            Param::Opacity(i) => g.d_opacity_logit[i],
            Param::Sh(i, b, c) => g.d_sh[i * bands + b][c],
            Param::TexRgb(t, c) => g.d_rgb_texels[t][c],
            Param::TexAlpha(t) => g.d_alpha_texels[t],
        }
    }
}

/// `<weights, render(scene)>` and the branch signature of the render.
pub fn weighted_loss(scene: &Scene, cam: &Camera, mode: RenderMode, weights: &Image) -> (f64, u64) {
    let cfg = RenderConfig {
        track_branches: true,
        ..Default::default()
    };
    let out = render(scene, cam, mode, &cfg);
    let l = out
        .image
        .data
        .iter()
        .zip(&weights.data)
        .map(|(a, b)| a * b)
        .sum();
    (l, out.branch_signature.unwrap())
}

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub param: Param,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Parameters whose perturbations crossed a discrete branch at every
    /// tried step, so no finite difference was meaningful.
    pub skipped: usize,
    pub one_sided: usize,
    pub mismatches: Vec<Mismatch>,
    pub groups: std::collections::BTreeSet<&'static str>,
}

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-8;

pub fn agrees(analytic: f64, numeric: f64) -> bool {
    let err = (analytic - numeric).abs();
    err < ABS_TOL || err / analytic.abs().max(numeric.abs()) < REL_TOL
}

/// Finite difference of `param`: central when both sides stay on the
/// base render's smooth piece, otherwise the second-order one-sided stencil
/// on the side that does.
fn numeric_derivative(
    scene: &Scene,
    cam: &Camera,
    mode: RenderMode,
    w: &Image,
    p: Param,
    h: f64,
) -> Option<(f64, bool)> {
    let (l0, sig0) = weighted_loss(scene, cam, mode, w);
    let at = |d: f64| {
        let mut s = scene.clone();
        p.add(&mut s, d);
        weighted_loss(&s, cam, mode, w)
    };
    let (lp, sp) = at(h);
    let (lm, sm) = at(-h);
    if sp == sig0 && sm == sig0 {
        return Some(((lp - lm) / (2.0 * h), false));
    }
    for dir in [1.0, -1.0] {
        let (l1, s1) = if dir > 0.0 { (lp, sp) } else { (lm, sm) };
        let (l2, s2) = at(2.0 * h * dir);
        if s1 == sig0 && s2 == sig0 {
            return Some((dir * (-3.0 * l0 + 4.0 * l1 - l2) / (2.0 * h), true));
        }
    }
    None
}

pub fn check_gradients(scene: &Scene, cam: &Camera, mode: RenderMode, seed: u64) -> GradCheck {
    let w = random_weights(seed, cam.width(), cam.height());
    let (grads, _) = backward(scene, cam, mode, &RenderConfig::default(), &w);
    assert!(grads.is_finite());
    let bands = num_coeffs(scene.sh_degree);
    let mut report = GradCheck::default();
    for p in Param::all(scene) {
        let analytic = p.analytic(&grads, bands);
        let numeric = numeric_derivative(scene, cam, mode, &w, p, FD_STEP)
            .or_else(|| numeric_derivative(scene, cam, mode, &w, p, FD_STEP * 0.1));
        let Some((numeric, one_sided)) = numeric else {
            report.skipped += 1;
            continue;
        };
        report.checked += 1;
        report.one_sided += usize::from(one_sided);
        report.groups.insert(p.group());
        if !agrees(analytic, numeric) {
            report.mismatches.push(Mismatch {
                param: p,
                analytic,
                numeric,
            });
        }
    }
    report
}

/// PSNR straight from the definition, unit peak, no cap.
pub fn psnr_oracle(a: &Image, b: &Image) -> f64 {
    let n = a.data.len() as f64;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n;
    -10.0 * mse.log10()
}

/// Windowed SSIM evaluated window by window with an explicit 2D Gaussian
/// weight, over every window that fits inside the image.
pub fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    const N: usize = 11;
    let sigma: f64 = 1.5;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut weights = [[0.0; N]; N];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *w = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *w;
        }
    }
    let (w, h) = (a.width as usize, a.height as usize);
    let mut sum = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        for y0 in 0..=h - N {
            for x0 in 0..=w - N {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..N {
                    for dx in 0..N {
                        let k = weights[dy][dx] / total;
                        let idx = 3 * ((y0 + dy) * w + x0 + dx) + ch;
                        let (p, q) = (a.data[idx], b.data[idx]);
                        ma += k * p;
                        mb += k * q;
                        saa += k * p * p;
                        sbb += k * q * q;
                        sab += k * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}

pub fn random_image(seed: u64, w: u32, h: u32) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_data(
        w,
        h,
        (0..3 * w * h).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

/// Zero-color compositing with Gaussian alpha only: every pixel is the
/// background times the transmittance left behind the sorted fragments.
pub fn alpha_only_oracle(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> Image {
    let mut img = Image::new(cam.width(), cam.height());
    for y in 0..cam.height() {
        for x in 0..cam.width() {
            let mut frags = Vec::new();
            for (i, g) in scene.gaussians.iter().enumerate() {
                let frame = build_local_frame(g.mu, g.rot, g.scale).unwrap();
                let hit = ray_splat_uv(cam, &frame, [f64::from(x) + 0.5, f64::from(y) + 0.5]);
                let r2 = hit.u * hit.u + hit.v * hit.v;
                if !hit.valid || r2 > cfg.sigma_cut * cfg.sigma_cut {
                    continue;
                }
                let o = 1.0 / (1.0 + (-g.opacity_logit).exp());
                let alpha = (o * (-0.5 * r2).exp()).min(cfg.alpha_max);
                if alpha >= cfg.alpha_min {
                    frags.push((hit.depth, i, alpha));
                }
            }
            frags.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut t = 1.0;
            for f in &frags {
                t *= 1.0 - f.2;
                if t < cfg.t_min {
                    break;
                }
            }
            img.set(x, y, scene.background.map(|c| (c * t).clamp(0.0, 1.0)));
        }
    }
    img
}
