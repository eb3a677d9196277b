//! Analytic backward pass.
//!
//! Fragments are recomputed per pixel exactly as in the forward pass. Each
//! tile accumulates into its own buffers (indexed by bin slot), and tiles are
//! reduced in row-major order, so results do not depend on scheduling.

use nalgebra::Matrix4;
use rayon::prelude::*;

use super::forward::{
    composite_fragments, prepare, Appearance, Fragment, PassContext, Prepared, Tiles,
};
use super::{GradientStats, RenderConfig, RenderMode, SceneGradients};
use crate::geometry::{tangent_axes_with_jacobian, Camera, PixelPlanes, UvPartials};
use crate::image::Image;
use crate::model::{sh, Scene};
use crate::texture::TexelSource;
use crate::Vec3;

const COLS: [usize; 3] = [0, 1, 3];

/// Per-slot accumulators of one tile.
#[derive(Clone, Default)]
struct SlotGrad {
    /// dL/dM for rows 0, 1, 3 and columns 0, 1, 3 of `M = W * H`.
    dm: [[f64; 3]; 3],
    d_opacity: f64,
    d_base: [f64; 3],
    /// RGBA texel gradients of this splat's texture (allocated on demand).
    d_texels: Vec<[f64; 4]>,
    stat: f64,
    count: u64,
}

struct TileGrads {
    slots: Vec<SlotGrad>,
}

/// Gradients of `sum(d_image * render(scene))` with respect to every
/// trainable parameter, plus the positional selection statistics.
///
/// Pixels whose composited value fell outside `[0, 1]` were clamped in the
/// forward pass; their channels pass no gradient.
pub fn backward(
    scene: &Scene,
    cam: &Camera,
    mode: RenderMode,
    cfg: &RenderConfig,
    d_image: &Image,
) -> (SceneGradients, GradientStats) {
    let (w, h) = (cam.width(), cam.height());
    assert!(
        d_image.width == w && d_image.height == h,
        "d_image does not match the camera"
    );
    let look = Appearance::Mode(mode);
    let preps = prepare(scene, cam, look, cfg);
    let tiles = Tiles::build(&preps, w, h, cfg.tile_size);
    let ctx = PassContext::new(&preps, scene, look, cfg);
    let wm = cam.world_to_screen();
    // xyz parts of rows 0, 1, 3 of W: derivatives of M's last column wrt mu
    let w_row = |r: usize| Vec3::new(wm[(r, 0)], wm[(r, 1)], wm[(r, 2)]);
    let (w0, w1, w3) = (w_row(0), w_row(1), w_row(3));

    let tile_grads: Vec<TileGrads> = (0..tiles.bins.len())
        .into_par_iter()
        .map(|t| {
            let r = tiles.rect(t, w, h);
            let bin = &tiles.bins[t];
            let mut slots = vec![SlotGrad::default(); bin.len()];
            let mut frags: Vec<Fragment> = Vec::new();
            let mut trans = Vec::new();
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    ctx.gather(bin, x, y, &mut frags);
                    if frags.is_empty() {
                        continue;
                    }
                    let acc = composite_fragments(&frags, cfg.t_min);
                    let rgb = acc.finish(scene.background);
                    let k = d_image.index(x, y);
                    let g: [f64; 3] = std::array::from_fn(|c| {
                        if (0.0..=1.0).contains(&rgb[c]) {
                            d_image.data[k + c]
                        } else {
                            0.0
                        }
                    });
                    let used = &frags[..acc.used];
                    trans.clear();
                    let mut tr = 1.0;
                    for f in used {
                        trans.push(tr);
                        tr *= 1.0 - f.shade.alpha;
                    }
                    let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
                    // suffix: contribution of everything behind fragment i
                    let mut suffix: [f64; 3] =
                        std::array::from_fn(|c| scene.background[c] * acc.transmittance);
                    for (i, f) in used.iter().enumerate().rev() {
                        let s = &f.shade;
                        let ti = trans[i];
                        let mut d_alpha = 0.0;
                        for c in 0..3 {
                            d_alpha += g[c] * (ti * s.color[c] - suffix[c] / (1.0 - s.alpha));
                        }
                        let wgt = s.alpha * ti;
                        let dc: [f64; 3] = std::array::from_fn(|c| wgt * g[c]);
                        for c in 0..3 {
                            suffix[c] += s.color[c] * wgt;
                        }
                        let p = &preps[bin[f.slot as usize] as usize];
                        let slot = &mut slots[f.slot as usize];
                        let uvp = PixelPlanes::new(&p.m, px, py).uv_partials(f.u, f.v);
                        accumulate_fragment(slot, &ctx, p, f, &uvp, d_alpha, dc, [px, py], mode);
                        // selection statistic: positional gradient through alpha only
                        let dm2_a = px * w3 - w0;
                        let dm2_b = py * w3 - w1;
                        let du_dmu = dm2_a * uvp.du_da[2] + dm2_b * uvp.du_db[2];
                        let dv_dmu = dm2_a * uvp.dv_da[2] + dm2_b * uvp.dv_db[2];
                        let dg_dmu = -s.gauss * (f.u * du_dmu + f.v * dv_dmu);
                        let stat = d_alpha * p.opacity * s.tex_alpha * dg_dmu;
                        slot.stat += stat.norm();
                        slot.count += 1;
                    }
                }
            }
            TileGrads { slots }
        })
        .collect();

    reduce(scene, cam, mode, &preps, &tiles, tile_grads)
}

/// Chains one fragment's `dL/dalpha` and `dL/dcolor` into the slot's
/// accumulators for `M`, opacity, base color and texels.
#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_fragment(
    slot: &mut SlotGrad,
    ctx: &PassContext,
    p: &Prepared,
    f: &Fragment,
    uvp: &UvPartials,
    d_alpha: f64,
    dc: [f64; 3],
    [px, py]: [f64; 2],
    mode: RenderMode,
) {
    let s = &f.shade;
    let (id, opacity) = (p.id as usize, p.opacity);
    if mode.uses_base_color() {
        for c in 0..3 {
            slot.d_base[c] += dc[c];
        }
    }
    let d_alpha_raw = if s.alpha_clamped(ctx.cfg) {
        0.0
    } else {
        d_alpha
    };
    slot.d_opacity += d_alpha_raw * s.gauss * s.tex_alpha;
    let d_gauss = d_alpha_raw * opacity * s.tex_alpha;
    let mut du = -f.u * s.gauss * d_gauss;
    let mut dv = -f.v * s.gauss * d_gauss;

    if let Some(st) = s.stencil {
        let tex = ctx.atlas.view(id);
        let d_ta = if s.tex_alpha_free {
            d_alpha_raw * opacity * s.gauss
        } else {
            0.0
        };
        let d_rgb = if ctx.tex_rgb { dc } else { [0.0; 3] };
        if slot.d_texels.is_empty() {
            slot.d_texels = vec![[0.0; 4]; tex.texels.len() / 4];
        }
        let (gu, gv) = st.tap_gradients();
        let inv_e = 1.0 / ctx.cfg.texture_extent_sigma;
        for (n, (i, j, wt)) in st.taps().into_iter().enumerate() {
            let texel = tex.rgba(i, j);
            let d = &mut slot.d_texels[(j * tex.width + i) as usize];
            let mut along = 0.0;
            for c in 0..3 {
                d[c] += wt * d_rgb[c];
                along += d_rgb[c] * texel[c];
            }
            d[3] += wt * d_ta;
            along += d_ta * texel[3];
            du += along * gu[n] * inv_e;
            dv += along * gv[n] * inv_e;
        }
    }

    if du == 0.0 && dv == 0.0 {
        return;
    }
    for j in 0..3 {
        let da = du * uvp.du_da[j] + dv * uvp.dv_da[j];
        let db = du * uvp.du_db[j] + dv * uvp.dv_db[j];
        slot.dm[0][j] -= da;
        slot.dm[1][j] -= db;
        slot.dm[2][j] += px * da + py * db;
    }
}

fn reduce(
    scene: &Scene,
    cam: &Camera,
    mode: RenderMode,
    preps: &[Prepared],
    tiles: &Tiles,
    tile_grads: Vec<TileGrads>,
) -> (SceneGradients, GradientStats) {
    let n = scene.len();
    let bands = sh::num_coeffs(scene.sh_degree);
    let mut grads = SceneGradients::zeros(n, bands, scene.textures.texel_count());
    let mut stats = GradientStats::new(n);
    let mut dm = vec![[[0.0; 3]; 3]; n];
    let mut d_opacity = vec![0.0; n];
    let mut d_base = vec![[0.0; 3]; n];

    for (t, tg) in tile_grads.into_iter().enumerate() {
        for (slot, sg) in tg.slots.into_iter().enumerate() {
            let id = preps[tiles.bins[t][slot] as usize].id as usize;
            for r in 0..3 {
                for c in 0..3 {
                    dm[id][r][c] += sg.dm[r][c];
                }
            }
            d_opacity[id] += sg.d_opacity;
            for c in 0..3 {
                d_base[id][c] += sg.d_base[c];
            }
            if !sg.d_texels.is_empty() {
                let first = scene.textures.entries()[id].first_texel();
                for (k, d) in sg.d_texels.iter().enumerate() {
                    let gt = &mut grads.d_rgb_texels[first + k];
                    for c in 0..3 {
                        gt[c] += d[c];
                    }
                    grads.d_alpha_texels[first + k] += d[3];
                }
            }
            stats.accum_abs_grad[id] += sg.stat;
            stats.pixel_count[id] += sg.count;
        }
    }

    let wm = cam.world_to_screen();
    let mut y = vec![0.0; bands];
    let mut dy = vec![Vec3::zeros(); bands];
    for p in preps {
        let i = p.id as usize;
        let g = &scene.gaussians[i];
        // dL/dH = W^T dL/dM, with dL/dM nonzero in rows 0, 1, 3 only
        let mut d_m = Matrix4::zeros();
        for (ri, &r) in [0usize, 1, 3].iter().enumerate() {
            for (ci, &c) in COLS.iter().enumerate() {
                d_m[(r, c)] = dm[i][ri][ci];
            }
        }
        let d_h = wm.transpose() * d_m;
        let (tu, tv, ju, jv) = tangent_axes_with_jacobian(g.rot);
        let gu = Vec3::new(d_h[(0, 0)], d_h[(1, 0)], d_h[(2, 0)]);
        let gv = Vec3::new(d_h[(0, 1)], d_h[(1, 1)], d_h[(2, 1)]);
        let mut d_mu = Vec3::new(d_h[(0, 3)], d_h[(1, 3)], d_h[(2, 3)]);
        grads.d_scale[i] = [tu.dot(&gu), tv.dot(&gv)];
        for k in 0..4 {
            let mut acc = 0.0;
            for r in 0..3 {
                acc += g.scale[0] * gu[r] * ju[r][k] + g.scale[1] * gv[r] * jv[r][k];
            }
            grads.d_rot[i][k] = acc;
        }
        let o = p.opacity;
        grads.d_opacity_logit[i] = d_opacity[i] * o * (1.0 - o);

        if mode.uses_base_color() {
            let db = d_base[i];
            sh::basis(&p.view_dir, &mut y);
            sh::basis_gradient(&p.view_dir, &mut dy);
            let mut d_dir = Vec3::zeros();
            for b in 0..bands {
                let gsh = &mut grads.d_sh[i * bands + b];
                for c in 0..3 {
                    gsh[c] = y[b] * db[c];
                }
                let coeff_dot: f64 = (0..3).map(|c| g.sh[b][c] * db[c]).sum();
                d_dir += dy[b] * coeff_dot;
            }
            let offset = g.mu - cam.origin();
            let r = offset.norm();
            if r > 0.0 {
                let d = p.view_dir;
                d_mu += (d_dir - d * d.dot(&d_dir)) / r;
            }
        }
        grads.d_mu[i] = [d_mu.x, d_mu.y, d_mu.z];
    }
    (grads, stats)
}
