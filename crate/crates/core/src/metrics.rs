//! Image quality metrics, texture-resolution tallies and render timing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{domain, Result};
use crate::geometry::Camera;
use crate::image::Image;
use crate::model::{eval_sh, Scene};
use crate::raster::{render, render_tinted, RenderConfig, RenderMode};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(domain(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// Peak signal-to-noise ratio for unit peak, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m > 0.0 {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    } else {
        PSNR_CAP
    })
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - c;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= s);
    k
}

/// Single-channel plane.
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

fn channel(img: &Image, c: usize) -> Plane {
    Plane {
        w: img.width as usize,
        h: img.height as usize,
        v: img.data.iter().skip(c).step_by(3).copied().collect(),
    }
}

/// Separable valid-mode correlation with the window.
fn filter_valid(p: &Plane, k: &[f64]) -> Plane {
    let n = k.len();
    let (ow, oh) = (p.w + 1 - n, p.h + 1 - n);
    let mut tmp = vec![0.0; ow * p.h];
    for y in 0..p.h {
        let row = &p.v[y * p.w..(y + 1) * p.w];
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * row[x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    Plane {
        w: ow,
        h: oh,
        v: out,
    }
}

/// Adjoint of [`filter_valid`]: spreads a valid-size map back to full size.
fn filter_adjoint(p: &Plane, k: &[f64], w: usize, h: usize) -> Plane {
    let n = k.len();
    let mut tmp = vec![0.0; p.w * h];
    for y in 0..p.h {
        for x in 0..p.w {
            let g = p.v[y * p.w + x];
            for i in 0..n {
                tmp[(y + i) * p.w + x] += k[i] * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..p.w {
            let g = tmp[y * p.w + x];
            for i in 0..n {
                out[y * w + x + i] += k[i] * g;
            }
        }
    }
    Plane { w, h, v: out }
}

fn map(p: &Plane, q: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
    Plane {
        w: p.w,
        h: p.h,
        v: p.v.iter().zip(&q.v).map(|(&a, &b)| f(a, b)).collect(),
    }
}

fn check_ssim_size(a: &Image) -> Result<()> {
    if (a.width as usize) < SSIM_WINDOW || (a.height as usize) < SSIM_WINDOW {
        return Err(domain(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    Ok(())
}

/// Mean SSIM and, if requested, its gradient with respect to `a`.
pub(crate) fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    check_shapes(a, b)?;
    check_ssim_size(a)?;
    let k = ssim_kernel();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(a.width, a.height));
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let mx = filter_valid(&x, &k);
        let my = filter_valid(&y, &k);
        let exx = filter_valid(&map(&x, &x, |p, q| p * q), &k);
        let eyy = filter_valid(&map(&y, &y, |p, q| p * q), &k);
        let exy = filter_valid(&map(&x, &y, |p, q| p * q), &k);
        let count = mx.v.len();
        let mut d_mx = vec![0.0; count];
        let mut d_exx = vec![0.0; count];
        let mut d_exy = vec![0.0; count];
        let mut sum = 0.0;
        for i in 0..count {
            let (ux, uy) = (mx.v[i], my.v[i]);
            let vx = exx.v[i] - ux * ux;
            let vy = eyy.v[i] - uy * uy;
            let cxy = exy.v[i] - ux * uy;
            let n1 = 2.0 * ux * uy + SSIM_C1;
            let n2 = 2.0 * cxy + SSIM_C2;
            let d1 = ux * ux + uy * uy + SSIM_C1;
            let d2 = vx + vy + SSIM_C2;
            let s = n1 * n2 / (d1 * d2);
            sum += s;
            if want_grad {
                d_mx[i] = 2.0 * uy * (n2 - n1) / (d1 * d2) - 2.0 * ux * s * (1.0 / d1 - 1.0 / d2);
                d_exx[i] = -s / d2;
                d_exy[i] = 2.0 * n1 / (d1 * d2);
            }
        }
        total += sum / count as f64;
        if let Some(g) = grad.as_mut() {
            let scale = 1.0 / (3.0 * count as f64);
            let wrap = |v: Vec<f64>| Plane {
                w: mx.w,
                h: mx.h,
                v,
            };
            let ga = filter_adjoint(&wrap(d_mx), &k, x.w, x.h);
            let gb = filter_adjoint(&wrap(d_exx), &k, x.w, x.h);
            let gc = filter_adjoint(&wrap(d_exy), &k, x.w, x.h);
            for p in 0..x.v.len() {
                g.data[3 * p + c] = scale * (ga.v[p] + 2.0 * x.v[p] * gb.v[p] + y.v[p] * gc.v[p]);
            }
        }
    }
    Ok((total / 3.0, grad))
}

/// Mean structural similarity over valid 11x11 Gaussian windows, averaged
/// over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// Texture-size distribution of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionHistogram {
    /// `((width, height), count)` sorted by size.
    pub buckets: Vec<((u32, u32), u64)>,
    pub total: u64,
    pub one_by_one: u64,
    pub square_gt1: u64,
    pub non_square: u64,
}

impl ResolutionHistogram {
    pub fn from_sizes(sizes: &[(u32, u32)]) -> Self {
        let mut map = BTreeMap::new();
        for &s in sizes {
            *map.entry(s).or_insert(0u64) += 1;
        }
        let count =
            |f: &dyn Fn(u32, u32) -> bool| sizes.iter().filter(|&&(w, h)| f(w, h)).count() as u64;
        Self {
            buckets: map.into_iter().collect(),
            total: sizes.len() as u64,
            one_by_one: count(&|w, h| w == 1 && h == 1),
            square_gt1: count(&|w, h| w == h && w > 1),
            non_square: count(&|w, h| w != h),
        }
    }

    fn pct(&self, n: u64) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.total as f64
        }
    }

    pub fn percent(&self, size: (u32, u32)) -> f64 {
        let n = self
            .buckets
            .iter()
            .find(|(s, _)| *s == size)
            .map_or(0, |b| b.1);
        self.pct(n)
    }

    pub fn one_by_one_percent(&self) -> f64 {
        self.pct(self.one_by_one)
    }

    pub fn square_gt1_percent(&self) -> f64 {
        self.pct(self.square_gt1)
    }

    pub fn non_square_percent(&self) -> f64 {
        self.pct(self.non_square)
    }

    /// `width,height,count,percent` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("width,height,count,percent\n");
        for &((w, h), n) in &self.buckets {
            let _ = writeln!(s, "{w},{h},{n},{:.6}", self.pct(n));
        }
        s
    }
}

pub fn resolution_histogram(scene: &Scene) -> ResolutionHistogram {
    ResolutionHistogram::from_sizes(&scene.textures.sizes())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub fps: f64,
    pub ms_per_frame: f64,
    pub train_minutes: Option<f64>,
}

impl TimingReport {
    pub fn from_ms(ms_per_frame: f64) -> Self {
        Self {
            fps: 1000.0 / ms_per_frame,
            ms_per_frame,
            train_minutes: None,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "fps,ms_per_frame\n{:.6},{:.6}\n",
            self.fps, self.ms_per_frame
        )
    }
}

/// Mean wall-clock render time over `n_frames` after one warm-up frame.
pub fn timing_report(
    scene: &Scene,
    cam: &Camera,
    n_frames: u32,
    cfg: &RenderConfig,
) -> Result<TimingReport> {
    if n_frames == 0 {
        return Err(domain("timing needs at least one frame"));
    }
    render(scene, cam, RenderMode::Full, cfg);
    let start = Instant::now();
    for _ in 0..n_frames {
        render(scene, cam, RenderMode::Full, cfg);
    }
    let ms = start.elapsed().as_secs_f64() * 1000.0 / f64::from(n_frames);
    // guard against a zero reading from a coarse clock
    Ok(TimingReport::from_ms(ms.max(1e-6)))
}

/// Tint of splats whose texture is square and larger than 1x1.
pub const HIGHLIGHT_SQUARE: [f64; 3] = [0.1, 0.3, 1.0];
/// Tint of splats with a non-square texture.
pub const HIGHLIGHT_NON_SQUARE: [f64; 3] = [1.0, 0.15, 0.1];

/// Diagnostic render: splats with upscaled textures drawn in flat
/// highlight colors, 1x1 splats in their usual color.
pub fn highlight_render(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> Image {
    let tints: Vec<[f64; 3]> = scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| match scene.textures.dims(i) {
            (1, 1) => {
                let base = eval_sh(&g.sh, &cam.view_dir(&g.mu));
                let t = scene.textures.unpack(i);
                let rgb = t.rgb()[0];
                [base[0] + rgb[0], base[1] + rgb[1], base[2] + rgb[2]]
            }
            (w, h) if w == h => HIGHLIGHT_SQUARE,
            _ => HIGHLIGHT_NON_SQUARE,
        })
        .collect();
    render_tinted(scene, cam, &tints, cfg).image
}

/// One evaluation point of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub mem_bytes: u64,
    pub n_upscaled: u64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "iter,psnr,ssim,mem_bytes";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{}",
            self.iter, self.psnr, self.ssim, self.mem_bytes
        )
    }

    /// `iter psnr ssim l1 mem_bytes n_upscaled`
    pub fn log_line(&self) -> String {
        format!(
            "{} {:.6} {:.6} {:.6} {} {}",
            self.iter, self.psnr, self.ssim, self.l1, self.mem_bytes, self.n_upscaled
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{}\n", MetricsRow::CSV_HEADER);
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}
