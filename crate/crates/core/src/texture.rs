//! Per-splat RGBA textures of variable, possibly anisotropic resolution.
//!
//! Texels are addressed `(i, j)` with `i` along the splat's `u` axis
//! (texture width) and `j` along `v` (texture height), stored row-major
//! (`j * width + i`). Texel centers sit at integer + 0.5 in continuous texel
//! coordinates; lookups clamp to the outermost centers.

use crate::error::{domain, Error, Result};

/// Read access to a grid of RGBA texels.
pub trait TexelSource {
    fn width(&self) -> u32;
    fn height(&self) -> u32;
    /// `(r, g, b, a)` of texel `(i, j)`; alpha is returned unclamped.
    fn rgba(&self, i: u32, j: u32) -> [f64; 4];
}

/// Owned texture: additive RGB residual plus multiplicative alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    width: u32,
    height: u32,
    rgb: Vec<[f64; 3]>,
    alpha: Vec<f64>,
}

fn check_dim(d: u32) -> Result<()> {
    if d == 0 || !d.is_power_of_two() || d > u32::from(u16::MAX) {
        return Err(domain(format!(
            "texture dimension {d} is not a power of two in [1, 32768]"
        )));
    }
    Ok(())
}

impl Texture {
    pub fn new(width: u32, height: u32, rgb: Vec<[f64; 3]>, alpha: Vec<f64>) -> Result<Self> {
        check_dim(width)?;
        check_dim(height)?;
        let n = (width * height) as usize;
        if rgb.len() != n || alpha.len() != n {
            return Err(domain(format!(
                "texture {width}x{height} needs {n} texels, got {} rgb / {} alpha",
                rgb.len(),
                alpha.len()
            )));
        }
        Ok(Self {
            width,
            height,
            rgb,
            alpha,
        })
    }

    pub fn constant(width: u32, height: u32, rgb: [f64; 3], alpha: f64) -> Result<Self> {
        let n = (width * height) as usize;
        Self::new(width, height, vec![rgb; n], vec![alpha; n])
    }

    /// The neutral 1x1 texture: zero color residual, unit alpha.
    pub fn neutral() -> Self {
        Self {
            width: 1,
            height: 1,
            rgb: vec![[0.0; 3]],
            alpha: vec![1.0],
        }
    }

    pub fn rgb(&self) -> &[[f64; 3]] {
        &self.rgb
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn texel_count(&self) -> usize {
        self.rgb.len()
    }
}

impl TexelSource for Texture {
    fn width(&self) -> u32 {
        self.width
    }

    fn height(&self) -> u32 {
        self.height
    }

    fn rgba(&self, i: u32, j: u32) -> [f64; 4] {
        let k = (j * self.width + i) as usize;
        let [r, g, b] = self.rgb[k];
        [r, g, b, self.alpha[k]]
    }
}

/// Borrowed texture inside an atlas (RGBA interleaved).
#[derive(Debug, Clone, Copy)]
pub struct TextureView<'a> {
    pub width: u32,
    pub height: u32,
    pub texels: &'a [f64],
}

impl TexelSource for TextureView<'_> {
    fn width(&self) -> u32 {
        self.width
    }

    fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn rgba(&self, i: u32, j: u32) -> [f64; 4] {
        let k = 4 * (j * self.width + i) as usize;
        [
            self.texels[k],
            self.texels[k + 1],
            self.texels[k + 2],
            self.texels[k + 3],
        ]
    }
}

/// Maps `(u, v)` in `[-1, 1]` to continuous texel coordinates in
/// `[0, width] x [0, height]`. Inputs outside `[-1, 1]` are clamped.
pub fn uv_to_texel(u: f64, v: f64, width: u32, height: u32) -> [f64; 2] {
    let u = u.clamp(-1.0, 1.0);
    let v = v.clamp(-1.0, 1.0);
    [
        0.5 * (u + 1.0) * f64::from(width),
        0.5 * (v + 1.0) * f64::from(height),
    ]
}

/// Bilinear lookup stencil: up to four texels and the fractional offsets
/// between them, plus the derivative of the offsets with respect to `u`/`v`
/// (zero where the lookup is clamped).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bilinear {
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
    pub fx: f64,
    pub fy: f64,
    pub dfx_du: f64,
    pub dfy_dv: f64,
}

impl Bilinear {
    pub fn new(u: f64, v: f64, width: u32, height: u32) -> Self {
        let axis = |t: f64, n: u32| {
            let nf = f64::from(n);
            let raw = 0.5 * (t + 1.0) * nf;
            let c = raw.clamp(0.5, nf - 0.5);
            let slope = if raw > 0.5 && raw < nf - 0.5 {
                0.5 * nf
            } else {
                0.0
            };
            let base = ((c - 0.5).floor() as u32).min(n - 1);
            let frac = c - 0.5 - f64::from(base);
            (base, (base + 1).min(n - 1), frac, slope)
        };
        let (x0, x1, fx, dfx_du) = axis(u, width);
        let (y0, y1, fy, dfy_dv) = axis(v, height);
        Self {
            x0,
            x1,
            y0,
            y1,
            fx,
            fy,
            dfx_du,
            dfy_dv,
        }
    }

    /// `[(i, j, weight)]` for the four corners (duplicates possible at edges).
    pub fn taps(&self) -> [(u32, u32, f64); 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (self.x0, self.y0, (1.0 - fx) * (1.0 - fy)),
            (self.x1, self.y0, fx * (1.0 - fy)),
            (self.x0, self.y1, (1.0 - fx) * fy),
            (self.x1, self.y1, fx * fy),
        ]
    }

    /// Derivatives of the four tap weights with respect to `u` and `v`.
    pub fn tap_gradients(&self) -> ([f64; 4], [f64; 4]) {
        let (fx, fy) = (self.fx, self.fy);
        let du = [-(1.0 - fy), 1.0 - fy, -fy, fy].map(|w| w * self.dfx_du);
        let dv = [-(1.0 - fx), -fx, 1.0 - fx, fx].map(|w| w * self.dfy_dv);
        (du, dv)
    }

    /// Interpolated raw RGBA (alpha not clamped). Evaluated as nested lerps
    /// so that a constant neighbourhood reproduces its value exactly.
    pub fn sample<T: TexelSource + ?Sized>(&self, tex: &T) -> [f64; 4] {
        let t00 = tex.rgba(self.x0, self.y0);
        let t10 = tex.rgba(self.x1, self.y0);
        let t01 = tex.rgba(self.x0, self.y1);
        let t11 = tex.rgba(self.x1, self.y1);
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        std::array::from_fn(|c| {
            let top = lerp(t00[c], t10[c], self.fx);
            let bottom = lerp(t01[c], t11[c], self.fx);
            lerp(top, bottom, self.fy)
        })
    }
}

/// Bilinear lookup at `(u, v)`; alpha is clamped to `[0, 1]`.
pub fn sample_bilinear<T: TexelSource + ?Sized>(tex: &T, u: f64, v: f64) -> ([f64; 3], f64) {
    let s = Bilinear::new(u, v, tex.width(), tex.height()).sample(tex);
    ([s[0], s[1], s[2]], s[3].clamp(0.0, 1.0))
}

/// What an upscale request actually did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpscaleStatus {
    U,
    V,
    Both,
    /// Every requested axis was already at the cap; texture unchanged.
    Capped,
}

impl UpscaleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            UpscaleStatus::U => "u",
            UpscaleStatus::V => "v",
            UpscaleStatus::Both => "both",
            UpscaleStatus::Capped => "capped",
        }
    }
}

/// Nearest-texel resampling to `width x height`.
pub fn resize_nearest(tex: &Texture, width: u32, height: u32) -> Result<Texture> {
    check_dim(width)?;
    check_dim(height)?;
    let (ow, oh) = tex.dims();
    let mut rgb = Vec::with_capacity((width * height) as usize);
    let mut alpha = Vec::with_capacity((width * height) as usize);
    for j in 0..height {
        let sj = (u64::from(j) * u64::from(oh) / u64::from(height)) as u32;
        for i in 0..width {
            let si = (u64::from(i) * u64::from(ow) / u64::from(width)) as u32;
            let k = (sj * ow + si) as usize;
            rgb.push(tex.rgb[k]);
            alpha.push(tex.alpha[k]);
        }
    }
    Texture::new(width, height, rgb, alpha)
}

/// Doubles the requested axes, initializing new texels from the nearest old
/// one. Axes already at `cap` saturate; if nothing can grow the texture is
/// returned unchanged with [`UpscaleStatus::Capped`].
pub fn upscale(
    tex: &Texture,
    double_u: bool,
    double_v: bool,
    cap: u32,
) -> Result<(Texture, UpscaleStatus)> {
    if !double_u && !double_v {
        return Err(domain("upscale needs at least one axis"));
    }
    let (w, h) = tex.dims();
    let grow_u = double_u && w * 2 <= cap;
    let grow_v = double_v && h * 2 <= cap;
    let status = match (grow_u, grow_v) {
        (true, true) => UpscaleStatus::Both,
        (true, false) => UpscaleStatus::U,
        (false, true) => UpscaleStatus::V,
        (false, false) => return Ok((tex.clone(), UpscaleStatus::Capped)),
    };
    let nw = if grow_u { w * 2 } else { w };
    let nh = if grow_v { h * 2 } else { h };
    Ok((resize_nearest(tex, nw, nh)?, status))
}

/// Placement of one texture inside the atlas. `offset` counts scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtlasEntry {
    pub offset: u64,
    pub width: u16,
    pub height: u16,
}

impl AtlasEntry {
    pub fn texel_count(&self) -> usize {
        usize::from(self.width) * usize::from(self.height)
    }

    /// Index of the entry's first texel (offset / 4).
    pub fn first_texel(&self) -> usize {
        (self.offset / 4) as usize
    }
}

/// All splat textures packed densely into one RGBA-interleaved array.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TextureAtlas {
    texels: Vec<f64>,
    entries: Vec<AtlasEntry>,
}

/// Packs textures densely in order.
pub fn atlas_rebuild(textures: &[Texture]) -> TextureAtlas {
    let total: usize = textures.iter().map(|t| 4 * t.texel_count()).sum();
    let mut texels = Vec::with_capacity(total);
    let mut entries = Vec::with_capacity(textures.len());
    for t in textures {
        entries.push(AtlasEntry {
            offset: texels.len() as u64,
            width: t.width as u16,
            height: t.height as u16,
        });
        for (rgb, a) in t.rgb.iter().zip(&t.alpha) {
            texels.extend_from_slice(&[rgb[0], rgb[1], rgb[2], *a]);
        }
    }
    TextureAtlas { texels, entries }
}

impl TextureAtlas {
    /// `count` neutral 1x1 textures.
    pub fn neutral(count: usize) -> Self {
        atlas_rebuild(&vec![Texture::neutral(); count])
    }

    /// Reassembles an atlas from raw parts, checking dense packing.
    pub fn from_parts(texels: Vec<f64>, entries: Vec<AtlasEntry>) -> Result<Self> {
        let mut expected = 0u64;
        for (i, e) in entries.iter().enumerate() {
            let bad = |reason: String| Error::Format {
                section: "atlas",
                reason,
            };
            check_dim(u32::from(e.width))
                .map_err(|_| bad(format!("entry {i} width {}", e.width)))?;
            check_dim(u32::from(e.height))
                .map_err(|_| bad(format!("entry {i} height {}", e.height)))?;
            if e.offset != expected {
                return Err(bad(format!(
                    "entry {i} offset {} but packing expects {expected}",
                    e.offset
                )));
            }
            expected += 4 * e.texel_count() as u64;
        }
        if expected != texels.len() as u64 {
            return Err(Error::Format {
                section: "atlas",
                reason: format!(
                    "entries cover {expected} scalars but texel array has {}",
                    texels.len()
                ),
            });
        }
        Ok(Self { texels, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[AtlasEntry] {
        &self.entries
    }

    pub fn texels(&self) -> &[f64] {
        &self.texels
    }

    pub fn texels_mut(&mut self) -> &mut [f64] {
        &mut self.texels
    }

    /// Total number of RGBA texels.
    pub fn texel_count(&self) -> usize {
        self.texels.len() / 4
    }

    pub fn dims(&self, i: usize) -> (u32, u32) {
        let e = self.entries[i];
        (u32::from(e.width), u32::from(e.height))
    }

    pub fn view(&self, i: usize) -> TextureView<'_> {
        let e = self.entries[i];
        let start = e.offset as usize;
        TextureView {
            width: u32::from(e.width),
            height: u32::from(e.height),
            texels: &self.texels[start..start + 4 * e.texel_count()],
        }
    }

    /// Copies entry `i` back out as an owned texture.
    pub fn unpack(&self, i: usize) -> Texture {
        let view = self.view(i);
        let rgb = view
            .texels
            .chunks_exact(4)
            .map(|t| [t[0], t[1], t[2]])
            .collect();
        let alpha = view.texels.chunks_exact(4).map(|t| t[3]).collect();
        Texture {
            width: view.width,
            height: view.height,
            rgb,
            alpha,
        }
    }

    pub fn unpack_all(&self) -> Vec<Texture> {
        (0..self.len()).map(|i| self.unpack(i)).collect()
    }

    /// Per-splat `(width, height)` list.
    pub fn sizes(&self) -> Vec<(u32, u32)> {
        (0..self.len()).map(|i| self.dims(i)).collect()
    }
}

/// Texture layout used for memory accounting.
#[derive(Debug, Clone)]
pub enum TextureFootprint<'a> {
    None,
    Uniform { width: u32, height: u32 },
    Sizes(&'a [(u32, u32)]),
}

/// Byte accounting of trainable parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryReport {
    pub base_bytes: u64,
    pub texture_bytes: u64,
    pub total_bytes: u64,
    pub overhead_percent: f64,
}

impl MemoryReport {
    pub fn base_mb(&self) -> f64 {
        self.base_bytes as f64 / 1e6
    }

    pub fn total_mb(&self) -> f64 {
        self.total_bytes as f64 / 1e6
    }

    /// `"<total MB> (+<overhead>%)"`, the memory column of the evaluation
    /// tables.
    pub fn table_cell(&self) -> String {
        format!("{:.3} (+{:.1}%)", self.total_mb(), self.overhead_percent)
    }
}

/// Scalars stored per splat for geometry, opacity and SH color.
pub fn scalars_per_gaussian(sh_degree: u32) -> u64 {
    let bands = u64::from((sh_degree + 1) * (sh_degree + 1));
    3 + 2 + 4 + 1 + 3 * bands
}

pub fn memory_report(
    num_gaussians: u64,
    sh_degree: u32,
    textures: TextureFootprint<'_>,
    bytes_per_scalar: u64,
) -> Result<MemoryReport> {
    if sh_degree > 3 {
        return Err(domain(format!("sh degree {sh_degree} outside 0..=3")));
    }
    if bytes_per_scalar != 2 && bytes_per_scalar != 4 {
        return Err(domain(format!(
            "bytes per scalar must be 2 or 4, got {bytes_per_scalar}"
        )));
    }
    let base_bytes = num_gaussians * scalars_per_gaussian(sh_degree) * bytes_per_scalar;
    let texels: u64 = match textures {
        TextureFootprint::None => 0,
        TextureFootprint::Uniform { width, height } => {
            num_gaussians * u64::from(width) * u64::from(height)
        }
        TextureFootprint::Sizes(sizes) => sizes
            .iter()
            .map(|&(w, h)| u64::from(w) * u64::from(h))
            .sum(),
    };
    let texture_bytes = 4 * texels * bytes_per_scalar;
    let overhead_percent = if base_bytes == 0 {
        0.0
    } else {
        100.0 * texture_bytes as f64 / base_bytes as f64
    };
    Ok(MemoryReport {
        base_bytes,
        texture_bytes,
        total_bytes: base_bytes + texture_bytes,
        overhead_percent,
    })
}
