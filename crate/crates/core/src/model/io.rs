//! Little-endian binary scene container.
//!
//! ```text
//! "A2TG" | version u32 | sh_degree u32 | count u64 | background 3 x f32
//! per splat: mu 3 x f32, scale 2 x f32, rot 4 x f32, opacity_logit f32,
//!            sh 3 x (d+1)^2 f32 (coefficient-major, RGB inner)
//! atlas: count x (offset u64, width u16, height u16)
//!        texel scalar count u64, texels f32 (RGBA interleaved)
//! extra sections (optional, repeated): tag [u8; 4] | byte length u64 | payload
//! ```

use std::fs;
use std::path::Path;

use super::{sh, Gaussian2D, Scene};
use crate::error::{Error, Result};
use crate::texture::{AtlasEntry, TextureAtlas};
use crate::Vec3;

pub const MAGIC: &[u8; 4] = b"A2TG";
pub const VERSION: u32 = 1;

/// Append-only little-endian byte buffer.
#[derive(Debug, Default)]
pub struct SectionWriter {
    pub buf: Vec<u8>,
}

impl SectionWriter {
    pub fn u16(&mut self, x: u16) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    pub fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    pub fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    pub fn f32(&mut self, x: f64) {
        self.buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    pub fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    /// Appends a tagged extra section.
    pub fn section(&mut self, tag: &[u8; 4], payload: &[u8]) {
        self.bytes(tag);
        self.u64(payload.len() as u64);
        self.bytes(payload);
    }
}

/// Cursor over a byte slice that reports truncation against the section
/// currently being decoded.
#[derive(Debug)]
pub struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self {
            data,
            pos: 0,
            section: "header",
        }
    }

    pub fn section(&mut self, name: &'static str) {
        self.section = name;
    }

    pub fn error(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            section: self.section,
            reason: reason.into(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    pub fn f32(&mut self) -> Result<f64> {
        Ok(f64::from(f32::from_le_bytes(self.array()?)))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// Next extra section as `(tag, payload)`, or `None` at end of input.
    pub fn next_section(&mut self) -> Result<Option<([u8; 4], &'a [u8])>> {
        if self.remaining() == 0 {
            return Ok(None);
        }
        self.section("extra sections");
        let tag = self.array::<4>()?;
        let len = self.u64()?;
        let len = usize::try_from(len).map_err(|_| self.error("section length overflows"))?;
        Ok(Some((tag, self.take(len)?)))
    }
}

pub fn encode_scene(scene: &Scene, w: &mut SectionWriter) {
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(scene.sh_degree);
    w.u64(scene.gaussians.len() as u64);
    for c in scene.background {
        w.f32(c);
    }
    for g in &scene.gaussians {
        g.mu.iter().for_each(|&x| w.f32(x));
        g.scale.iter().for_each(|&x| w.f32(x));
        g.rot.iter().for_each(|&x| w.f32(x));
        w.f32(g.opacity_logit);
        g.sh.iter().flatten().for_each(|&x| w.f32(x));
    }
    for e in scene.textures.entries() {
        w.u64(e.offset);
        w.u16(e.width);
        w.u16(e.height);
    }
    w.u64(scene.textures.texels().len() as u64);
    scene.textures.texels().iter().for_each(|&x| w.f32(x));
}

pub fn decode_scene(r: &mut ByteReader<'_>) -> Result<Scene> {
    r.section("header");
    if r.take(4)? != MAGIC {
        return Err(r.error("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.error(format!(
            "version mismatch: file {version}, supported {VERSION}"
        )));
    }
    let sh_degree = r.u32()?;
    if sh_degree > sh::MAX_SH_DEGREE {
        return Err(r.error(format!("sh degree {sh_degree} exceeds 3")));
    }
    let count = r.u64()?;
    let bands = sh::num_coeffs(sh_degree);
    let per_splat = 4 * (10 + 3 * bands) as u64;
    if count.saturating_mul(per_splat) > r.remaining() as u64 {
        return Err(r.error(format!(
            "truncated: {count} gaussians do not fit in the file"
        )));
    }
    let count = count as usize;
    let background = [r.f32()?, r.f32()?, r.f32()?];

    r.section("gaussians");
    let mut gaussians = Vec::with_capacity(count);
    for i in 0..count {
        let mu = Vec3::new(r.f32()?, r.f32()?, r.f32()?);
        let scale = [r.f32()?, r.f32()?];
        let rot = [r.f32()?, r.f32()?, r.f32()?, r.f32()?];
        let opacity_logit = r.f32()?;
        let mut coeffs = Vec::with_capacity(bands);
        for _ in 0..bands {
            coeffs.push([r.f32()?, r.f32()?, r.f32()?]);
        }
        if !(scale[0] > 0.0 && scale[1] > 0.0 && scale.iter().all(|s| s.is_finite())) {
            return Err(r.error(format!("gaussian {i}: scale {scale:?} is not positive")));
        }
        let norm = rot.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(r.error(format!("gaussian {i}: rotation norm {norm} is not unit")));
        }
        gaussians.push(Gaussian2D {
            mu,
            scale,
            rot,
            opacity_logit,
            sh: coeffs,
        });
    }

    r.section("atlas");
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        entries.push(AtlasEntry {
            offset: r.u64()?,
            width: r.u16()?,
            height: r.u16()?,
        });
    }
    let n_texels = r.u64()?;
    if n_texels.saturating_mul(4) > r.remaining() as u64 {
        return Err(r.error(format!("truncated: texel array of {n_texels} scalars")));
    }
    let mut texels = Vec::with_capacity(n_texels as usize);
    for _ in 0..n_texels {
        texels.push(r.f32()?);
    }
    let textures = TextureAtlas::from_parts(texels, entries)?;
    Ok(Scene {
        gaussians,
        textures,
        sh_degree,
        background,
    })
}

/// Writes through a temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    let mut w = SectionWriter::default();
    encode_scene(scene, &mut w);
    write_atomic(path, &w.buf)
}

/// Loads a scene file. Extra sections (for example optimizer state in a
/// checkpoint) are checked for framing and otherwise ignored.
pub fn load_scene(path: &Path) -> Result<Scene> {
    let data = fs::read(path)?;
    let mut r = ByteReader::new(&data);
    let scene = decode_scene(&mut r)?;
    while r.next_section()?.is_some() {}
    Ok(scene)
}
