//! RGB float images and binary PPM (P6) I/O.

use std::fs;
use std::path::Path;

use crate::error::{domain, Error, Result};

/// Row-major RGB image with channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * (width * height) as usize);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * (width as usize) * (height as usize) {
            return Err(domain(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        3 * (y * self.width + x) as usize
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        let k = self.index(x, y);
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let k = self.index(x, y);
        self.data[k..k + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Box-filter downscale by an integer factor.
    pub fn downscale(&self, factor: u32) -> Image {
        if factor <= 1 {
            return self.clone();
        }
        let (w, h) = ((self.width / factor).max(1), (self.height / factor).max(1));
        let mut out = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                let mut n = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        let (sx, sy) = (x * factor + dx, y * factor + dy);
                        if sx < self.width && sy < self.height {
                            let p = self.get(sx, sy);
                            (0..3).for_each(|c| acc[c] += p[c]);
                            n += 1.0;
                        }
                    }
                }
                out.set(x, y, acc.map(|a| a / n));
            }
        }
        out
    }

    /// 8-bit quantization used by PPM output.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
        let mut pos = 0;
        let mut token = || -> std::result::Result<String, String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("unexpected end of header".into());
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token()? != "P6" {
            return Err("not a binary P6 PPM".into());
        }
        let num = |s: String| {
            s.parse::<u32>()
                .map_err(|_| format!("bad header number {s:?}"))
        };
        let width = num(token()?)?;
        let height = num(token()?)?;
        let maxval = num(token()?)?;
        if maxval != 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        // exactly one whitespace byte separates header and raster
        let start = pos + 1;
        let n = 3 * (width as usize) * (height as usize);
        if bytes.len() < start + n {
            return Err("truncated raster".into());
        }
        let data = bytes[start..start + n]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_ppm())?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Image> {
        let bytes = fs::read(path)?;
        Image::decode_ppm(&bytes).map_err(|reason| Error::Parse {
            file: path.to_path_buf(),
            field: "ppm".into(),
            reason,
        })
    }
}
