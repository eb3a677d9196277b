//! Posed image collections and the on-disk dataset format.
//!
//! A dataset directory holds `cameras.json`, a list of records
//! `{file, width, height, world_to_screen: [16 reals, row-major], origin: [3 reals]}`,
//! plus one binary PPM per record.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{domain, Error, Result};
use crate::geometry::Camera;
use crate::image::Image;
use crate::model::Aabb;
use crate::Vec3;

pub const CAMERAS_FILE: &str = "cameras.json";
/// Every `TEST_EVERY`-th view (starting with the first) is held out.
pub const TEST_EVERY: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub file: String,
    pub camera: Camera,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    /// Holds out every eighth view. A single-view dataset uses its only view
    /// for both splits.
    pub fn new(views: Vec<View>) -> Result<Self> {
        if views.is_empty() {
            return Err(domain("dataset has no views"));
        }
        let (w, h) = (views[0].image.width, views[0].image.height);
        for v in &views {
            if (v.image.width, v.image.height) != (w, h)
                || (v.camera.width(), v.camera.height()) != (w, h)
            {
                return Err(domain(format!("view {} is not {w}x{h}", v.file)));
            }
        }
        let test: Vec<usize> = (0..views.len()).filter(|i| i % TEST_EVERY == 0).collect();
        let mut train: Vec<usize> = (0..views.len()).filter(|i| i % TEST_EVERY != 0).collect();
        if train.is_empty() {
            train = test.clone();
        }
        Ok(Self { views, train, test })
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.views[0].image.width, self.views[0].image.height)
    }

    /// Box-downscales every image and its camera by an integer factor.
    pub fn downscaled(&self, factor: u32) -> Result<Self> {
        if factor <= 1 {
            return Ok(self.clone());
        }
        let views = self
            .views
            .iter()
            .map(|v| {
                Ok(View {
                    file: v.file.clone(),
                    camera: v.camera.downscaled(factor)?,
                    image: v.image.downscale(factor),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            views,
            train: self.train.clone(),
            test: self.test.clone(),
        })
    }

    /// Rough scene extent: the point closest (in least squares) to every
    /// optical axis, padded by `extent` times the mean camera distance.
    pub fn estimate_bounds(&self, extent: f64) -> Aabb {
        let mut a = nalgebra::Matrix3::<f64>::zeros();
        let mut b = Vec3::zeros();
        for v in &self.views {
            let w = v.camera.world_to_screen();
            let fwd = Vec3::new(w[(3, 0)], w[(3, 1)], w[(3, 2)]).normalize();
            let p = nalgebra::Matrix3::identity() - fwd * fwd.transpose();
            a += p;
            b += p * v.camera.origin();
        }
        let center = a.try_inverse().map_or_else(
            || self.views.iter().map(|v| v.camera.origin()).sum::<Vec3>() / self.views.len() as f64,
            |inv| inv * b,
        );
        let dist = self
            .views
            .iter()
            .map(|v| (v.camera.origin() - center).norm())
            .sum::<f64>()
            / self.views.len() as f64;
        let r = Vec3::repeat(extent * dist.max(1e-6));
        Aabb::new(center - r, center + r)
    }
}

fn parse_err(file: &Path, field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        field: field.into(),
        reason: reason.into(),
    }
}

fn numbers(rec: &Value, key: &str, n: usize, file: &Path, at: &str) -> Result<Vec<f64>> {
    let field = format!("{at}.{key}");
    let arr = rec
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err(file, &field, "missing or not an array"))?;
    if arr.len() != n {
        return Err(parse_err(
            file,
            &field,
            format!("expected {n} numbers, got {}", arr.len()),
        ));
    }
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| parse_err(file, &field, "non-numeric entry"))
        })
        .collect()
}

/// Reads a dataset directory. Every PPM in the directory must have a camera
/// record and every record must name an existing image.
pub fn ingest_dataset(dir: &Path) -> Result<Dataset> {
    let cam_path = dir.join(CAMERAS_FILE);
    let text =
        fs::read_to_string(&cam_path).map_err(|e| parse_err(&cam_path, "file", e.to_string()))?;
    let root: Value =
        serde_json::from_str(&text).map_err(|e| parse_err(&cam_path, "json", e.to_string()))?;
    let records = root
        .as_array()
        .ok_or_else(|| parse_err(&cam_path, "root", "expected a list of camera records"))?;
    let mut views = Vec::with_capacity(records.len());
    let mut named = BTreeSet::new();
    for (i, rec) in records.iter().enumerate() {
        let at = format!("[{i}]");
        let file = rec
            .get("file")
            .and_then(Value::as_str)
            .ok_or_else(|| parse_err(&cam_path, format!("{at}.file"), "missing or not a string"))?
            .to_string();
        let dim = |key: &str| -> Result<u32> {
            rec.get(key)
                .and_then(Value::as_u64)
                .and_then(|x| u32::try_from(x).ok())
                .filter(|&x| x > 0)
                .ok_or_else(|| {
                    parse_err(
                        &cam_path,
                        format!("{at}.{key}"),
                        "missing or not a positive integer",
                    )
                })
        };
        let (width, height) = (dim("width")?, dim("height")?);
        let m: [f64; 16] = numbers(rec, "world_to_screen", 16, &cam_path, &at)?
            .try_into()
            .expect("length checked");
        let o = numbers(rec, "origin", 3, &cam_path, &at)?;
        let camera = Camera::from_row_major(&m, width, height, Vec3::new(o[0], o[1], o[2]))
            .map_err(|e| parse_err(&cam_path, format!("{at}.world_to_screen"), e.to_string()))?;
        let img_path = dir.join(&file);
        if !img_path.is_file() {
            return Err(parse_err(
                &img_path,
                format!("{at}.file"),
                "image file not found",
            ));
        }
        let image = Image::read_ppm(&img_path)?;
        if (image.width, image.height) != (width, height) {
            return Err(parse_err(
                &img_path,
                "dimensions",
                format!(
                    "image is {}x{}, camera record says {width}x{height}",
                    image.width, image.height
                ),
            ));
        }
        named.insert(PathBuf::from(&file));
        views.push(View {
            file,
            camera,
            image,
        });
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "ppm") {
            let rel = PathBuf::from(path.file_name().expect("file entry"));
            if !named.contains(&rel) {
                return Err(parse_err(
                    &path,
                    "cameras.json",
                    format!("no camera entry for image {}", rel.display()),
                ));
            }
        }
    }
    Dataset::new(views)
}

/// Writes `cameras.json` and one PPM per view.
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let records: Vec<Value> = ds
        .views
        .iter()
        .map(|v| {
            let o = v.camera.origin();
            json!({
                "file": v.file,
                "width": v.image.width,
                "height": v.image.height,
                "world_to_screen": v.camera.to_row_major().to_vec(),
                "origin": [o.x, o.y, o.z],
            })
        })
        .collect();
    for v in &ds.views {
        v.image.write_ppm(&dir.join(&v.file))?;
    }
    let text = serde_json::to_string_pretty(&Value::Array(records)).expect("json values serialize");
    fs::write(dir.join(CAMERAS_FILE), text + "\n")?;
    Ok(())
}
