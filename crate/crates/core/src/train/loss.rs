//! Photometric loss `(1 - lambda) * L1 + lambda * (1 - SSIM)` and its exact
//! gradient with respect to the rendered image.

use crate::error::{domain, Result};
use crate::image::Image;
use crate::metrics::ssim_impl;

/// Mean absolute error.
pub fn l1(rendered: &Image, target: &Image) -> Result<f64> {
    if !rendered.same_shape(target) {
        return Err(domain("l1: image shapes differ"));
    }
    let n = rendered.data.len().max(1) as f64;
    Ok(rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// Loss value and `dL/d rendered`. The L1 subgradient at zero is zero.
pub fn loss(rendered: &Image, target: &Image, lambda: f64) -> Result<(f64, Image)> {
    if !rendered.same_shape(target) {
        return Err(domain(format!(
            "loss: rendered {}x{} vs target {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(domain(format!("loss lambda {lambda} outside [0, 1]")));
    }
    let n = rendered.data.len().max(1) as f64;
    let l1v = l1(rendered, target)?;
    let mut grad = Image::new(rendered.width, rendered.height);
    for ((g, a), b) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = a - b;
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g = (1.0 - lambda) * sign / n;
    }
    if lambda == 0.0 {
        return Ok((l1v, grad));
    }
    let (s, ds) = ssim_impl(rendered, target, true)?;
    let ds = ds.expect("gradient requested");
    for (g, d) in grad.data.iter_mut().zip(&ds.data) {
        *g -= lambda * d;
    }
    Ok(((1.0 - lambda) * l1v + lambda * (1.0 - s), grad))
}
