//! Gradient-driven selection of splats and anisotropic texture upscaling.

use std::fmt;

use crate::error::{domain, Result};
use crate::model::Scene;
use crate::raster::GradientStats;
use crate::texture::{atlas_rebuild, memory_report, upscale, TextureFootprint, UpscaleStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    /// Anisotropy ratio threshold.
    pub k_a: f64,
    /// Small-axis threshold in world units.
    pub k_s: f64,
    /// Threshold on the mean per-pixel positional gradient magnitude.
    pub k_g: f64,
    /// Upscaling runs every `cadence` stage-2 iterations.
    pub cadence: u64,
    /// Per-axis texture size cap (power of two).
    pub max_dim: u32,
    /// Last stage-2 iteration at which upscaling may run; 0 means no limit.
    pub upscale_until: u64,
    /// Stop upscaling once total parameter bytes (4-byte scalars) would
    /// exceed this.
    pub memory_budget: Option<u64>,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            k_a: 4.0,
            k_s: 0.01,
            k_g: 2e-5,
            cadence: 500,
            max_dim: 4,
            upscale_until: 1000,
            memory_budget: None,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_a > 0.0 && self.k_s > 0.0 && self.k_g > 0.0) {
            return Err(domain("adaptive thresholds must be positive"));
        }
        if self.cadence == 0 {
            return Err(domain("adaptive cadence must be at least 1"));
        }
        if !self.max_dim.is_power_of_two() || self.max_dim > u32::from(u16::MAX) {
            return Err(domain(format!(
                "max_dim {} is not a power of two",
                self.max_dim
            )));
        }
        Ok(())
    }

    /// Whether stage-2 iteration `iter` (1-based) is an upscaling event.
    pub fn is_event(&self, iter: u64) -> bool {
        iter > 0
            && iter % self.cadence == 0
            && (self.upscale_until == 0 || iter <= self.upscale_until)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UpscaleDecision {
    pub double_u: bool,
    pub double_v: bool,
}

/// Ids whose mean per-pixel gradient magnitude strictly exceeds `k_g`,
/// ascending.
pub fn select_candidates(stats: &GradientStats, cfg: &AdaptiveConfig) -> Vec<usize> {
    (0..stats.len())
        .filter(|&i| stats.mean(i) > cfg.k_g)
        .collect()
}

/// Which texture axes to double for a splat with tangent scales `scale`.
pub fn upscale_decision(scale: [f64; 2], cfg: &AdaptiveConfig) -> UpscaleDecision {
    let [sx, sy] = scale;
    if sx / sy > cfg.k_a && sy < cfg.k_s {
        UpscaleDecision {
            double_u: true,
            double_v: false,
        }
    } else if sy / sx > cfg.k_a && sx < cfg.k_s {
        UpscaleDecision {
            double_u: false,
            double_v: true,
        }
    } else {
        UpscaleDecision {
            double_u: true,
            double_v: true,
        }
    }
}

/// One texture touched by an adaptive step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpscaleEvent {
    pub iteration: u64,
    pub id: usize,
    pub old: (u32, u32),
    pub new: (u32, u32),
    pub status: UpscaleStatus,
}

impl fmt::Display for UpscaleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} id={} old={}x{} new={}x{} reason={}",
            self.iteration,
            self.id,
            self.old.0,
            self.old.1,
            self.new.0,
            self.new.1,
            self.status.as_str()
        )
    }
}

/// First line of an event log: records how the statistic is normalized and
/// the thresholds in force.
pub fn event_log_header(cfg: &AdaptiveConfig) -> String {
    format!(
        "# selection: accum_abs_grad / pixel_count > k_G; k_G={} k_A={} k_S={} cadence={} max_dim={}",
        cfg.k_g, cfg.k_a, cfg.k_s, cfg.cadence, cfg.max_dim
    )
}

/// Upscales the textures of every selected splat, rebuilds the atlas and
/// resets `stats`. Returns one event per changed or capped texture.
pub fn apply_adaptive_step(
    scene: &mut Scene,
    stats: &mut GradientStats,
    cfg: &AdaptiveConfig,
    iteration: u64,
) -> Result<Vec<UpscaleEvent>> {
    if stats.len() != scene.len() {
        return Err(domain(format!(
            "stats for {} splats, scene has {}",
            stats.len(),
            scene.len()
        )));
    }
    let candidates = select_candidates(stats, cfg);
    stats.reset();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let mut textures = scene.textures.unpack_all();
    let mut sizes = scene.textures.sizes();
    let mut events = Vec::new();
    for id in candidates {
        let d = upscale_decision(scene.gaussians[id].scale, cfg);
        let old = textures[id].dims();
        let (tex, status) = upscale(&textures[id], d.double_u, d.double_v, cfg.max_dim)?;
        if let Some(budget) = cfg.memory_budget {
            sizes[id] = tex.dims();
            let report = memory_report(
                scene.len() as u64,
                scene.sh_degree,
                TextureFootprint::Sizes(&sizes),
                4,
            )?;
            if report.total_bytes > budget {
                log::info!(
                    "memory budget {budget} reached at iteration {iteration}; upscaling stopped"
                );
                break;
            }
        }
        events.push(UpscaleEvent {
            iteration,
            id,
            old,
            new: tex.dims(),
            status,
        });
        textures[id] = tex;
    }
    scene.textures = atlas_rebuild(&textures);
    Ok(events)
}
