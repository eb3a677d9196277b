//! Two-stage training: plain splats first, then textured splats with
//! adaptive texture upscaling.

pub mod dataset;
pub mod loss;
pub mod optim;
pub mod synth;

pub use dataset::{export_dataset, ingest_dataset, Dataset, View};
pub use loss::{l1, loss};
pub use optim::{AdamConfig, Group, LearningRates, Moments, Optimizer};
pub use synth::{synth_dataset, SynthKind, SynthSpec};

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptive::{apply_adaptive_step, AdaptiveConfig, UpscaleEvent};
use crate::error::{domain, Error, Result};
use crate::metrics::{psnr, ssim, MetricsRow};
use crate::model::{
    decode_scene, encode_scene, init_scene_with, write_atomic, Aabb, ByteReader, InitConfig, Scene,
    SectionWriter,
};
use crate::raster::{backward, render, GradientStats, RenderConfig, RenderMode};
use crate::texture::{
    atlas_rebuild, memory_report, resize_nearest, TextureFootprint, UpscaleStatus,
};

/// Tag of the optimizer section appended to checkpoints.
pub const OPTIMIZER_TAG: &[u8; 4] = b"OPTM";

const GAUSSIAN_GROUPS: [Group; 5] = [
    Group::Mu,
    Group::Scale,
    Group::Rot,
    Group::Opacity,
    Group::Sh,
];

/// How textures evolve in stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TexturePolicy {
    /// Gradient-driven upscaling events.
    Adaptive,
    /// Every texture is set to `n x n` when stage 2 starts and never changes.
    Uniform(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage1_iters: u64,
    pub stage2_iters: u64,
    pub lr: LearningRates,
    /// Position learning rate decays exponentially to `lr.mu * mu_lr_final_ratio`
    /// over the whole run.
    pub mu_lr_final_ratio: f64,
    pub loss_lambda: f64,
    pub adaptive: AdaptiveConfig,
    pub texture_policy: TexturePolicy,
    pub seed: u64,
    pub image_downscale: u32,
    pub num_splats: usize,
    pub sh_degree: u32,
    /// Test-split evaluation period in global iterations; 0 evaluates only at
    /// the end of each stage.
    pub eval_every: u64,
    pub background: [f64; 3],
    /// Initialization box; estimated from the cameras when unset.
    pub bounds: Option<Aabb>,
    /// Half-size of the estimated box as a fraction of the mean camera
    /// distance.
    pub init_extent: f64,
    pub init_scale_min: f64,
    pub init_scale_max: f64,
    pub init_opacity: f64,
    /// Clamp stored texture alpha to `[0, 1]` after every optimizer step.
    /// Without it an overshooting texel sits in the flat part of the
    /// sample-time clamp and never receives gradient again.
    pub project_alpha_texels: bool,
    pub adam: AdamConfig,
    pub render: RenderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_iters: 30_000,
            stage2_iters: 30_000,
            lr: LearningRates::default(),
            mu_lr_final_ratio: 0.01,
            loss_lambda: 0.2,
            adaptive: AdaptiveConfig::default(),
            texture_policy: TexturePolicy::Adaptive,
            seed: 0,
            image_downscale: 1,
            num_splats: 1000,
            sh_degree: 3,
            eval_every: 1000,
            background: [0.0; 3],
            bounds: None,
            init_extent: 0.35,
            init_scale_min: 0.02,
            init_scale_max: 0.08,
            init_opacity: 0.1,
            project_alpha_texels: true,
            adam: AdamConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        self.adaptive.validate()?;
        if !(0.0..=1.0).contains(&self.loss_lambda) {
            return Err(domain(format!(
                "loss_lambda {} outside [0, 1]",
                self.loss_lambda
            )));
        }
        if !(self.mu_lr_final_ratio > 0.0 && self.mu_lr_final_ratio.is_finite()) {
            return Err(domain("mu_lr_final_ratio must be positive"));
        }
        if self.num_splats == 0 {
            return Err(domain("num_splats must be at least 1"));
        }
        if self.image_downscale == 0 {
            return Err(domain("image_downscale must be at least 1"));
        }
        if self.sh_degree > 3 {
            return Err(domain(format!("sh_degree {} exceeds 3", self.sh_degree)));
        }
        if let TexturePolicy::Uniform(n) = self.texture_policy {
            if !n.is_power_of_two() || n > u32::from(u16::MAX) {
                return Err(domain(format!(
                    "uniform texture size {n} is not a power of two"
                )));
            }
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(domain("init_opacity must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn total_iters(&self) -> u64 {
        self.stage1_iters + self.stage2_iters
    }

    /// Learning rates in force at global iteration `iter` (0-based).
    pub fn lr_at(&self, iter: u64) -> LearningRates {
        let total = self.total_iters().max(1) as f64;
        let t = (iter as f64 / total).min(1.0);
        LearningRates {
            mu: self.lr.mu * self.mu_lr_final_ratio.powf(t),
            ..self.lr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub scene: Scene,
    pub optimizer: Optimizer,
    /// Completed global iterations.
    pub iteration: u64,
    pub stage: Stage,
    pub rng: ChaCha8Rng,
    /// Selection statistics accumulated since the last upscaling event.
    pub stats: GradientStats,
}

impl TrainState {
    pub fn new(scene: Scene, cfg: &TrainConfig) -> Self {
        let n = scene.len();
        Self {
            optimizer: Optimizer::new(&scene, cfg.adam),
            scene,
            iteration: 0,
            stage: Stage::One,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e),
            stats: GradientStats::new(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub state: TrainState,
    pub rows: Vec<MetricsRow>,
    pub events: Vec<UpscaleEvent>,
}

/// Mean PSNR, SSIM and L1 of full renders over the listed views.
pub fn evaluate(
    scene: &Scene,
    dataset: &Dataset,
    ids: &[usize],
    cfg: &RenderConfig,
) -> Result<(f64, f64, f64)> {
    if ids.is_empty() {
        return Err(domain("evaluate: no views"));
    }
    let (mut p, mut s, mut l) = (0.0, 0.0, 0.0);
    for &i in ids {
        let v = &dataset.views[i];
        let img = render(scene, &v.camera, RenderMode::Full, cfg).image;
        p += psnr(&img, &v.image)?;
        s += ssim(&img, &v.image)?;
        l += l1(&img, &v.image)?;
    }
    let n = ids.len() as f64;
    Ok((p / n, s / n, l / n))
}

fn initial_scene(dataset: &Dataset, cfg: &TrainConfig) -> Result<Scene> {
    let bounds = cfg
        .bounds
        .unwrap_or_else(|| dataset.estimate_bounds(cfg.init_extent));
    let init = InitConfig {
        scale_min: cfg.init_scale_min,
        scale_max: cfg.init_scale_max,
        opacity: cfg.init_opacity,
        background: cfg.background,
    };
    init_scene_with(cfg.num_splats, bounds, cfg.seed, cfg.sh_degree, &init)
}

/// Resizes every texture to `n x n` (nearest texel). Returns how many
/// textures changed.
fn make_uniform(state: &mut TrainState, n: u32) -> Result<u64> {
    let old = state.scene.textures.clone();
    let mut changed = 0;
    let textures = old
        .unpack_all()
        .into_iter()
        .map(|t| {
            if t.dims() == (n, n) {
                return Ok(t);
            }
            changed += 1;
            resize_nearest(&t, n, n)
        })
        .collect::<Result<Vec<_>>>()?;
    state.scene.textures = atlas_rebuild(&textures);
    state.optimizer.remap_texels(&old, &state.scene.textures);
    Ok(changed)
}

fn memory_bytes(scene: &Scene) -> Result<u64> {
    let sizes = scene.textures.sizes();
    Ok(memory_report(
        scene.len() as u64,
        scene.sh_degree,
        TextureFootprint::Sizes(&sizes),
        4,
    )?
    .total_bytes)
}

/// Runs both stages from a seeded initialization.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let dataset = dataset.downscaled(cfg.image_downscale)?;
    if dataset.train.is_empty() {
        return Err(domain("training split is empty"));
    }
    let scene = initial_scene(&dataset, cfg)?;
    let mut state = TrainState::new(scene, cfg);
    let mut rows = Vec::new();
    let mut events = Vec::new();
    let mut n_upscaled = 0;
    let total = cfg.total_iters();

    for iter in 1..=total {
        let stage2_iter = iter.checked_sub(cfg.stage1_iters).filter(|&i| i > 0);
        if stage2_iter == Some(1) {
            state.stage = Stage::Two;
            state.stats.reset();
            if let TexturePolicy::Uniform(n) = cfg.texture_policy {
                n_upscaled += make_uniform(&mut state, n)?;
            }
        }
        let (mode, groups): (RenderMode, &[Group]) = match state.stage {
            Stage::One => (RenderMode::NoTexture, &GAUSSIAN_GROUPS),
            Stage::Two => (RenderMode::Full, &Group::ALL),
        };
        let view = &dataset.views[dataset.train[state.rng.random_range(0..dataset.train.len())]];
        let out = render(&state.scene, &view.camera, mode, &cfg.render);
        let (_, d_image) = loss(&out.image, &view.image, cfg.loss_lambda)?;
        let (grads, stats) = backward(&state.scene, &view.camera, mode, &cfg.render, &d_image);
        if !grads.is_finite() {
            return Err(domain(format!("non-finite gradient at iteration {iter}")));
        }
        state
            .optimizer
            .step(&mut state.scene, &grads, &cfg.lr_at(iter - 1), groups)?;
        if cfg.project_alpha_texels && state.stage == Stage::Two {
            for t in state.scene.textures.texels_mut().chunks_exact_mut(4) {
                t[3] = t[3].clamp(0.0, 1.0);
            }
        }
        state.iteration = iter;

        if let Some(i2) = stage2_iter {
            state.stats.accumulate(&stats);
            if cfg.texture_policy == TexturePolicy::Adaptive && cfg.adaptive.is_event(i2) {
                let old = state.scene.textures.clone();
                let step_events =
                    apply_adaptive_step(&mut state.scene, &mut state.stats, &cfg.adaptive, i2)?;
                n_upscaled += step_events
                    .iter()
                    .filter(|e| e.status != UpscaleStatus::Capped)
                    .count() as u64;
                if old.sizes() != state.scene.textures.sizes() {
                    state.optimizer.remap_texels(&old, &state.scene.textures);
                }
                for e in &step_events {
                    log::debug!("{e}");
                }
                events.extend(step_events);
            }
        }

        let due = (cfg.eval_every > 0 && iter % cfg.eval_every == 0)
            || iter == cfg.stage1_iters
            || iter == total;
        if due {
            let (p, s, l) = evaluate(&state.scene, &dataset, &dataset.test, &cfg.render)?;
            let row = MetricsRow {
                iter,
                psnr: p,
                ssim: s,
                l1: l,
                mem_bytes: memory_bytes(&state.scene)?,
                n_upscaled,
            };
            log::info!("{}", row.log_line());
            rows.push(row);
        }
    }
    Ok(TrainReport {
        state,
        rows,
        events,
    })
}

fn encode_optimizer(state: &TrainState) -> Vec<u8> {
    let mut w = SectionWriter::default();
    w.u64(state.iteration);
    w.u32(match state.stage {
        Stage::One => 1,
        Stage::Two => 2,
    });
    w.bytes(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.bytes(&state.rng.get_word_pos().to_le_bytes());
    let cfg = state.optimizer.cfg;
    for x in [cfg.beta1, cfg.beta2, cfg.eps] {
        w.f64(x);
    }
    for m in &state.optimizer.groups {
        w.u64(m.len() as u64);
        m.step.iter().for_each(|&x| w.u64(x));
        m.m.iter().for_each(|&x| w.f64(x));
        m.v.iter().for_each(|&x| w.f64(x));
    }
    w.u64(state.stats.len() as u64);
    state.stats.accum_abs_grad.iter().for_each(|&x| w.f64(x));
    state.stats.pixel_count.iter().for_each(|&x| w.u64(x));
    w.buf
}

fn read_len(r: &mut ByteReader<'_>, elem: usize) -> Result<usize> {
    let n = r.u64()?;
    if n.saturating_mul(elem as u64) > r.remaining() as u64 {
        return Err(r.error(format!("truncated: {n} entries do not fit")));
    }
    Ok(n as usize)
}

fn decode_optimizer(payload: &[u8], scene: Scene) -> Result<TrainState> {
    let mut r = ByteReader::new(payload);
    r.section("optimizer");
    let iteration = r.u64()?;
    let stage = match r.u32()? {
        1 => Stage::One,
        2 => Stage::Two,
        s => return Err(r.error(format!("unknown stage marker {s}"))),
    };
    let seed: [u8; 32] = r.take(32)?.try_into().expect("length checked");
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("length checked"));
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let cfg = AdamConfig {
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let mut optimizer = Optimizer::new(&scene, cfg);
    for (g, slot) in Group::ALL.iter().zip(optimizer.groups.iter_mut()) {
        let n = read_len(&mut r, 24)?;
        if n != slot.len() {
            return Err(r.error(format!(
                "group {} has {n} moments, scene needs {}",
                g.name(),
                slot.len()
            )));
        }
        let step = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let m = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let v = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        *slot = Moments { step, m, v };
    }
    let n = read_len(&mut r, 16)?;
    if n != scene.len() {
        return Err(r.error(format!("stats for {n} splats, scene has {}", scene.len())));
    }
    let accum_abs_grad = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let pixel_count = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }
    Ok(TrainState {
        scene,
        optimizer,
        iteration,
        stage,
        rng,
        stats: GradientStats {
            accum_abs_grad,
            pixel_count,
        },
    })
}

/// Checkpoint bytes: the scene container followed by an optimizer section.
pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut w = SectionWriter::default();
    encode_scene(&state.scene, &mut w);
    let payload = encode_optimizer(state);
    w.section(OPTIMIZER_TAG, &payload);
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut r = ByteReader::new(bytes);
    let scene = decode_scene(&mut r)?;
    let mut state = None;
    while let Some((tag, payload)) = r.next_section()? {
        if &tag == OPTIMIZER_TAG {
            state = Some(decode_optimizer(payload, scene.clone())?);
        }
    }
    state.ok_or(Error::Format {
        section: "optimizer",
        reason: "checkpoint has no optimizer section".into(),
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(state))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    decode_checkpoint(&fs::read(path)?)
}
