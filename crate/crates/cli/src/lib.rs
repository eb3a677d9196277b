//! Command-line front end: dataset synthesis, training, rendering,
//! evaluation and statistics export.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use texsplat::adaptive::event_log_header;
use texsplat::metrics::{highlight_render, metrics_csv, resolution_histogram, timing_report};
use texsplat::model::load_scene;
use texsplat::texture::{memory_report, TextureFootprint};
use texsplat::train::{
    evaluate, export_dataset, ingest_dataset, save_checkpoint, synth_dataset, train, Dataset,
    SynthKind, SynthSpec,
};
use texsplat::{Camera, RenderMode, Scene, Vec3};

use crate::config::{keys_help, CliConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CHECKPOINT_FILE: &str = "checkpoint.a2tg";
pub const LOCK_FILE: &str = ".texsplat.lock";

#[derive(Debug, Parser)]
#[command(
    name = "texsplat",
    version,
    about = "2D Gaussian splatting with adaptive anisotropic textures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` config key.
    #[arg(long)]
    seed: Option<u64>,
    /// Rasterizer worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a procedural card scene into a dataset directory.
    Synth {
        /// flat, checker or stripes.
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 12)]
        views: usize,
        /// Square image side in pixels.
        #[arg(long, default_value_t = 64)]
        res: u32,
        /// Splats per card side in the ground-truth scene.
        #[arg(long)]
        grid: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a scene on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Per-axis texture size cap; same as `--set max_tex=N`.
        #[arg(long)]
        max_tex: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Render a checkpoint from a dataset camera or an explicit pose.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset whose cameras `--camera` indexes.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        camera: usize,
        /// Row-major world-to-screen matrix (16 comma-separated reals).
        #[arg(long, requires_all = ["width", "height", "origin"])]
        pose: Option<String>,
        /// Camera position x,y,z for `--pose`.
        #[arg(long)]
        origin: Option<String>,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        /// full, no-texture, no-base-color or alpha-only.
        #[arg(long, default_value = "full")]
        mode: String,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Texture-resolution histogram, render timing and a highlight render.
    Stats {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset providing the camera; without it a camera is placed in
        /// front of the scene.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        camera: usize,
        /// Frames rendered for timing.
        #[arg(long, default_value_t = 10)]
        frames: u32,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<texsplat::Error> for CliError {
    fn from(e: texsplat::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T = ()> = Result<T, CliError>;

/// Exclusive claim on an output directory, released on drop.
struct OutLock(PathBuf);

impl OutLock {
    fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| {
                format!(
                    "output directory {} is in use (remove {} if stale)",
                    dir.display(),
                    path.display()
                )
            })?;
        Ok(Self(path))
    }
}

impl Drop for OutLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn build_config(common: &Common) -> CliResult<CliConfig> {
    let mut cfg = CliConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path).map_err(usage)?;
    }
    for pair in &common.set {
        cfg.set_pair(pair).map_err(usage)?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> CliResult<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| usage("--out <dir> is required"))
}

fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    Ok(ingest_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?)
}

fn load_checkpoint_scene(path: &Path) -> CliResult<Scene> {
    Ok(load_scene(path).with_context(|| format!("loading checkpoint {}", path.display()))?)
}

fn dataset_camera(ds: &Dataset, index: usize) -> CliResult<Camera> {
    ds.views
        .get(index)
        .map(|v| v.camera.clone())
        .ok_or_else(|| {
            usage(format!(
                "camera index {index} out of range (dataset has {} views)",
                ds.views.len()
            ))
        })
}

fn parse_reals(s: &str, n: usize, what: &str) -> CliResult<Vec<f64>> {
    let xs: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("{what}: not a list of numbers")))?;
    if xs.len() != n {
        return Err(usage(format!(
            "{what}: expected {n} numbers, got {}",
            xs.len()
        )));
    }
    Ok(xs)
}

/// Camera looking at the splat centroid along +z from a distance that frames
/// every center.
fn overview_camera(scene: &Scene) -> CliResult<Camera> {
    let n = scene.len().max(1) as f64;
    let center = scene.gaussians.iter().map(|g| g.mu).sum::<Vec3>() / n;
    let radius = scene
        .gaussians
        .iter()
        .map(|g| (g.mu - center).norm())
        .fold(1e-3, f64::max);
    let eye = center - Vec3::z() * (3.0 * radius);
    Ok(Camera::look_at(
        eye,
        center,
        Vec3::new(0.0, -1.0, 0.0),
        0.9,
        128,
        128,
    )?)
}

fn cmd_synth(
    scene: &str,
    views: usize,
    res: u32,
    grid: Option<usize>,
    common: &Common,
) -> CliResult {
    let cfg = build_config(common)?;
    let kind: SynthKind = scene
        .parse()
        .map_err(|e: texsplat::Error| usage(e.to_string()))?;
    if views < 2 {
        return Err(usage(format!("--views must be at least 2, got {views}")));
    }
    if res == 0 {
        return Err(usage("--res must be positive"));
    }
    let out = out_dir(common)?;
    let _lock = OutLock::acquire(out)?;
    let mut spec = SynthSpec::new(kind, views, res, cfg.train.seed);
    if let Some(g) = grid {
        spec.grid = g;
    }
    let (ds, gt) = synth_dataset(&spec)?;
    export_dataset(&ds, out)?;
    texsplat::model::save_scene(&gt, &out.join("ground_truth.a2tg"))?;
    let bg = gt.background;
    fs::write(
        out.join("background.txt"),
        format!("background = {},{},{}\n", bg[0], bg[1], bg[2]),
    )?;
    println!(
        "wrote {} views of '{kind}' to {}",
        ds.views.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(data: &Path, max_tex: Option<u32>, common: &Common) -> CliResult {
    let mut cfg = build_config(common)?;
    if let Some(m) = max_tex {
        cfg.set("max_tex", &m.to_string()).map_err(usage)?;
    }
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    let out = out_dir(common)?;
    let ds = load_dataset(data)?;
    let _lock = OutLock::acquire(out)?;
    let effective = cfg.to_text();
    fs::write(out.join("config.txt"), &effective)?;

    let start = Instant::now();
    let report = train(&ds, &cfg.train)?;
    eprintln!(
        "trained {} iterations in {:.1}s",
        report.state.iteration,
        start.elapsed().as_secs_f64()
    );

    save_checkpoint(&report.state, &out.join(CHECKPOINT_FILE))?;
    fs::write(out.join("metrics.csv"), metrics_csv(&report.rows))?;
    let mut log = String::new();
    for line in effective.lines() {
        let _ = writeln!(log, "# {line}");
    }
    let _ = writeln!(log, "# iter psnr ssim l1 mem_bytes n_upscaled");
    for r in &report.rows {
        let _ = writeln!(log, "{}", r.log_line());
    }
    fs::write(out.join("run.log"), log)?;
    let mut events = event_log_header(&cfg.train.adaptive);
    events.push('\n');
    for e in &report.events {
        let _ = writeln!(events, "{e}");
    }
    fs::write(out.join("events.log"), events)?;
    if let Some(last) = report.rows.last() {
        println!("{}", last.log_line());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    checkpoint: &Path,
    data: Option<&Path>,
    camera: usize,
    pose: Option<&str>,
    origin: Option<&str>,
    size: (Option<u32>, Option<u32>),
    mode: &str,
    common: &Common,
) -> CliResult {
    let cfg = build_config(common)?;
    let mode = RenderMode::parse(mode).ok_or_else(|| {
        usage(format!(
            "unknown mode '{mode}' (expected full, no-texture, no-base-color or alpha-only)"
        ))
    })?;
    let out = out_dir(common)?;
    let cam = match (pose, data) {
        (Some(p), _) => {
            let m: [f64; 16] = parse_reals(p, 16, "--pose")?
                .try_into()
                .expect("length checked");
            let o = parse_reals(origin.unwrap_or_default(), 3, "--origin")?;
            let (w, h) = (size.0.unwrap_or(0), size.1.unwrap_or(0));
            Camera::from_row_major(&m, w, h, Vec3::new(o[0], o[1], o[2]))
                .map_err(|e| usage(e.to_string()))?
        }
        (None, Some(d)) => dataset_camera(&load_dataset(d)?, camera)?,
        (None, None) => return Err(usage("render needs --data with --camera, or --pose")),
    };
    let scene = load_checkpoint_scene(checkpoint)?;
    let _lock = OutLock::acquire(out)?;
    let image = texsplat::raster::render(&scene, &cam, mode, &cfg.train.render).image;
    let name = match pose {
        Some(_) => format!("render_pose_{}.ppm", mode.name()),
        None => format!("render_{camera:03}_{}.ppm", mode.name()),
    };
    image.write_ppm(&out.join(&name))?;
    println!("wrote {}", out.join(name).display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data: &Path, common: &Common) -> CliResult {
    let cfg = build_config(common)?;
    let out = out_dir(common)?;
    let scene = load_checkpoint_scene(checkpoint)?;
    let ds = load_dataset(data)?;
    let _lock = OutLock::acquire(out)?;
    let (psnr, ssim, l1) = evaluate(&scene, &ds, &ds.test, &cfg.train.render)?;
    let sizes = scene.textures.sizes();
    let mem = memory_report(
        scene.len() as u64,
        scene.sh_degree,
        TextureFootprint::Sizes(&sizes),
        4,
    )?;
    let csv = format!(
        "split,views,num_gaussians,psnr,ssim,l1,base_bytes,texture_bytes,total_bytes,memory_mb,overhead_percent,memory\n\
         test,{},{},{psnr:.6},{ssim:.6},{l1:.6},{},{},{},{:.3},{:.1},{}\n",
        ds.test.len(),
        scene.len(),
        mem.base_bytes,
        mem.texture_bytes,
        mem.total_bytes,
        mem.total_mb(),
        mem.overhead_percent,
        mem.table_cell()
    );
    fs::write(out.join("eval.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_stats(
    checkpoint: &Path,
    data: Option<&Path>,
    camera: usize,
    frames: u32,
    common: &Common,
) -> CliResult {
    let cfg = build_config(common)?;
    if frames == 0 {
        return Err(usage("--frames must be at least 1"));
    }
    let out = out_dir(common)?;
    let cam = match data {
        Some(d) => Some(dataset_camera(&load_dataset(d)?, camera)?),
        None => None,
    };
    let scene = load_checkpoint_scene(checkpoint)?;
    let cam = match cam {
        Some(c) => c,
        None => overview_camera(&scene)?,
    };
    let _lock = OutLock::acquire(out)?;
    let hist = resolution_histogram(&scene);
    fs::write(out.join("histogram.csv"), hist.to_csv())?;
    let timing = timing_report(&scene, &cam, frames, &cfg.train.render)?;
    fs::write(out.join("timing.csv"), timing.to_csv())?;
    highlight_render(&scene, &cam, &cfg.train.render).write_ppm(&out.join("highlight.ppm"))?;
    println!(
        "splats={} 1x1={:.1}% square>1={:.1}% non_square={:.1}% fps={:.2}",
        hist.total,
        hist.one_by_one_percent(),
        hist.square_gt1_percent(),
        hist.non_square_percent(),
        timing.fps
    );
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Synth {
            scene,
            views,
            res,
            grid,
            common,
        } => cmd_synth(scene, *views, *res, *grid, common),
        Command::Train {
            data,
            max_tex,
            common,
        } => cmd_train(data, *max_tex, common),
        Command::Render {
            checkpoint,
            data,
            camera,
            pose,
            origin,
            width,
            height,
            mode,
            common,
        } => cmd_render(
            checkpoint,
            data.as_deref(),
            *camera,
            pose.as_deref(),
            origin.as_deref(),
            (*width, *height),
            mode,
            common,
        ),
        Command::Eval {
            checkpoint,
            data,
            common,
        } => cmd_eval(checkpoint, data, common),
        Command::Stats {
            checkpoint,
            data,
            camera,
            frames,
            common,
        } => cmd_stats(checkpoint, data.as_deref(), *camera, *frames, common),
    }
}

fn command() -> clap::Command {
    let help = keys_help();
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    for name in names {
        let help = help.clone();
        cmd = cmd.mut_subcommand(name, |s| s.after_help(help));
    }
    cmd
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}
