//! `key = value` run configuration layered over the library defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use texsplat::model::Aabb;
use texsplat::train::{TexturePolicy, TrainConfig};
use texsplat::Vec3;

type Getter = fn(&TrainConfig) -> String;
type Setter = fn(&mut TrainConfig, &str) -> Result<(), String>;

pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
    get: Getter,
    set: Setter,
}

fn parse<T: FromStr>(v: &str) -> Result<T, String> {
    v.trim().parse().map_err(|_| format!("cannot parse '{v}'"))
}

fn reals<const N: usize>(v: &str) -> Result<[f64; N], String> {
    let xs: Vec<f64> = v.split(',').map(parse).collect::<Result<_, _>>()?;
    xs.try_into()
        .map_err(|_| format!("expected {N} comma-separated numbers, got '{v}'"))
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

macro_rules! key {
    ($name:literal, $help:literal, $($field:ident).+) => {
        Key {
            name: $name,
            help: $help,
            get: |c| c.$($field).+.to_string(),
            set: |c, v| {
                c.$($field).+ = parse(v)?;
                Ok(())
            },
        }
    };
}

pub const KEYS: &[Key] = &[
    key!(
        "stage1_iters",
        "stage-1 iterations (no textures)",
        stage1_iters
    ),
    key!(
        "stage2_iters",
        "stage-2 iterations (textured, adaptive)",
        stage2_iters
    ),
    key!("num_splats", "number of splats", num_splats),
    key!("sh_degree", "spherical-harmonic degree, 0..=3", sh_degree),
    key!("seed", "initialization and view-sampling seed", seed),
    key!(
        "image_downscale",
        "integer image downscale factor",
        image_downscale
    ),
    key!(
        "eval_every",
        "test evaluation period in iterations (0: stage ends only)",
        eval_every
    ),
    key!("loss_lambda", "SSIM weight in the loss", loss_lambda),
    key!("lr_mu", "position learning rate", lr.mu),
    key!("lr_scale", "log-scale learning rate", lr.scale),
    key!("lr_rot", "rotation learning rate", lr.rot),
    key!("lr_opacity", "opacity-logit learning rate", lr.opacity),
    key!("lr_sh", "SH coefficient learning rate", lr.sh),
    key!(
        "lr_rgb_texels",
        "texture color learning rate",
        lr.rgb_texels
    ),
    key!(
        "lr_alpha_texels",
        "texture alpha learning rate",
        lr.alpha_texels
    ),
    key!(
        "mu_lr_final_ratio",
        "final/initial position learning rate (exponential decay)",
        mu_lr_final_ratio
    ),
    key!("adam_beta1", "Adam first-moment decay", adam.beta1),
    key!("adam_beta2", "Adam second-moment decay", adam.beta2),
    key!("adam_eps", "Adam epsilon", adam.eps),
    key!("k_a", "anisotropy ratio threshold", adaptive.k_a),
    key!("k_s", "small-axis threshold (world units)", adaptive.k_s),
    key!("k_g", "mean positional-gradient threshold", adaptive.k_g),
    key!(
        "cadence",
        "stage-2 iterations between upscaling events",
        adaptive.cadence
    ),
    key!(
        "max_tex",
        "per-axis texture size cap (power of two)",
        adaptive.max_dim
    ),
    key!(
        "project_alpha_texels",
        "clamp stored texture alpha to [0,1] after each step",
        project_alpha_texels
    ),
    key!(
        "upscale_until",
        "last stage-2 iteration with upscaling (0: no limit)",
        adaptive.upscale_until
    ),
    Key {
        name: "memory_budget",
        help: "stop upscaling above this many parameter bytes ('none' or bytes)",
        get: |c| {
            c.adaptive
                .memory_budget
                .map_or_else(|| "none".into(), |b| b.to_string())
        },
        set: |c, v| {
            c.adaptive.memory_budget = if v.trim() == "none" {
                None
            } else {
                Some(parse(v)?)
            };
            Ok(())
        },
    },
    Key {
        name: "texture_policy",
        help: "'adaptive' or 'uniform:N' (every texture NxN in stage 2)",
        get: |c| match c.texture_policy {
            TexturePolicy::Adaptive => "adaptive".into(),
            TexturePolicy::Uniform(n) => format!("uniform:{n}"),
        },
        set: |c, v| {
            c.texture_policy = match v.trim() {
                "adaptive" => TexturePolicy::Adaptive,
                s => match s.strip_prefix("uniform:") {
                    Some(n) => TexturePolicy::Uniform(parse(n)?),
                    None => return Err(format!("unknown texture policy '{s}'")),
                },
            };
            Ok(())
        },
    },
    Key {
        name: "background",
        help: "background color r,g,b",
        get: |c| join(&c.background),
        set: |c, v| {
            c.background = reals(v)?;
            Ok(())
        },
    },
    Key {
        name: "bounds",
        help: "initialization box 'auto' or minx,miny,minz,maxx,maxy,maxz",
        get: |c| {
            c.bounds.map_or_else(
                || "auto".into(),
                |b| join(&[b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z]),
            )
        },
        set: |c, v| {
            c.bounds = if v.trim() == "auto" {
                None
            } else {
                let b: [f64; 6] = reals(v)?;
                Some(Aabb::new(
                    Vec3::new(b[0], b[1], b[2]),
                    Vec3::new(b[3], b[4], b[5]),
                ))
            };
            Ok(())
        },
    },
    key!(
        "init_extent",
        "auto bounds half-size / mean camera distance",
        init_extent
    ),
    key!(
        "init_scale_min",
        "smallest initial scale / bounds diagonal",
        init_scale_min
    ),
    key!(
        "init_scale_max",
        "largest initial scale / bounds diagonal",
        init_scale_max
    ),
    key!("init_opacity", "initial opacity", init_opacity),
    key!(
        "sigma_cut",
        "footprint radius in standard deviations",
        render.sigma_cut
    ),
    key!(
        "alpha_min",
        "fragment alpha skip threshold",
        render.alpha_min
    ),
    key!("alpha_max", "fragment alpha clamp", render.alpha_max),
    key!("t_min", "early-termination transmittance", render.t_min),
    key!(
        "tile_size",
        "rasterizer tile size in pixels",
        render.tile_size
    ),
    key!(
        "texture_extent_sigma",
        "local radius (sigmas) covered by a texture",
        render.texture_extent_sigma
    ),
];

/// Effective configuration: defaults, then a file, then overrides.
#[derive(Debug, Clone, Default)]
pub struct CliConfig {
    pub train: TrainConfig,
}

impl CliConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let k = KEYS
            .iter()
            .find(|k| k.name == key)
            .ok_or_else(|| format!("unknown config key '{key}'"))?;
        (k.set)(&mut self.train, value).map_err(|e| format!("{key}: {e}"))
    }

    /// Applies a `key=value` pair.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), String> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got '{pair}'"))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies every line of a config text. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line)
                .map_err(|e| format!("{origin}:{}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        KEYS.iter()
            .find(|k| k.name == key)
            .map(|k| (k.get)(&self.train))
    }

    /// Every key in table order, re-readable by [`CliConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{} = {}", k.name, (k.get)(&self.train));
        }
        s
    }
}

/// Key listing appended to every subcommand's help.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (--config file or --set key=value):\n");
    for k in KEYS {
        let _ = writeln!(
            s,
            "  {:width$}  {} [default: {}]",
            k.name,
            k.help,
            (k.get)(&TrainConfig::default())
        );
    }
    s
}
