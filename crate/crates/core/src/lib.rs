//! Differentiable CPU rasterizer for 2D Gaussian splats that carry
//! variable-resolution anisotropic RGBA textures.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: splat-local frames, ray/splat intersection, screen bounds.
//! * [`texture`]: per-splat textures, bilinear lookup, upscaling, atlas
//!   packing and memory accounting.
//! * [`model`]: splat parameters, spherical harmonics, scene persistence.
//! * [`raster`]: tiled forward compositing, analytic backward pass and
//!   positional-gradient statistics.
//! * [`adaptive`]: gradient-driven selection and texture upscaling policy.
//! * [`train`]: loss, optimizer, datasets and the two-stage training loop.
//! * [`metrics`]: PSNR/SSIM, resolution histograms and timing.

pub mod adaptive;
pub mod error;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod texture;
pub mod train;

pub use adaptive::{AdaptiveConfig, UpscaleDecision};
pub use error::{Error, Result};
pub use geometry::{Camera, LocalFrame, RaySplatHit, ScreenRect};
pub use image::Image;
pub use model::{Gaussian2D, Scene};
pub use raster::{GradientStats, RenderConfig, RenderMode, RenderOutput, SceneGradients};
pub use texture::{MemoryReport, Texture, TextureAtlas};
pub use train::{Dataset, TrainConfig, TrainState};

/// Three-component real vector used for positions, directions and colors.
pub type Vec3 = nalgebra::Vector3<f64>;
