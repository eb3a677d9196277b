//! Shared fixtures for the benchmarks.

use texsplat::train::{synth_dataset, SynthKind, SynthSpec};
use texsplat::{Camera, Scene};

/// Checkerboard ground-truth scene (`grid * grid` splats) and one of its
/// cameras at `res x res`.
pub fn checker_fixture(grid: usize, res: u32) -> (Scene, Camera) {
    let spec = SynthSpec {
        grid,
        ..SynthSpec::new(SynthKind::Checker, 2, res, 0)
    };
    let (ds, scene) = synth_dataset(&spec).expect("fixed synth spec is valid");
    (scene, ds.views[0].camera.clone())
}
