//! Adam with one learning rate per parameter group.

use crate::error::{domain, Result};
use crate::model::Scene;
use crate::raster::SceneGradients;
use crate::texture::TextureAtlas;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Mu,
    /// Optimized as `ln(scale)`.
    Scale,
    Rot,
    Opacity,
    Sh,
    RgbTexels,
    AlphaTexels,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::Mu,
        Group::Scale,
        Group::Rot,
        Group::Opacity,
        Group::Sh,
        Group::RgbTexels,
        Group::AlphaTexels,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Mu => "mu",
            Group::Scale => "scale",
            Group::Rot => "rot",
            Group::Opacity => "opacity",
            Group::Sh => "sh",
            Group::RgbTexels => "rgb_texels",
            Group::AlphaTexels => "alpha_texels",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub mu: f64,
    pub scale: f64,
    pub rot: f64,
    pub opacity: f64,
    pub sh: f64,
    pub rgb_texels: f64,
    pub alpha_texels: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mu: 1.6e-3,
            scale: 5e-3,
            rot: 1e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            rgb_texels: 2.5e-3,
            alpha_texels: 2.5e-3,
        }
    }
}

impl LearningRates {
    pub fn get(&self, g: Group) -> f64 {
        match g {
            Group::Mu => self.mu,
            Group::Scale => self.scale,
            Group::Rot => self.rot,
            Group::Opacity => self.opacity,
            Group::Sh => self.sh,
            Group::RgbTexels => self.rgb_texels,
            Group::AlphaTexels => self.alpha_texels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in Group::ALL {
            let lr = self.get(g);
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(domain(format!(
                    "learning rate for {} must be positive, got {lr}",
                    g.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First and second moments of one parameter group, with a step count per
/// entry so that re-initialized entries restart their bias correction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub step: Vec<u64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            step: vec![0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &AdamConfig) {
        assert_eq!(params.len(), self.m.len(), "moment buffer shape");
        assert_eq!(grads.len(), self.m.len(), "gradient shape");
        for k in 0..params.len() {
            self.step[k] += 1;
            let t = i32::try_from(self.step[k]).unwrap_or(i32::MAX);
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            let g = grads[k];
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }

    fn extend_from(&mut self, other: &Moments, r: std::ops::Range<usize>) {
        self.step.extend_from_slice(&other.step[r.clone()]);
        self.m.extend_from_slice(&other.m[r.clone()]);
        self.v.extend_from_slice(&other.v[r]);
    }

    fn extend_zeros(&mut self, n: usize) {
        self.step.extend(std::iter::repeat_n(0, n));
        self.m.extend(std::iter::repeat_n(0.0, n));
        self.v.extend(std::iter::repeat_n(0.0, n));
    }
}

/// Adam state for every trainable parameter of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub cfg: AdamConfig,
    pub groups: [Moments; 7],
}

fn group_len(scene: &Scene, g: Group) -> usize {
    let n = scene.len();
    let texels = scene.textures.texel_count();
    match g {
        Group::Mu => 3 * n,
        Group::Scale => 2 * n,
        Group::Rot => 4 * n,
        Group::Opacity => n,
        Group::Sh => scene.gaussians.iter().map(|g| 3 * g.sh.len()).sum(),
        Group::RgbTexels => 3 * texels,
        Group::AlphaTexels => texels,
    }
}

fn gather(scene: &Scene, g: Group) -> Vec<f64> {
    let gs = &scene.gaussians;
    let tex = scene.textures.texels();
    match g {
        Group::Mu => gs
            .iter()
            .flat_map(|g| g.mu.iter().copied().collect::<Vec<_>>())
            .collect(),
        Group::Scale => gs.iter().flat_map(|g| g.scale.map(f64::ln)).collect(),
        Group::Rot => gs.iter().flat_map(|g| g.rot).collect(),
        Group::Opacity => gs.iter().map(|g| g.opacity_logit).collect(),
        Group::Sh => gs
            .iter()
            .flat_map(|g| g.sh.iter().flatten().copied())
            .collect(),
        Group::RgbTexels => tex
            .chunks_exact(4)
            .flat_map(|t| [t[0], t[1], t[2]])
            .collect(),
        Group::AlphaTexels => tex.chunks_exact(4).map(|t| t[3]).collect(),
    }
}

fn scatter(scene: &mut Scene, g: Group, values: &[f64]) {
    match g {
        Group::Mu => {
            for (gs, v) in scene.gaussians.iter_mut().zip(values.chunks_exact(3)) {
                gs.mu = crate::Vec3::new(v[0], v[1], v[2]);
            }
        }
        Group::Scale => {
            for (gs, v) in scene.gaussians.iter_mut().zip(values.chunks_exact(2)) {
                for k in 0..2 {
                    // skip the exp/ln roundtrip when the step left the value alone
                    if v[k] != gs.scale[k].ln() {
                        gs.scale[k] = v[k].exp();
                    }
                }
            }
        }
        Group::Rot => {
            for (gs, v) in scene.gaussians.iter_mut().zip(values.chunks_exact(4)) {
                gs.rot = [v[0], v[1], v[2], v[3]];
                gs.renormalize_rotation();
            }
        }
        Group::Opacity => {
            for (gs, v) in scene.gaussians.iter_mut().zip(values) {
                gs.opacity_logit = *v;
            }
        }
        Group::Sh => {
            let mut it = values.chunks_exact(3);
            for gs in scene.gaussians.iter_mut() {
                for c in gs.sh.iter_mut() {
                    let v = it.next().expect("sh length");
                    *c = [v[0], v[1], v[2]];
                }
            }
        }
        Group::RgbTexels => {
            for (t, v) in scene
                .textures
                .texels_mut()
                .chunks_exact_mut(4)
                .zip(values.chunks_exact(3))
            {
                t[..3].copy_from_slice(v);
            }
        }
        Group::AlphaTexels => {
            for (t, v) in scene.textures.texels_mut().chunks_exact_mut(4).zip(values) {
                t[3] = *v;
            }
        }
    }
}

fn grads_of(scene: &Scene, grads: &SceneGradients, g: Group) -> Vec<f64> {
    match g {
        Group::Mu => grads.d_mu.iter().flatten().copied().collect(),
        // d/d ln s = s * d/ds
        Group::Scale => scene
            .gaussians
            .iter()
            .zip(&grads.d_scale)
            .flat_map(|(gs, d)| [gs.scale[0] * d[0], gs.scale[1] * d[1]])
            .collect(),
        Group::Rot => grads.d_rot.iter().flatten().copied().collect(),
        Group::Opacity => grads.d_opacity_logit.clone(),
        Group::Sh => grads.d_sh.iter().flatten().copied().collect(),
        Group::RgbTexels => grads.d_rgb_texels.iter().flatten().copied().collect(),
        Group::AlphaTexels => grads.d_alpha_texels.clone(),
    }
}

impl Optimizer {
    pub fn new(scene: &Scene, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            groups: Group::ALL.map(|g| Moments::zeros(group_len(scene, g))),
        }
    }

    pub fn group(&self, g: Group) -> &Moments {
        &self.groups[g.index()]
    }

    /// Updates the listed groups of `scene` from `grads`.
    pub fn step(
        &mut self,
        scene: &mut Scene,
        grads: &SceneGradients,
        lrs: &LearningRates,
        groups: &[Group],
    ) -> Result<()> {
        for &g in groups {
            let n = group_len(scene, g);
            let mom = &mut self.groups[g.index()];
            if mom.m.len() != n {
                return Err(domain(format!(
                    "optimizer group {} holds {} moments for {n} parameters",
                    g.name(),
                    mom.m.len()
                )));
            }
            let d = grads_of(scene, grads, g);
            if d.len() != n {
                return Err(domain(format!(
                    "gradient for {} has {} entries, expected {n}",
                    g.name(),
                    d.len()
                )));
            }
            let mut values = gather(scene, g);
            mom.update(&mut values, &d, lrs.get(g), &self.cfg);
            scatter(scene, g, &values);
        }
        Ok(())
    }

    /// Re-shapes the texel moment buffers after the atlas changed from `old`
    /// to `new`. Textures whose size changed restart from fresh moments.
    pub fn remap_texels(&mut self, old: &TextureAtlas, new: &TextureAtlas) {
        assert_eq!(old.len(), new.len(), "atlas splat count changed");
        let rgb = &self.groups[Group::RgbTexels.index()];
        let alpha = &self.groups[Group::AlphaTexels.index()];
        let mut next_rgb = Moments::default();
        let mut next_alpha = Moments::default();
        for (eo, en) in old.entries().iter().zip(new.entries()) {
            let n = en.texel_count();
            if (eo.width, eo.height) == (en.width, en.height) {
                let r = eo.first_texel()..eo.first_texel() + n;
                next_rgb.extend_from(rgb, 3 * r.start..3 * r.end);
                next_alpha.extend_from(alpha, r);
            } else {
                next_rgb.extend_zeros(3 * n);
                next_alpha.extend_zeros(n);
            }
        }
        self.groups[Group::RgbTexels.index()] = next_rgb;
        self.groups[Group::AlphaTexels.index()] = next_alpha;
    }
}
