//! Procedural toy scenes with analytic ground truth.
//!
//! A scene is a set of fronto-parallel textured rectangles at varying
//! depths in front of a distant backdrop, rendered from four camera
//! positions (previous, target, next, stereo) with a pinhole model.
//! Textures are smooth functions of world position, so reprojecting one
//! rendered view into another with the true depth and pose reproduces it up
//! to bilinear interpolation error. Colors are keyed to depth through a
//! domain palette, giving the color networks a learnable depth-to-color
//! mapping and creating a controllable gap between "real" and "synthetic"
//! domains.

use super::{RealSample, SyntheticSample};
use crate::geometry::{DepthMap, Grid, Image, Intrinsics, RigidPose};
use crate::losses::SkyMask;
use crate::rng::Stream;
use crate::{Error, Result};

/// Color-domain identifier: two distinct real-like palettes plus a flat
/// synthetic look.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorDomain {
    RealA,
    RealB,
    Synthetic,
}

impl ColorDomain {
    pub fn tag(&self) -> &'static str {
        match self {
            ColorDomain::RealA => "real_a",
            ColorDomain::RealB => "real_b",
            ColorDomain::Synthetic => "synthetic",
        }
    }
}

/// What fills the view behind the rectangles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Backdrop {
    /// Flat-colored far plane near the depth cap, flagged as sky.
    Sky,
    /// Textured plane at the given depth (not flagged as sky); used for
    /// pure-plane geometry scenes.
    Plane(f32),
}

/// Everything needed to generate one scene deterministically.
#[derive(Clone, Debug)]
pub struct ToySceneSpec {
    pub seed: u64,
    pub num_rects: usize,
    /// Object depth range in meters; must lie within [min_depth, max_depth].
    pub depth_range: (f32, f32),
    /// Stereo baseline in meters; the stereo source sits at +x.
    pub baseline: f32,
    /// Camera translation per temporal step (frame k sits at k * cam_step).
    pub cam_step: [f32; 3],
    /// Per-frame displacement of the moving rectangle, if any. The object
    /// moves between temporal frames but not between target and stereo.
    pub object_motion: Option<[f32; 3]>,
    pub color_domain: ColorDomain,
    pub height: usize,
    pub width: usize,
    pub min_depth: f32,
    pub max_depth: f32,
    pub backdrop: Backdrop,
}

impl ToySceneSpec {
    /// Stacked-rectangle scene defaults at the given size.
    pub fn new(seed: u64, height: usize, width: usize) -> ToySceneSpec {
        ToySceneSpec {
            seed,
            num_rects: 6,
            depth_range: (3.0, 25.0),
            baseline: 0.3,
            cam_step: [0.12, 0.0, 0.08],
            object_motion: None,
            color_domain: ColorDomain::RealA,
            height,
            width,
            min_depth: 2.0,
            max_depth: 40.0,
            backdrop: Backdrop::Sky,
        }
    }

    /// Single fronto-parallel plane at depth `z` filling the whole view;
    /// the smooth-texture case used by geometry oracles.
    pub fn plane(seed: u64, height: usize, width: usize, z: f32) -> ToySceneSpec {
        ToySceneSpec {
            num_rects: 0,
            backdrop: Backdrop::Plane(z),
            ..ToySceneSpec::new(seed, height, width)
        }
    }

    /// Scene with one independently moving rectangle. The motion mixes a
    /// horizontal component (partially explainable by a wrong depth under
    /// the x-translating camera) with vertical and forward components that
    /// no static depth can explain.
    pub fn moving_object(seed: u64, height: usize, width: usize) -> ToySceneSpec {
        ToySceneSpec {
            object_motion: Some([0.08, 0.05, 0.5]),
            cam_step: [0.15, 0.0, 0.0],
            ..ToySceneSpec::new(seed, height, width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidInput(format!(
                "scene size {}x{} too small",
                self.height, self.width
            )));
        }
        let (lo, hi) = self.depth_range;
        if !(self.min_depth <= lo && lo < hi && hi <= self.max_depth) {
            return Err(Error::InvalidInput(format!(
                "depth range ({lo}, {hi}) outside [{}, {}]",
                self.min_depth, self.max_depth
            )));
        }
        if self.baseline <= 0.0 {
            return Err(Error::InvalidInput("baseline must be positive".into()));
        }
        if let Backdrop::Plane(z) = self.backdrop {
            if !(self.min_depth <= z && z <= self.max_depth) {
                return Err(Error::InvalidInput(format!("backdrop depth {z} invalid")));
            }
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: 0.6 * self.width as f32,
            fy: 0.6 * self.width as f32,
            cx: (self.width as f32 - 1.0) / 2.0,
            cy: (self.height as f32 - 1.0) / 2.0,
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Clone, Debug)]
struct Rect {
    /// World plane depth (nominal, before motion).
    z: f32,
    /// World-space bounds at the nominal position.
    x0: f32,
    x1: f32,
    y0: f32,
    y1: f32,
    base_color: [f32; 3],
    tex_freq: [f32; 2],
    tex_phase: [f32; 2],
    tex_amp: f32,
    moving: bool,
}

struct SceneModel {
    rects: Vec<Rect>,
    backdrop_z: f32,
    backdrop_is_sky: bool,
    backdrop_color: [f32; 3],
    motion: Option<[f32; 3]>,
}

/// Depth-keyed palette: hue runs with depth; the two real domains differ in
/// hue offset and brightness, the synthetic domain uses a reversed ramp.
fn palette(domain: ColorDomain, z: f32, max_depth: f32) -> [f32; 3] {
    let u = (z / max_depth).clamp(0.0, 1.0);
    let (offset, sat, val) = match domain {
        ColorDomain::RealA => (0.00f32, 0.60f32, 0.80f32),
        ColorDomain::RealB => (0.45, 0.45, 0.60),
        ColorDomain::Synthetic => (0.80, 0.90, 0.95),
    };
    let hue = match domain {
        ColorDomain::Synthetic => (offset + (1.0 - u) * 2.3).fract(),
        _ => (offset + u * 2.3).fract(),
    };
    hsv_to_rgb(hue, sat, val)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match (i as i32).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn build_scene(spec: &ToySceneSpec) -> SceneModel {
    let mut rng = Stream::seed_from(spec.seed ^ 0x70795f7363656e65);
    let k = spec.intrinsics();
    let (lo, hi) = spec.depth_range;
    let mut rects = Vec::with_capacity(spec.num_rects);
    // The moving rectangle, when requested, is the one nearest the camera
    // so it covers a meaningful pixel area.
    let mut depths: Vec<f32> = (0..spec.num_rects)
        .map(|_| rng.uniform_in(lo, hi))
        .collect();
    depths.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (i, &z) in depths.iter().enumerate() {
        // Place by image-space center and extent so every rectangle is
        // visible from the target camera.
        let cu = rng.uniform_in(0.22 * spec.width as f32, 0.78 * spec.width as f32);
        let cv = rng.uniform_in(0.25 * spec.height as f32, 0.75 * spec.height as f32);
        let half_u = rng.uniform_in(0.12 * spec.width as f32, 0.30 * spec.width as f32);
        let half_v = rng.uniform_in(0.15 * spec.height as f32, 0.35 * spec.height as f32);
        let cx_w = (cu - k.cx) / k.fx * z;
        let cy_w = (cv - k.cy) / k.fy * z;
        let hx_w = half_u / k.fx * z;
        let hy_w = half_v / k.fy * z;
        let moving = spec.object_motion.is_some() && i == spec.num_rects - 1;
        let mut base = palette(spec.color_domain, z, spec.max_depth);
        if moving {
            // Distinct saturated look so the uncertainty net can recognize
            // the object from appearance alone.
            base = match spec.color_domain {
                ColorDomain::Synthetic => [0.1, 0.1, 0.9],
                _ => [0.9, 0.15, 0.1],
            };
        }
        let flat = spec.color_domain == ColorDomain::Synthetic;
        rects.push(Rect {
            z,
            x0: cx_w - hx_w,
            x1: cx_w + hx_w,
            y0: cy_w - hy_w,
            y1: cy_w + hy_w,
            base_color: base,
            tex_freq: [
                rng.uniform_in(1.2, 3.0) / hx_w.max(0.2),
                rng.uniform_in(1.2, 3.0) / hy_w.max(0.2),
            ],
            tex_phase: [rng.uniform_in(0.0, 6.28), rng.uniform_in(0.0, 6.28)],
            tex_amp: if flat { 0.0 } else { 0.06 },
            moving,
        });
    }
    let (backdrop_z, backdrop_is_sky) = match spec.backdrop {
        Backdrop::Sky => (spec.max_depth * 0.99, true),
        Backdrop::Plane(z) => (z, false),
    };
    SceneModel {
        rects,
        backdrop_z,
        backdrop_is_sky,
        backdrop_color: match spec.color_domain {
            ColorDomain::RealA => [0.55, 0.70, 0.85],
            ColorDomain::RealB => [0.75, 0.70, 0.55],
            ColorDomain::Synthetic => [0.92, 0.92, 0.98],
        },
        motion: spec.object_motion,
    }
}

/// Which surface a ray hit.
enum Hit {
    Rect(usize, f32, [f32; 2]),
    Backdrop(f32, [f32; 2]),
}

impl SceneModel {
    /// Intersect the pixel ray from a camera at `cam` (no rotation) at
    /// temporal index `time` (moving surfaces are displaced by
    /// time * motion).
    fn trace(&self, k: &Intrinsics, cam: [f32; 3], time: f32, u: usize, v: usize) -> Hit {
        let rx = (u as f32 - k.cx) / k.fx;
        let ry = (v as f32 - k.cy) / k.fy;
        let mut best: Option<(usize, f32, [f32; 2])> = None;
        for (i, rect) in self.rects.iter().enumerate() {
            let (dx, dy, dz) = if rect.moving {
                let m = self.motion.unwrap_or([0.0; 3]);
                (time * m[0], time * m[1], time * m[2])
            } else {
                (0.0, 0.0, 0.0)
            };
            let z_cam = rect.z + dz - cam[2];
            if z_cam <= 0.05 {
                continue;
            }
            let wx = cam[0] + rx * z_cam;
            let wy = cam[1] + ry * z_cam;
            if wx >= rect.x0 + dx && wx <= rect.x1 + dx && wy >= rect.y0 + dy && wy <= rect.y1 + dy
            {
                // Texture coordinates anchored to the object.
                let local = [wx - dx, wy - dy];
                if best.map(|(_, z, _)| z_cam < z).unwrap_or(true) {
                    best = Some((i, z_cam, local));
                }
            }
        }
        if let Some((i, z, local)) = best {
            Hit::Rect(i, z, local)
        } else {
            let z_cam = self.backdrop_z - cam[2];
            let wx = cam[0] + rx * z_cam;
            let wy = cam[1] + ry * z_cam;
            Hit::Backdrop(z_cam, [wx, wy])
        }
    }

    fn shade(&self, hit: &Hit) -> [f32; 3] {
        match hit {
            Hit::Rect(i, _, local) => {
                let r = &self.rects[*i];
                let tex = r.tex_amp
                    * (r.tex_freq[0] * local[0] + r.tex_phase[0]).sin()
                    * (r.tex_freq[1] * local[1] + r.tex_phase[1]).sin();
                [
                    (r.base_color[0] + tex).clamp(0.02, 0.98),
                    (r.base_color[1] + tex * 0.8).clamp(0.02, 0.98),
                    (r.base_color[2] + tex * 1.2).clamp(0.02, 0.98),
                ]
            }
            Hit::Backdrop(_, world) => {
                if self.backdrop_is_sky {
                    // Gentle world-anchored gradient; essentially
                    // textureless, as sky should be.
                    let g = 0.015 * (world[1] * 0.05).sin();
                    [
                        (self.backdrop_color[0] + g).clamp(0.0, 1.0),
                        (self.backdrop_color[1] + g).clamp(0.0, 1.0),
                        (self.backdrop_color[2] + g).clamp(0.0, 1.0),
                    ]
                } else {
                    // Textured plane for geometry scenes: smooth,
                    // well-conditioned for photometric matching.
                    let t1 = 0.20 * (world[0] * 1.1).sin();
                    let t2 = 0.15 * (world[1] * 1.3 + 0.7).sin();
                    [
                        (0.5 + t1).clamp(0.02, 0.98),
                        (0.5 + 0.5 * t1 + 0.5 * t2).clamp(0.02, 0.98),
                        (0.5 + t2).clamp(0.02, 0.98),
                    ]
                }
            }
        }
    }
}

/// One rendered view with its analytic ground truth.
pub struct RenderedView {
    pub image: Image,
    pub depth: DepthMap,
    pub sky_mask: SkyMask,
    /// Pixels covered by the moving rectangle (empty when static).
    pub object_mask: Grid,
}

fn render(model: &SceneModel, k: &Intrinsics, cam: [f32; 3], time: f32) -> RenderedView {
    let (h, w) = (k.height, k.width);
    let mut image = Image::zeros(3, h, w);
    let mut depth = Grid::filled(h, w, 0.0);
    let mut sky = Grid::filled(h, w, 0.0);
    let mut object = Grid::filled(h, w, 0.0);
    for v in 0..h {
        for u in 0..w {
            let hit = model.trace(k, cam, time, u, v);
            let color = model.shade(&hit);
            for c in 0..3 {
                image.set(c, v, u, color[c]);
            }
            match hit {
                Hit::Rect(i, z, _) => {
                    depth.set(v, u, z);
                    if model.rects[i].moving {
                        object.set(v, u, 1.0);
                    }
                }
                Hit::Backdrop(z, _) => {
                    depth.set(v, u, z);
                    if model.backdrop_is_sky {
                        sky.set(v, u, 1.0);
                    }
                }
            }
        }
    }
    RenderedView {
        image,
        depth: DepthMap::new(depth).expect("positive analytic depth"),
        sky_mask: SkyMask::new(sky).expect("binary mask"),
        object_mask: object,
    }
}

/// A generated scene: the real-style sample, its synthetic-domain twin, and
/// the analytic extras used for evaluation and controlled experiments.
pub struct ToyScene {
    pub real: RealSample,
    pub syn: SyntheticSample,
    /// Analytic depth of the target view (evaluation-only ground truth).
    pub real_gt_depth: DepthMap,
    /// Moving-object coverage in the target view.
    pub object_mask: Grid,
}

/// Render the four real-domain views plus the synthetic-domain twin of the
/// target view.
pub fn generate_toy_scene_full(spec: &ToySceneSpec) -> Result<ToyScene> {
    spec.validate()?;
    let k = spec.intrinsics();
    let model = build_scene(spec);

    let cam_at = |t: f32| -> [f32; 3] {
        [
            t * spec.cam_step[0],
            t * spec.cam_step[1],
            t * spec.cam_step[2],
        ]
    };
    let prev = render(&model, &k, cam_at(-1.0), -1.0);
    let target = render(&model, &k, cam_at(0.0), 0.0);
    let next = render(&model, &k, cam_at(1.0), 1.0);
    let stereo = render(&model, &k, [spec.baseline, 0.0, 0.0], 0.0);

    // Synthetic twin: same geometry, the synthetic color transform.
    let syn_spec = ToySceneSpec {
        color_domain: ColorDomain::Synthetic,
        ..spec.clone()
    };
    let syn_model = build_scene(&syn_spec);
    let syn_view = render(&syn_model, &k, cam_at(0.0), 0.0);

    let real = RealSample {
        frames: [prev.image, target.image, next.image],
        stereo: stereo.image,
        intrinsics: k,
        // Target-to-source: p_s = p_0 - (B, 0, 0).
        stereo_pose: RigidPose::from_translation([-(spec.baseline as f64), 0.0, 0.0]),
        sky_mask: Some(target.sky_mask),
    };
    real.validate()?;
    let syn = SyntheticSample {
        color: syn_view.image,
        depth: syn_view.depth,
        sky_mask: syn_view.sky_mask,
        source: format!("toy_{}", syn_spec.color_domain.tag()),
    };
    syn.validate()?;
    Ok(ToyScene {
        real,
        syn,
        real_gt_depth: target.depth,
        object_mask: target.object_mask,
    })
}

/// The spec'd entry point: the (real, synthetic) pair.
pub fn generate_toy_scene(spec: &ToySceneSpec) -> Result<(RealSample, SyntheticSample)> {
    let scene = generate_toy_scene_full(spec)?;
    Ok((scene.real, scene.syn))
}
