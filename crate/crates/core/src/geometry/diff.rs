//! Tape-based geometry: the differentiable counterparts of the plain
//! functions in the parent module, used by the training steps. Gradients
//! flow from warped images back to depth and pose.

use super::{Grid, Image, Intrinsics, RigidPose, Z_EPS};
use crate::tensor::{PinholeParams, Tape, Var};

/// Rotation and translation as tape nodes (`[9]` row-major and `[3]`).
#[derive(Clone, Copy, Debug)]
pub struct PoseVars {
    pub rot: Var,
    pub trans: Var,
}

impl PoseVars {
    /// Fixed pose (no gradient), e.g. a known stereo extrinsic.
    pub fn constant(tape: &mut Tape, pose: &RigidPose) -> PoseVars {
        let mut r = Vec::with_capacity(9);
        for row in &pose.rotation {
            r.extend(row.iter().map(|&v| v as f32));
        }
        let t = pose.translation.iter().map(|&v| v as f32).collect();
        PoseVars {
            rot: tape.constant(&[9], r),
            trans: tape.constant(&[3], t),
        }
    }

    /// Rodrigues exponential map from an axis-angle node (`[3]`) plus a
    /// translation node. Differentiable through both; stable at zero angle.
    pub fn from_axis_angle(tape: &mut Tape, axis_angle: Var, trans: Var) -> PoseVars {
        let t = tape;
        let a2 = t.mul(axis_angle, axis_angle);
        let theta2 = t.sum(a2);
        let theta2e = t.add_const(theta2, 1e-18);
        let theta = t.sqrt(theta2e);
        // a = sin(theta)/theta, b = 2*(sin(theta/2)/theta)^2; both smooth
        // through theta -> 0 in this form.
        let s = t.sin(theta);
        let a = t.div(s, theta);
        let half = t.scale(theta, 0.5);
        let sh = t.sin(half);
        let ratio = t.div(sh, theta);
        let r2 = t.mul(ratio, ratio);
        let b = t.scale(r2, 2.0);
        let k = t.skew3(axis_angle);
        let k2 = t.matmul3(k, k);
        let eye = t.constant(&[9], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let ak = t.mul_scalar(k, a);
        let bk2 = t.mul_scalar(k2, b);
        let partial = t.add(eye, ak);
        let rot = t.add(partial, bk2);
        PoseVars { rot, trans }
    }

    /// Materialize as a plain pose, recomputed in f64 from the rotation
    /// entries (useful for logging, not for gradients).
    pub fn to_rigid(&self, tape: &Tape) -> RigidPose {
        let r = tape.data(self.rot);
        let t = tape.data(self.trans);
        let mut rotation = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = r[3 * i + j] as f64;
            }
        }
        RigidPose {
            rotation,
            translation: [t[0] as f64, t[1] as f64, t[2] as f64],
        }
    }
}

/// Rodrigues in f64 for pose reporting; matches `PoseVars::from_axis_angle`
/// up to f32 rounding but produces an orthonormal rotation at full precision.
pub fn axis_angle_to_pose(axis_angle: [f64; 3], trans: [f64; 3]) -> RigidPose {
    let theta2: f64 = axis_angle.iter().map(|v| v * v).sum();
    let theta = (theta2 + 1e-300).sqrt();
    let a = if theta > 1e-12 { theta.sin() / theta } else { 1.0 };
    let hb = (0.5 * theta).sin() / theta.max(1e-12);
    let b = if theta > 1e-12 { 2.0 * hb * hb } else { 0.5 };
    let (x, y, z) = (axis_angle[0], axis_angle[1], axis_angle[2]);
    let k = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
    let mut k2 = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..3 {
                k2[i][j] += k[i][l] * k[l][j];
            }
        }
    }
    let mut rotation = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rotation[i][j] = if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2[i][j];
        }
    }
    RigidPose {
        rotation,
        translation: trans,
    }
}

/// Differentiable disparity-to-depth conversion.
pub fn disp_to_depth_t(tape: &mut Tape, disp: Var, min_depth: f32, max_depth: f32) -> Var {
    let inv_max = 1.0 / max_depth;
    let span = 1.0 / min_depth - inv_max;
    let denom = tape.affine_const(disp, span, inv_max);
    tape.recip(denom)
}

/// Constant per-pixel unit-plane rays for `k`, as a `[3,H,W]` node.
pub fn pixel_rays(tape: &mut Tape, k: &Intrinsics) -> Var {
    let (h, w) = (k.height, k.width);
    let hw = h * w;
    let mut rays = vec![0.0f32; 3 * hw];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            rays[i] = (x as f32 - k.cx) / k.fx;
            rays[hw + i] = (y as f32 - k.cy) / k.fy;
            rays[2 * hw + i] = 1.0;
        }
    }
    tape.constant(&[3, h, w], rays)
}

/// depth `[1,H,W]` times the ray grid: camera-frame points `[3,H,W]`.
pub fn backproject_t(tape: &mut Tape, depth: Var, rays: Var) -> Var {
    tape.mul_chan(rays, depth)
}

/// Result of a differentiable reprojection.
pub struct WarpVars {
    pub image: Var,
    /// 1.0 where the projected point was in front of the camera and all four
    /// bilinear taps were inside the source image.
    pub validity: Grid,
}

/// Differentiable composition warp(source, project(backproject(depth))).
pub fn reproject_t(
    tape: &mut Tape,
    source: &Image,
    depth: Var,
    pose: &PoseVars,
    k: &Intrinsics,
) -> WarpVars {
    let rays = pixel_rays(tape, k);
    let pts = backproject_t(tape, depth, rays);
    let moved = tape.transform_points(pts, pose.rot, pose.trans);
    let cam = PinholeParams {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        z_eps: Z_EPS,
    };
    let (coords, z_valid) = tape.project(moved, cam);
    let src = tape.constant(&source.shape(), source.data.clone());
    let (image, sample_valid) = tape.grid_sample(src, coords);
    let validity = Grid {
        height: k.height,
        width: k.width,
        data: z_valid
            .iter()
            .zip(sample_valid.iter())
            .map(|(a, b)| a * b)
            .collect(),
    };
    WarpVars { image, validity }
}
