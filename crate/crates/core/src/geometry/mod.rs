//! Pinhole camera model, disparity/depth conversion, and view synthesis by
//! differentiable reprojection.
//!
//! The plain functions here operate on concrete grids and serve rendering,
//! evaluation and tests; [`diff`] holds the tape-based counterparts used in
//! training. Both share the same conventions: pixel centers at integer
//! coordinates, depths in meters, images as planar `[C,H,W]` floats in
//! `[0,1]`.

pub mod diff;

use crate::tensor::kernels;
use crate::{Error, Result};

/// Behind-camera rejection threshold for projection, in meters.
pub const Z_EPS: f32 = 1e-6;

/// Planar float image, `[C,H,W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} != {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
    }

    /// Mean absolute difference against another image of the same shape.
    pub fn mean_l1(&self, other: &Image) -> f32 {
        let n = self.data.len().max(1);
        let s: f64 = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        (s / n as f64) as f32
    }
}

/// Single-channel float grid, `[H,W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "grid data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        Grid {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f32, fy: f32, cx: f32, cy: f32, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive: fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f32) {
            return Err(Error::InvalidInput(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f32) {
            return Err(Error::InvalidInput(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Six-field plain-text record: `fx fy cx cy width height`.
    pub fn to_record(&self) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height
        )
    }

    pub fn from_record(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::InvalidInput(format!(
                "intrinsics record needs 6 fields, got {}",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f32> {
            fields[i]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad intrinsics field: {}", fields[i])))
        };
        Intrinsics::new(
            num(0)?,
            num(1)?,
            num(2)?,
            num(3)?,
            num(4)? as usize,
            num(5)? as usize,
        )
    }
}

/// Rigid transform: `p' = R p + t`. Stored in f64 so validation and text
/// round-trips keep full precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidPose {
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let pose = RigidPose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        RigidPose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        RigidPose {
            translation: t,
            ..RigidPose::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        // R^T R = I within 1e-6.
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += r[k][i] * r[k][j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot - target).abs() > 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "rotation not orthonormal: (R^T R)[{i}][{j}] = {dot}"
                    )));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("rotation det = {det}, not 1")));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("translation not finite".into()));
        }
        Ok(())
    }

    pub fn inverse(&self) -> RigidPose {
        let r = &self.rotation;
        let mut rt = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rt[i][j] = r[j][i];
            }
        }
        let t = &self.translation;
        let mut ti = [0.0; 3];
        for i in 0..3 {
            ti[i] = -(rt[i][0] * t[0] + rt[i][1] * t[1] + rt[i][2] * t[2]);
        }
        RigidPose {
            rotation: rt,
            translation: ti,
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// 3x4 row-major plain text, three rows of `r r r t`.
    pub fn to_record(&self) -> String {
        let r = &self.rotation;
        let t = &self.translation;
        (0..3)
            .map(|i| format!("{} {} {} {}", r[i][0], r[i][1], r[i][2], t[i]))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn from_record(s: &str) -> Result<Self> {
        let vals: Vec<f64> = s
            .split_whitespace()
            .map(|f| {
                f.parse()
                    .map_err(|_| Error::InvalidInput(format!("bad pose field: {f}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != 12 {
            return Err(Error::InvalidInput(format!(
                "pose record needs 12 fields, got {}",
                vals.len()
            )));
        }
        let mut rotation = [[0.0; 3]; 3];
        let mut translation = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = vals[i * 4 + j];
            }
            translation[i] = vals[i * 4 + 3];
        }
        RigidPose::new(rotation, translation)
    }
}

/// Dense normalized inverse depth in (0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap(pub Grid);

impl DisparityMap {
    pub fn new(grid: Grid) -> Result<Self> {
        for &v in &grid.data {
            if !v.is_finite() || v <= 0.0 || v > 1.0 {
                return Err(Error::InvalidInput(format!(
                    "disparity value {v} outside (0, 1]"
                )));
            }
        }
        Ok(DisparityMap(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }
}

/// Dense metric depth in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap(pub Grid);

impl DepthMap {
    pub fn new(grid: Grid) -> Result<Self> {
        for &v in &grid.data {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "depth value {v} not positive and finite"
                )));
            }
        }
        Ok(DepthMap(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }
}

/// Role of a frame relative to the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameRole {
    TemporalPrev,
    Target,
    TemporalNext,
    StereoSource,
}

/// One RGB frame with its camera.
#[derive(Clone, Debug)]
pub struct CameraFrame {
    pub image: Image,
    pub intrinsics: Intrinsics,
    pub role: FrameRole,
}

/// A synthesized view plus the mask of pixels whose bilinear taps all landed
/// inside the source image.
#[derive(Clone, Debug)]
pub struct WarpResult {
    pub image: Image,
    pub validity: Grid,
}

/// Affine inverse-depth convention: disparity 1 maps to `min_depth`,
/// disparity -> 0 approaches `max_depth`.
pub fn disp_to_depth(disp: &DisparityMap, min_depth: f32, max_depth: f32) -> Result<DepthMap> {
    check_depth_range(min_depth, max_depth)?;
    let g = disp.grid();
    let inv_max = 1.0 / max_depth;
    let span = 1.0 / min_depth - inv_max;
    let data = g.data.iter().map(|&d| 1.0 / (inv_max + span * d)).collect();
    DepthMap::new(Grid::new(g.height, g.width, data)?)
}

/// Inverse of [`disp_to_depth`]; depths are clamped into `[min, max]` first
/// so boundary values land exactly on the disparity range ends.
pub fn depth_to_disp(depth: &DepthMap, min_depth: f32, max_depth: f32) -> Result<DisparityMap> {
    check_depth_range(min_depth, max_depth)?;
    let g = depth.grid();
    let inv_max = 1.0 / max_depth;
    let span = 1.0 / min_depth - inv_max;
    let data = g
        .data
        .iter()
        .map(|&z| ((1.0 / z.clamp(min_depth, max_depth)) - inv_max) / span)
        .map(|d| d.clamp(f32::MIN_POSITIVE, 1.0))
        .collect();
    DisparityMap::new(Grid::new(g.height, g.width, data)?)
}

fn check_depth_range(min_depth: f32, max_depth: f32) -> Result<()> {
    if !(0.0 < min_depth && min_depth < max_depth) {
        return Err(Error::InvalidInput(format!(
            "need 0 < min_depth < max_depth, got {min_depth}, {max_depth}"
        )));
    }
    Ok(())
}

/// Per-pixel unit-plane rays scaled by depth: camera-frame 3D points,
/// `[3,H,W]` flattened.
pub fn backproject(depth: &DepthMap, k: &Intrinsics) -> Vec<f32> {
    let g = depth.grid();
    let (h, w) = (g.height, g.width);
    let hw = h * w;
    let mut pts = vec![0.0f32; 3 * hw];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let z = g.data[i];
            pts[i] = z * (x as f32 - k.cx) / k.fx;
            pts[hw + i] = z * (y as f32 - k.cy) / k.fy;
            pts[2 * hw + i] = z;
        }
    }
    pts
}

/// Transform points with `pose` and project them with `k`. Returns the
/// `[2,H,W]` pixel-coordinate grid and a validity grid that is 0 where the
/// transformed point fell behind the camera.
pub fn project(
    points: &[f32],
    h: usize,
    w: usize,
    pose: &RigidPose,
    k: &Intrinsics,
) -> (Vec<f32>, Grid) {
    let hw = h * w;
    assert_eq!(points.len(), 3 * hw, "points must be [3,H,W]");
    let mut coords = vec![0.0f32; 2 * hw];
    let mut valid = Grid::filled(h, w, 0.0);
    for i in 0..hw {
        let p = pose.apply([
            points[i] as f64,
            points[hw + i] as f64,
            points[2 * hw + i] as f64,
        ]);
        if p[2] > Z_EPS as f64 {
            coords[i] = (k.fx as f64 * p[0] / p[2] + k.cx as f64) as f32;
            coords[hw + i] = (k.fy as f64 * p[1] / p[2] + k.cy as f64) as f32;
            valid.data[i] = 1.0;
        } else {
            coords[i] = -2.0 * w as f32 - 8.0;
            coords[hw + i] = -2.0 * h as f32 - 8.0;
        }
    }
    (coords, valid)
}

/// Bilinear sampling of `source` at `coords`. Validity is 0 where any of the
/// four taps left the source image or where `coord_valid` is 0.
pub fn warp(source: &Image, coords: &[f32], coord_valid: &Grid) -> Result<WarpResult> {
    let (h, w) = (coord_valid.height, coord_valid.width);
    if coords.len() != 2 * h * w {
        return Err(Error::ShapeMismatch(format!(
            "coords length {} != 2x{}x{}",
            coords.len(),
            h,
            w
        )));
    }
    let (out, sample_valid) = kernels::grid_sample_fwd(
        &source.data,
        source.channels,
        source.height,
        source.width,
        coords,
        h,
        w,
    );
    let validity = Grid::new(
        h,
        w,
        sample_valid
            .iter()
            .zip(coord_valid.data.iter())
            .map(|(a, b)| a * b)
            .collect(),
    )?;
    Ok(WarpResult {
        image: Image::new(source.channels, h, w, out)?,
        validity,
    })
}

/// Synthesize the target view from `source_frame` using the target's depth
/// and the target-to-source transform.
pub fn reproject(
    source_frame: &CameraFrame,
    target_depth: &DepthMap,
    pose_t_to_s: &RigidPose,
    k: &Intrinsics,
) -> Result<WarpResult> {
    let g = target_depth.grid();
    if source_frame.image.height != g.height || source_frame.image.width != g.width {
        return Err(Error::ShapeMismatch(format!(
            "source image {}x{} vs depth {}x{}",
            source_frame.image.height, source_frame.image.width, g.height, g.width
        )));
    }
    let pts = backproject(target_depth, k);
    let (coords, valid) = project(&pts, g.height, g.width, pose_t_to_s, k);
    warp(&source_frame.image, &coords, &valid)
}
