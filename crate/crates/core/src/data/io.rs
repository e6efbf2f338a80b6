//! On-disk codecs: 8-bit RGB PNG for colors, 16-bit grayscale PNG with a
//! declared scale factor for depths, 8-bit grayscale for masks, and small
//! plain-text records.

use crate::geometry::{DepthMap, Grid, Image};
use crate::{Error, Result};
use std::fs;
use std::path::Path;

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Planar [0,1] floats to interleaved 8-bit RGB.
pub fn write_rgb8(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::InvalidInput(format!(
            "rgb writer needs 3 channels, got {}",
            img.channels
        )));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let (h, w) = (img.height, img.width);
    let mut buf = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf[(y * w + x) * 3 + c] = quantize8(img.at(c, y, x));
            }
        }
    }
    let out: image::ImageBuffer<image::Rgb<u8>, Vec<u8>> =
        image::ImageBuffer::from_raw(w as u32, h as u32, buf).expect("sized buffer");
    out.save(path)
        .map_err(|e| Error::image(path, e.to_string()))
}

pub fn read_rgb8(path: &Path) -> Result<Image> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Image::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out.set(c, y, x, p.0[c] as f32 / 255.0);
            }
        }
    }
    Ok(out)
}

/// Depth in meters to 16-bit grayscale: stored value = depth * scale.
pub fn write_depth16(path: &Path, depth: &DepthMap, scale: f32) -> Result<()> {
    if scale <= 0.0 {
        return Err(Error::InvalidInput(format!("depth scale {scale} <= 0")));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let g = depth.grid();
    let mut buf = vec![0u16; g.height * g.width];
    for (i, &v) in g.data.iter().enumerate() {
        let q = (v * scale).round();
        if q > u16::MAX as f32 {
            return Err(Error::InvalidInput(format!(
                "depth {v} m overflows 16 bits at scale {scale}"
            )));
        }
        buf[i] = q.max(0.0) as u16;
    }
    let out: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(g.width as u32, g.height as u32, buf).expect("sized buffer");
    out.save(path)
        .map_err(|e| Error::image(path, e.to_string()))
}

pub fn read_depth16(path: &Path, scale: f32) -> Result<DepthMap> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e.to_string()))?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let raw = img.get_pixel(x as u32, y as u32).0[0];
            // Quantized zeros would violate the positive-depth invariant;
            // treat them as half a quantization step.
            data[y * w + x] = (raw as f32).max(0.5) / scale;
        }
    }
    DepthMap::new(Grid::new(h, w, data)?)
}

/// Binary mask to 8-bit grayscale (255 = set).
pub fn write_mask8(path: &Path, mask: &Grid) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let buf: Vec<u8> = mask
        .data
        .iter()
        .map(|&v| if v != 0.0 { 255u8 } else { 0u8 })
        .collect();
    let out: image::ImageBuffer<image::Luma<u8>, Vec<u8>> =
        image::ImageBuffer::from_raw(mask.width as u32, mask.height as u32, buf)
            .expect("sized buffer");
    out.save(path)
        .map_err(|e| Error::image(path, e.to_string()))
}

pub fn read_mask8(path: &Path) -> Result<Grid> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e.to_string()))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = img
        .pixels()
        .map(|p| if p.0[0] >= 128 { 1.0 } else { 0.0 })
        .collect();
    Grid::new(h, w, data)
}

pub fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Bilinear resize for color images (used when unifying sources of
/// different sizes).
pub fn resize_bilinear(img: &Image, oh: usize, ow: usize) -> Image {
    if img.height == oh && img.width == ow {
        return img.clone();
    }
    let mut out = Image::zeros(img.channels, oh, ow);
    let sy = img.height as f32 / oh as f32;
    let sx = img.width as f32 / ow as f32;
    for y in 0..oh {
        for x in 0..ow {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, img.height as f32 - 1.0);
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, img.width as f32 - 1.0);
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(img.height - 1), (x0 + 1).min(img.width - 1));
            let (ay, ax) = (fy - y0 as f32, fx - x0 as f32);
            for c in 0..img.channels {
                let v = (1.0 - ay) * (1.0 - ax) * img.at(c, y0, x0)
                    + (1.0 - ay) * ax * img.at(c, y0, x1)
                    + ay * (1.0 - ax) * img.at(c, y1, x0)
                    + ay * ax * img.at(c, y1, x1);
                out.set(c, y, x, v);
            }
        }
    }
    out
}

/// Nearest-neighbor resize for depth and masks (no value blending).
pub fn resize_nearest(g: &Grid, oh: usize, ow: usize) -> Grid {
    if g.height == oh && g.width == ow {
        return g.clone();
    }
    let mut out = Grid::filled(oh, ow, 0.0);
    for y in 0..oh {
        for x in 0..ow {
            let sy = (y * g.height / oh).min(g.height - 1);
            let sx = (x * g.width / ow).min(g.width - 1);
            out.set(y, x, g.at(sy, sx));
        }
    }
    out
}
