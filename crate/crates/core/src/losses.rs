//! Training objectives: photometric error, edge-aware smoothness, sky
//! regularization, affine-invariant supervised depth, uncertainty-fused
//! reprojection, and the two optimizer-level composites.
//!
//! Tape functions (suffix `_t`) build differentiable graphs; plain functions
//! serve masking, logging and evaluation. Reductions that honor a validity
//! mask exclude masked-out pixels from both numerator and denominator.

use crate::geometry::{Grid, Image, WarpResult};
use crate::tensor::{BinK, Tape, Var};
use crate::{Error, Result};

/// SSIM weight in the photometric error.
pub const SSIM_WEIGHT: f32 = 0.85;

const SSIM_C1: f32 = 0.01 * 0.01;
const SSIM_C2: f32 = 0.03 * 0.03;

/// Binary sky mask (1 = sky).
#[derive(Clone, Debug)]
pub struct SkyMask(pub Grid);

impl SkyMask {
    pub fn new(grid: Grid) -> Result<Self> {
        for &v in &grid.data {
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidInput(format!(
                    "sky mask value {v} not in {{0, 1}}"
                )));
            }
        }
        Ok(SkyMask(grid))
    }

    pub fn empty(height: usize, width: usize) -> Self {
        SkyMask(Grid::filled(height, width, 0.0))
    }

    pub fn coverage(&self) -> f64 {
        let n = self.0.data.len().max(1);
        self.0.data.iter().map(|&v| v as f64).sum::<f64>() / n as f64
    }
}

/// Row-wise height decay: row j carries (H - j) / H.
#[derive(Clone, Debug)]
pub struct HeightDecay(pub Grid);

pub fn height_decay(height: usize, width: usize) -> HeightDecay {
    let mut g = Grid::filled(height, width, 0.0);
    for j in 0..height {
        let v = (height - j) as f32 / height as f32;
        for x in 0..width {
            g.set(j, x, v);
        }
    }
    HeightDecay(g)
}

/// Named scalar components of one optimizer step. Raw (unweighted) values
/// are stored next to the weights that entered the total so the sum can be
/// reproduced exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub d2c: f32,
    pub supervised: f32,
    /// Fused reprojection data term (already includes the alpha-weighted
    /// uncertainty regularizer when produced by the unsupervised step).
    pub photometric: f32,
    /// Raw mean of all uncertainty maps, pre-alpha; informational.
    pub uncertainty_reg: f32,
    pub alpha: f32,
    pub smoothness: f32,
    pub smoothness_weight: f32,
    pub sky: f32,
    pub sky_weight: f32,
    pub total: f32,
}

impl LossBreakdown {
    /// Recompute the total from stored components and weights.
    pub fn recompose(&self) -> f32 {
        self.d2c
            + self.supervised
            + self.photometric
            + self.smoothness_weight * self.smoothness
            + self.sky_weight * self.sky
    }

    /// Stable field order for line-delimited logs.
    pub fn fields(&self) -> [(&'static str, f32); 8] {
        [
            ("d2c", self.d2c),
            ("supervised", self.supervised),
            ("photometric", self.photometric),
            ("unc_reg", self.uncertainty_reg),
            ("smoothness", self.smoothness),
            ("sky", self.sky),
            ("total", self.total),
            ("alpha", self.alpha),
        ]
    }
}

/// Optimizer-1 composite: d2c + supervised + gamma * smoothness.
pub fn optimizer1_loss(d2c: f32, supervised: f32, smoothness: f32, gamma: f32) -> LossBreakdown {
    LossBreakdown {
        d2c,
        supervised,
        smoothness,
        smoothness_weight: gamma,
        total: d2c + supervised + gamma * smoothness,
        ..Default::default()
    }
}

/// Optimizer-2 composite: fused + beta * smoothness + gamma * sky, where
/// `fused` is the full uncertainty-fused data term.
pub fn optimizer2_loss(
    fused: f32,
    smoothness: f32,
    sky: f32,
    beta: f32,
    gamma: f32,
) -> LossBreakdown {
    LossBreakdown {
        photometric: fused,
        smoothness,
        smoothness_weight: beta,
        sky,
        sky_weight: gamma,
        total: fused + beta * smoothness + gamma * sky,
        ..Default::default()
    }
}

fn require_same_shape(t: &Tape, a: Var, b: Var) -> Result<()> {
    if t.shape(a) != t.shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            t.shape(a),
            t.shape(b)
        )));
    }
    Ok(())
}

/// Per-pixel photometric error map `[1,H,W]`:
/// 0.85 * (1 - SSIM)/2 + 0.15 * L1, both channel-averaged. SSIM statistics
/// come from a 3x3 mean-pooled window.
pub fn photometric_error_t(t: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    require_same_shape(t, pred, target)?;
    let diff = t.sub(pred, target);
    let absdiff = t.abs(diff);
    let l1 = t.mean_channels(absdiff);

    let mu_x = t.box_filter3(pred);
    let mu_y = t.box_filter3(target);
    let xx = t.mul(pred, pred);
    let yy = t.mul(target, target);
    let xy = t.mul(pred, target);
    let exx = t.box_filter3(xx);
    let eyy = t.box_filter3(yy);
    let exy = t.box_filter3(xy);
    let mu_x2 = t.mul(mu_x, mu_x);
    let mu_y2 = t.mul(mu_y, mu_y);
    let mu_xy = t.mul(mu_x, mu_y);
    let sigma_x = t.sub(exx, mu_x2);
    let sigma_y = t.sub(eyy, mu_y2);
    let sigma_xy = t.sub(exy, mu_xy);

    let n1 = t.affine_const(mu_xy, 2.0, SSIM_C1);
    let n2 = t.affine_const(sigma_xy, 2.0, SSIM_C2);
    let numer = t.mul(n1, n2);
    let d1a = t.add(mu_x2, mu_y2);
    let d1 = t.add_const(d1a, SSIM_C1);
    let d2a = t.add(sigma_x, sigma_y);
    let d2 = t.add_const(d2a, SSIM_C2);
    let denom = t.mul(d1, d2);
    let ssim = t.div(numer, denom);
    let dssim_raw = t.affine_const(ssim, -0.5, 0.5);
    let dssim = t.clamp(dssim_raw, 0.0, 1.0);
    let dssim_mean = t.mean_channels(dssim);

    let w_ssim = t.scale(dssim_mean, SSIM_WEIGHT);
    let w_l1 = t.scale(l1, 1.0 - SSIM_WEIGHT);
    Ok(t.add(w_ssim, w_l1))
}

/// Scalar mean of a `[1,H,W]` map over pixels where `mask` is set; plain
/// mean without a mask; zero when the mask is empty.
pub fn masked_mean_t(t: &mut Tape, x: Var, mask: Option<&Grid>) -> Var {
    match mask {
        None => t.mean(x),
        Some(m) => {
            let count: f64 = m.data.iter().map(|&v| v as f64).sum();
            if count == 0.0 {
                return t.scalar_const(0.0);
            }
            let mv = t.constant(&[1, m.height, m.width], m.data.clone());
            let mx = t.mul(x, mv);
            let s = t.sum(mx);
            t.scale(s, (1.0 / count) as f32)
        }
    }
}

/// Edge-aware first-order smoothness of mean-normalized disparity:
/// mean(|dx d_n| * exp(-|dx I|)) + mean(|dy d_n| * exp(-|dy I|)).
pub fn smoothness_t(t: &mut Tape, disp: Var, image: Var) -> Result<Var> {
    let ds = t.shape(disp).to_vec();
    let is = t.shape(image).to_vec();
    if ds.len() != 3 || is.len() != 3 || ds[1] != is[1] || ds[2] != is[2] {
        return Err(Error::ShapeMismatch(format!("disp {ds:?} vs image {is:?}")));
    }
    let m = t.mean(disp);
    if t.scalar(m) <= 0.0 {
        return Err(Error::DegenerateInput(
            "smoothness needs positive mean disparity".into(),
        ));
    }
    let dn = t.div_scalar(disp, m);
    let (h, w) = (ds[1], ds[2]);

    let mut total = t.scalar_const(0.0);
    if w >= 2 {
        let dx = t.diff_x(dn);
        let adx = t.abs(dx);
        let ix = t.diff_x(image);
        let aix = t.abs(ix);
        let gx = t.mean_channels(aix);
        let ngx = t.neg(gx);
        let ex = t.exp(ngx);
        let wx = t.mul(adx, ex);
        let mx = t.mean(wx);
        total = t.add(total, mx);
    }
    if h >= 2 {
        let dy = t.diff_y(dn);
        let ady = t.abs(dy);
        let iy = t.diff_y(image);
        let aiy = t.abs(iy);
        let gy = t.mean_channels(aiy);
        let ngy = t.neg(gy);
        let ey = t.exp(ngy);
        let wy = t.mul(ady, ey);
        let my = t.mean(wy);
        total = t.add(total, my);
    }
    Ok(total)
}

/// Height-weighted sky prior: sum(G * |M * disp|) / sum(M); 0 for an empty
/// mask.
pub fn sky_regularization_t(t: &mut Tape, disp: Var, sky: &SkyMask) -> Result<Var> {
    let ds = t.shape(disp).to_vec();
    if ds.len() != 3 || ds[0] != 1 || ds[1] != sky.0.height || ds[2] != sky.0.width {
        return Err(Error::ShapeMismatch(format!(
            "disp {ds:?} vs sky {}x{}",
            sky.0.height, sky.0.width
        )));
    }
    let mask_sum: f64 = sky.0.data.iter().map(|&v| v as f64).sum();
    if mask_sum == 0.0 {
        return Ok(t.scalar_const(0.0));
    }
    let decay = height_decay(sky.0.height, sky.0.width);
    let weights: Vec<f32> = decay
        .0
        .data
        .iter()
        .zip(sky.0.data.iter())
        .map(|(g, m)| g * m)
        .collect();
    let wv = t.constant(&[1, sky.0.height, sky.0.width], weights);
    let ad = t.abs(disp);
    let weighted = t.mul(ad, wv);
    let s = t.sum(weighted);
    Ok(t.scale(s, (1.0 / mask_sum) as f32))
}

/// Scale-and-shift normalization: (d - median) / mean-abs-deviation.
/// Rejects constant inputs (zero deviation).
pub fn affine_normalize_t(t: &mut Tape, x: Var) -> Result<Var> {
    let n: usize = t.shape(x).iter().product();
    if n < 2 {
        return Err(Error::InvalidInput(
            "affine normalization needs at least 2 values".into(),
        ));
    }
    let med = t.median(x);
    let centered = t.sub_scalar(x, med);
    let ac = t.abs(centered);
    let s = t.mean(ac);
    if t.scalar(s) <= 0.0 {
        return Err(Error::DegenerateInput(
            "constant map has zero deviation".into(),
        ));
    }
    Ok(t.div_scalar(centered, s))
}

/// Plain-data affine normalization (f64), the non-tape twin used by
/// evaluation paths and sanity checks.
pub fn affine_normalize(values: &[f32]) -> Result<Vec<f32>> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(
            "affine normalization needs at least 2 values".into(),
        ));
    }
    let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let med = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let s: f64 = values.iter().map(|&v| (v as f64 - med).abs()).sum::<f64>() / n as f64;
    if s <= 0.0 {
        return Err(Error::DegenerateInput(
            "constant map has zero deviation".into(),
        ));
    }
    Ok(values
        .iter()
        .map(|&v| ((v as f64 - med) / s) as f32)
        .collect())
}

/// Affine-invariant supervised loss: sum over valid pixels of
/// |pred* - gt*| / (H*W), both maps normalized over the valid set only.
pub fn supervised_depth_loss_t(
    t: &mut Tape,
    pred: Var,
    gt: Var,
    valid: Option<&Grid>,
) -> Result<Var> {
    require_same_shape(t, pred, gt)?;
    let shape = t.shape(pred).to_vec();
    let n_total: usize = shape.iter().product();
    let (p, g) = match valid {
        None => (pred, gt),
        Some(mask) => {
            let idx: Vec<usize> = mask
                .data
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, _)| i)
                .collect();
            if idx.len() < 2 {
                return Err(Error::InvalidInput(
                    "supervised loss needs at least 2 valid pixels".into(),
                ));
            }
            (t.gather(pred, idx.clone()), t.gather(gt, idx))
        }
    };
    let pn = affine_normalize_t(t, p)?;
    let gn = affine_normalize_t(t, g)?;
    let d = t.sub(pn, gn);
    let ad = t.abs(d);
    let s = t.sum(ad);
    Ok(t.scale(s, 1.0 / n_total as f32))
}

/// Pair weights from raw uncertainties via 1 - softmax. For a pair this is
/// exactly U_k = sigmoid(u_other - u_k), so the weights sum to one per pixel
/// and decrease monotonically in the own raw uncertainty.
pub fn uncertainty_weights_t(t: &mut Tape, raw: [Var; 2]) -> [Var; 2] {
    let d01 = t.sub(raw[1], raw[0]);
    let d10 = t.sub(raw[0], raw[1]);
    [t.sigmoid(d01), t.sigmoid(d10)]
}

/// Plain-data pair weights; rejects lists that are not exactly a pair (the
/// 1 - softmax construction only sums to one for pairs).
pub fn uncertainty_weights(raw: &[Grid]) -> Result<Vec<Grid>> {
    if raw.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "uncertainty weights need exactly 2 maps, got {}",
            raw.len()
        )));
    }
    if raw[0].data.len() != raw[1].data.len() {
        return Err(Error::ShapeMismatch("uncertainty map sizes differ".into()));
    }
    for g in raw {
        if g.data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "raw uncertainties must be nonnegative and finite".into(),
            ));
        }
    }
    let sig = |x: f32| 1.0 / (1.0 + (-x).exp());
    let w0: Vec<f32> = raw[0]
        .data
        .iter()
        .zip(raw[1].data.iter())
        .map(|(&a, &b)| sig(b - a))
        .collect();
    let w1: Vec<f32> = w0.iter().map(|&v| 1.0 - v).collect();
    Ok(vec![
        Grid::new(raw[0].height, raw[0].width, w0)?,
        Grid::new(raw[1].height, raw[1].width, w1)?,
    ])
}

/// Uncertainty-weighted fusion of the two temporal reprojection errors plus
/// the mean-uncertainty regularizer:
/// mean_i(sum_c u_c pe_c) + alpha * mean_i(sum_c raw_c).
pub fn temporal_fusion_loss_t(
    t: &mut Tape,
    pe: [Var; 2],
    raw_unc: [Var; 2],
    alpha: f32,
    mask: Option<&Grid>,
) -> Var {
    let w = uncertainty_weights_t(t, raw_unc);
    let p0 = t.mul(w[0], pe[0]);
    let p1 = t.mul(w[1], pe[1]);
    let fused = t.add(p0, p1);
    let data = masked_mean_t(t, fused, mask);
    let raw_sum = t.add(raw_unc[0], raw_unc[1]);
    let reg = t.mean(raw_sum);
    let reg_w = t.scale(reg, alpha);
    t.add(data, reg_w)
}

/// Pieces of the temporal-spatial fused objective, kept separate for
/// logging.
pub struct FusedLoss {
    pub total: Var,
    pub data: Var,
    /// Raw mean of all uncertainty maps (pre-alpha).
    pub raw_reg: Var,
}

/// Two-level fusion: per-pixel temporal pair fused by frame weights, then
/// temporal vs spatial fused by domain weights, plus the alpha-weighted
/// regularizer over all four raw maps.
pub fn utsf_loss_t(
    t: &mut Tape,
    temporal_pe: [Var; 2],
    spatial_pe: Var,
    raw_frames: [Var; 2],
    raw_domains: [Var; 2],
    alpha: f32,
    mask: Option<&Grid>,
) -> FusedLoss {
    let wf = uncertainty_weights_t(t, raw_frames);
    let p0 = t.mul(wf[0], temporal_pe[0]);
    let p1 = t.mul(wf[1], temporal_pe[1]);
    let temporal = t.add(p0, p1);

    let wd = uncertainty_weights_t(t, raw_domains);
    let dt = t.mul(wd[0], temporal);
    let dsp = t.mul(wd[1], spatial_pe);
    let fused = t.add(dt, dsp);
    let data = masked_mean_t(t, fused, mask);

    let rf = t.add(raw_frames[0], raw_frames[1]);
    let rd = t.add(raw_domains[0], raw_domains[1]);
    let raw_all = t.add(rf, rd);
    let raw_reg = t.mean(raw_all);
    let reg_w = t.scale(raw_reg, alpha);
    let total = t.add(data, reg_w);
    FusedLoss {
        total,
        data,
        raw_reg,
    }
}

/// Mean photometric error between a predicted color image and the original.
pub fn color_reconstruction_loss_t(t: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let pe = photometric_error_t(t, pred, target)?;
    Ok(t.mean(pe))
}

/// Eq.-8 style comparison on precomputed per-frame error maps: keep a pixel
/// (mask 1) only when the best warped error strictly beats the best
/// unwarped error.
pub fn auto_mask_from_pe(warped_pe: &[Grid], raw_pe: &[Grid]) -> Result<Grid> {
    if warped_pe.is_empty() || raw_pe.is_empty() {
        return Err(Error::InvalidInput(
            "auto-mask needs at least one related frame".into(),
        ));
    }
    let (h, w) = (warped_pe[0].height, warped_pe[0].width);
    let mut out = Grid::filled(h, w, 0.0);
    for i in 0..h * w {
        let best_warped = warped_pe
            .iter()
            .map(|g| g.data[i])
            .fold(f32::INFINITY, f32::min);
        let best_raw = raw_pe
            .iter()
            .map(|g| g.data[i])
            .fold(f32::INFINITY, f32::min);
        if best_warped < best_raw {
            out.data[i] = 1.0;
        }
    }
    Ok(out)
}

/// Auto-masking from images: builds the per-frame photometric maps on a
/// gradient-free scratch tape and applies the strict comparison.
pub fn auto_mask(warped: &[WarpResult], raw_frames: &[Image], target: &Image) -> Result<Grid> {
    if warped.is_empty() || raw_frames.is_empty() {
        return Err(Error::InvalidInput(
            "auto-mask needs at least one related frame".into(),
        ));
    }
    let mut t = Tape::new();
    let tv = t.constant(&target.shape(), target.data.clone());
    let mut warped_pe = Vec::new();
    for wr in warped {
        let wv = t.constant(&wr.image.shape(), wr.image.data.clone());
        let pe = photometric_error_t(&mut t, wv, tv)?;
        warped_pe.push(Grid::new(
            target.height,
            target.width,
            t.data(pe).to_vec(),
        )?);
    }
    let mut raw_pe = Vec::new();
    for img in raw_frames {
        let iv = t.constant(&img.shape(), img.data.clone());
        let pe = photometric_error_t(&mut t, iv, tv)?;
        raw_pe.push(Grid::new(target.height, target.width, t.data(pe).to_vec())?);
    }
    auto_mask_from_pe(&warped_pe, &raw_pe)
}

/// Per-pixel minimum over per-frame error maps with invalid pixels excluded:
/// invalid entries are pushed to +inf before the min. Returns the combined
/// map and an any-valid mask.
pub fn min_over_frames_t(t: &mut Tape, pes: &[(Var, &Grid)]) -> (Var, Grid) {
    assert!(!pes.is_empty());
    const BIG: f32 = 1e6;
    let (h, w) = {
        let s = t.shape(pes[0].0);
        (s[1], s[2])
    };
    let mut any_valid = Grid::filled(h, w, 0.0);
    let mut combined: Option<Var> = None;
    for (pe, valid) in pes {
        let penalty: Vec<f32> = valid.data.iter().map(|&v| (1.0 - v) * BIG).collect();
        let pv = t.constant(&[1, h, w], penalty);
        let masked = t.add(*pe, pv);
        combined = Some(match combined {
            None => masked,
            Some(acc) => t.bin(acc, masked, BinK::Min),
        });
        for i in 0..h * w {
            if valid.data[i] != 0.0 {
                any_valid.data[i] = 1.0;
            }
        }
    }
    (combined.unwrap(), any_valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::tensor::gradcheck;

    fn rand_image(rng: &mut Stream, c: usize, h: usize, w: usize) -> Vec<f32> {
        // Smooth-ish random field in [0.1, 0.9].
        (0..c * h * w)
            .map(|i| {
                let x = (i % w) as f32;
                let y = ((i / w) % h) as f32;
                let base = 0.5
                    + 0.25 * ((x * 0.7 + y * 0.3) * 0.9).sin()
                    + 0.1 * rng.uniform_in(-1.0, 1.0);
                base.clamp(0.1, 0.9)
            })
            .collect()
    }

    #[test]
    fn photometric_zero_for_identical_images() {
        let mut rng = Stream::seed_from(40);
        let data = rand_image(&mut rng, 3, 6, 8);
        let mut t = Tape::new();
        let a = t.constant(&[3, 6, 8], data.clone());
        let b = t.constant(&[3, 6, 8], data);
        let pe = photometric_error_t(&mut t, a, b).unwrap();
        for &v in t.data(pe) {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn photometric_l1_term_on_constant_inverted_images() {
        // pred = 1 - target on constant images: per-channel L1 = 2|t - 0.5|.
        for tv in [0.2f32, 0.35, 0.5, 0.8] {
            let mut t = Tape::new();
            let target = t.constant(&[3, 4, 4], vec![tv; 48]);
            let pred = t.constant(&[3, 4, 4], vec![1.0 - tv; 48]);
            let diff = t.sub(pred, target);
            let absdiff = t.abs(diff);
            let l1 = t.mean_channels(absdiff);
            let expect = 2.0 * (tv - 0.5).abs();
            for &v in t.data(l1) {
                assert!((v - expect).abs() < 1e-6, "t={tv}: {v} vs {expect}");
            }
        }
    }

    #[test]
    fn photometric_matches_scalar_ssim_oracle() {
        // Independent scalar SSIM: direct 3x3 window statistics in f64,
        // compared at interior pixels (away from padding).
        let mut rng = Stream::seed_from(41);
        let (h, w) = (8usize, 9usize);
        let pred = rand_image(&mut rng, 3, h, w);
        let target = rand_image(&mut rng, 3, h, w);

        let mut t = Tape::new();
        let a = t.constant(&[3, h, w], pred.clone());
        let b = t.constant(&[3, h, w], target.clone());
        let pe = photometric_error_t(&mut t, a, b).unwrap();
        let pe_data = t.data(pe);

        let at = |buf: &[f32], c: usize, y: usize, x: usize| buf[(c * h + y) * w + x] as f64;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut dssim_sum = 0.0;
                let mut l1_sum = 0.0;
                for c in 0..3 {
                    let mut mx = 0.0;
                    let mut my = 0.0;
                    let mut mxx = 0.0;
                    let mut myy = 0.0;
                    let mut mxy = 0.0;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (yy, xx) = (y + dy - 1, x + dx - 1);
                            let (px, tx) = (at(&pred, c, yy, xx), at(&target, c, yy, xx));
                            mx += px;
                            my += tx;
                            mxx += px * px;
                            myy += tx * tx;
                            mxy += px * tx;
                        }
                    }
                    mx /= 9.0;
                    my /= 9.0;
                    let sx = mxx / 9.0 - mx * mx;
                    let sy = myy / 9.0 - my * my;
                    let sxy = mxy / 9.0 - mx * my;
                    let c1 = 0.0001;
                    let c2 = 0.0009;
                    let ssim = ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                        / ((mx * mx + my * my + c1) * (sx + sy + c2));
                    dssim_sum += ((1.0 - ssim) / 2.0).clamp(0.0, 1.0);
                    l1_sum += (at(&pred, c, y, x) - at(&target, c, y, x)).abs();
                }
                let expect = 0.85 * dssim_sum / 3.0 + 0.15 * l1_sum / 3.0;
                let got = pe_data[y * w + x] as f64;
                assert!(
                    (got - expect).abs() < 1e-5,
                    "pixel ({y},{x}): {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn photometric_rejects_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(&[3, 4, 4], vec![0.5; 48]);
        let b = t.constant(&[3, 4, 5], vec![0.5; 60]);
        assert!(photometric_error_t(&mut t, a, b).is_err());
    }

    #[test]
    fn smoothness_zero_for_constant_disparity() {
        let mut t = Tape::new();
        let d = t.constant(&[1, 4, 6], vec![0.3; 24]);
        let img = t.constant(&[3, 4, 6], vec![0.5; 72]);
        let s = smoothness_t(&mut t, d, img).unwrap();
        assert!(t.scalar(s).abs() < 1e-7);
    }

    #[test]
    fn smoothness_ramp_closed_form() {
        // 1x8 ramp disp = a + b*j on a constant image: loss = b / mean.
        let (a, b) = (0.2f32, 0.05f32);
        let data: Vec<f32> = (0..8).map(|j| a + b * j as f32).collect();
        let mean = data.iter().sum::<f32>() / 8.0;
        let mut t = Tape::new();
        let d = t.constant(&[1, 1, 8], data);
        let img = t.constant(&[3, 1, 8], vec![0.4; 24]);
        let s = smoothness_t(&mut t, d, img).unwrap();
        let expect = b / mean;
        assert!(
            (t.scalar(s) - expect).abs() < 1e-6,
            "{} vs {expect}",
            t.scalar(s)
        );
    }

    #[test]
    fn smoothness_shrinks_under_aligned_image_edges() {
        let data: Vec<f32> = (0..8).map(|j| 0.2 + 0.05 * j as f32).collect();
        let mut t = Tape::new();
        let d = t.constant(&[1, 1, 8], data.clone());
        let flat = t.constant(&[3, 1, 8], vec![0.4; 24]);
        let s_flat = smoothness_t(&mut t, d, flat).unwrap();
        let edge_img: Vec<f32> = (0..24).map(|i| ((i % 8) as f32) * 0.1).collect();
        let d2 = t.constant(&[1, 1, 8], data);
        let edgy = t.constant(&[3, 1, 8], edge_img);
        let s_edge = smoothness_t(&mut t, d2, edgy).unwrap();
        assert!(t.scalar(s_edge) < t.scalar(s_flat));
    }

    #[test]
    fn height_decay_rows() {
        let g = height_decay(4, 2);
        assert_eq!(g.0.at(0, 0), 1.0);
        assert_eq!(g.0.at(1, 0), 0.75);
        assert_eq!(g.0.at(2, 1), 0.5);
        assert_eq!(g.0.at(3, 1), 0.25);
        let one = height_decay(1, 3);
        assert_eq!(one.0.data, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn sky_loss_brute_force_value() {
        // H=4, W=2, full mask, disp = 1: sum G = 5, sum M = 8 -> 0.625,
        // verified by an explicit double loop.
        let mut t = Tape::new();
        let d = t.constant(&[1, 4, 2], vec![1.0; 8]);
        let mask = SkyMask::new(Grid::filled(4, 2, 1.0)).unwrap();
        let s = sky_regularization_t(&mut t, d, &mask).unwrap();

        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for j in 0..4usize {
            for _ in 0..2usize {
                num += ((4 - j) as f64 / 4.0) * 1.0;
                den += 1.0;
            }
        }
        let expect = (num / den) as f32;
        assert!((expect - 0.625).abs() < 1e-9);
        assert!((t.scalar(s) - expect).abs() < 1e-6);
    }

    #[test]
    fn sky_loss_degenerate_cases() {
        let mut t = Tape::new();
        let tiny = t.constant(&[1, 4, 2], vec![1e-9; 8]);
        let empty = SkyMask::empty(4, 2);
        let s = sky_regularization_t(&mut t, tiny, &empty).unwrap();
        assert_eq!(t.scalar(s), 0.0);
        // Near-zero disparity in the sky region drives the loss to ~0.
        let full = SkyMask::new(Grid::filled(4, 2, 1.0)).unwrap();
        let s2 = sky_regularization_t(&mut t, tiny, &full).unwrap();
        assert!(t.scalar(s2) < 1e-8);
    }

    #[test]
    fn sky_loss_is_linear_in_masked_disparity() {
        let mut rng = Stream::seed_from(42);
        let data: Vec<f32> = (0..24).map(|_| rng.uniform_in(0.05, 0.9)).collect();
        let doubled: Vec<f32> = data.iter().map(|v| v * 2.0).collect();
        let mut mask = Grid::filled(4, 6, 0.0);
        for i in 0..10 {
            mask.data[i] = 1.0;
        }
        let mask = SkyMask::new(mask).unwrap();
        let mut t = Tape::new();
        let d1 = t.constant(&[1, 4, 6], data);
        let d2 = t.constant(&[1, 4, 6], doubled);
        let s1 = sky_regularization_t(&mut t, d1, &mask).unwrap();
        let s2 = sky_regularization_t(&mut t, d2, &mask).unwrap();
        assert!((t.scalar(s2) - 2.0 * t.scalar(s1)).abs() < 1e-6);
    }

    #[test]
    fn affine_normalize_hand_value() {
        // D = [1,2,3,10]: median 2.5, s = 2.5, D* = [-0.6, -0.2, 0.2, 3.0].
        let out = affine_normalize(&[1.0, 2.0, 3.0, 10.0]).unwrap();
        let expect = [-0.6f32, -0.2, 0.2, 3.0];
        for (a, b) in out.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-6, "{out:?}");
        }
        // Tape version agrees.
        let mut t = Tape::new();
        let x = t.constant(&[4], vec![1.0, 2.0, 3.0, 10.0]);
        let n = affine_normalize_t(&mut t, x).unwrap();
        for (a, b) in t.data(n).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn affine_normalize_is_affine_invariant() {
        let mut rng = Stream::seed_from(43);
        let base: Vec<f32> = (0..50).map(|_| rng.uniform_in(0.1, 5.0)).collect();
        let n0 = affine_normalize(&base).unwrap();
        for _ in 0..20 {
            let a = rng.uniform_in(0.1, 4.0);
            let b = rng.uniform_in(-2.0, 2.0);
            let scaled: Vec<f32> = base.iter().map(|&v| a * v + b).collect();
            let n1 = affine_normalize(&scaled).unwrap();
            for (x, y) in n0.iter().zip(n1.iter()) {
                assert!((x - y).abs() < 2e-5, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn affine_normalize_median_zero_mad_one() {
        let mut rng = Stream::seed_from(44);
        let data: Vec<f32> = (0..33).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let n = affine_normalize(&data).unwrap();
        let mut sorted = n.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = sorted[sorted.len() / 2];
        assert!(med.abs() < 1e-6);
        let mad: f32 = n.iter().map(|v| v.abs()).sum::<f32>() / n.len() as f32;
        assert!((mad - 1.0).abs() < 1e-5);
    }

    #[test]
    fn affine_normalize_rejects_constant() {
        assert!(affine_normalize(&[2.0; 8]).is_err());
        let mut t = Tape::new();
        let x = t.constant(&[8], vec![2.0; 8]);
        assert!(affine_normalize_t(&mut t, x).is_err());
    }

    #[test]
    fn supervised_loss_zero_for_identity_and_affine() {
        let mut rng = Stream::seed_from(45);
        let gt: Vec<f32> = (0..24).map(|_| rng.uniform_in(0.1, 1.0)).collect();
        let mut t = Tape::new();
        let g = t.constant(&[1, 4, 6], gt.clone());
        let p_same = t.constant(&[1, 4, 6], gt.clone());
        let l0 = supervised_depth_loss_t(&mut t, p_same, g, None).unwrap();
        assert!(t.scalar(l0).abs() < 1e-6);

        let affine: Vec<f32> = gt.iter().map(|&v| 3.0 * v + 0.7).collect();
        let p_aff = t.constant(&[1, 4, 6], affine);
        let l1 = supervised_depth_loss_t(&mut t, p_aff, g, None).unwrap();
        assert!(t.scalar(l1).abs() < 1e-5, "{}", t.scalar(l1));
    }

    #[test]
    fn supervised_loss_perturbation_matches_brute_force() {
        let mut rng = Stream::seed_from(46);
        let gt: Vec<f32> = (0..24).map(|_| rng.uniform_in(0.1, 1.0)).collect();
        let mut pred = gt.clone();
        pred[7] += 0.3;
        let mut t = Tape::new();
        let g = t.constant(&[1, 4, 6], gt.clone());
        let p = t.constant(&[1, 4, 6], pred.clone());
        let l = supervised_depth_loss_t(&mut t, p, g, None).unwrap();

        // Brute-force re-derivation in f64.
        let norm = |v: &[f32]| -> Vec<f64> {
            let mut s: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = s.len();
            let med = 0.5 * (s[n / 2 - 1] + s[n / 2]);
            let mad = v.iter().map(|&x| (x as f64 - med).abs()).sum::<f64>() / n as f64;
            v.iter().map(|&x| (x as f64 - med) / mad).collect()
        };
        let (pn, gn) = (norm(&pred), norm(&gt));
        let expect: f64 = pn
            .iter()
            .zip(gn.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 24.0;
        assert!(t.scalar(l) > 0.0);
        assert!(
            (t.scalar(l) as f64 - expect).abs() < 1e-6,
            "{} vs {expect}",
            t.scalar(l)
        );
    }

    #[test]
    fn supervised_loss_respects_valid_mask() {
        let mut rng = Stream::seed_from(47);
        let gt: Vec<f32> = (0..24).map(|_| rng.uniform_in(0.1, 1.0)).collect();
        let mut pred = gt.clone();
        // Corrupt pixel 3, then mask it out: loss must be ~0.
        pred[3] = 5.0;
        let mut valid = Grid::filled(4, 6, 1.0);
        valid.data[3] = 0.0;
        let mut t = Tape::new();
        let g = t.constant(&[1, 4, 6], gt);
        let p = t.constant(&[1, 4, 6], pred);
        let l = supervised_depth_loss_t(&mut t, p, g, Some(&valid)).unwrap();
        assert!(t.scalar(l).abs() < 1e-6);
    }

    #[test]
    fn uncertainty_weights_examples() {
        // (0,0) -> (0.5, 0.5); (0, ln 3) -> (0.75, 0.25).
        let z = Grid::filled(1, 1, 0.0);
        let w = uncertainty_weights(&[z.clone(), z.clone()]).unwrap();
        assert!((w[0].data[0] - 0.5).abs() < 1e-7);
        assert!((w[1].data[0] - 0.5).abs() < 1e-7);

        let l3 = Grid::filled(1, 1, (3.0f32).ln());
        let w2 = uncertainty_weights(&[z, l3]).unwrap();
        assert!((w2[0].data[0] - 0.75).abs() < 1e-6);
        assert!((w2[1].data[0] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn uncertainty_weights_sum_to_one_and_are_monotone() {
        let mut rng = Stream::seed_from(48);
        let a: Vec<f32> = (0..40).map(|_| rng.uniform_in(0.0, 5.0)).collect();
        let b: Vec<f32> = (0..40).map(|_| rng.uniform_in(0.0, 5.0)).collect();
        let ga = Grid::new(5, 8, a.clone()).unwrap();
        let gb = Grid::new(5, 8, b).unwrap();
        let w = uncertainty_weights(&[ga.clone(), gb.clone()]).unwrap();
        for i in 0..40 {
            assert!((w[0].data[i] + w[1].data[i] - 1.0).abs() < 1e-6);
        }
        // Raising one raw value strictly lowers its own weight.
        let mut a_up = a;
        a_up[13] += 1.0;
        let w_up = uncertainty_weights(&[Grid::new(5, 8, a_up).unwrap(), gb]).unwrap();
        assert!(w_up[0].data[13] < w[0].data[13]);
        assert!(uncertainty_weights(&[ga]).is_err());
    }

    #[test]
    fn temporal_fusion_single_pixel_value() {
        // pe = (0.2, 0.4), raw = (0,0), alpha = 1e-2 -> 0.3.
        let mut t = Tape::new();
        let pe0 = t.constant(&[1, 1, 1], vec![0.2]);
        let pe1 = t.constant(&[1, 1, 1], vec![0.4]);
        let u0 = t.constant(&[1, 1, 1], vec![0.0]);
        let u1 = t.constant(&[1, 1, 1], vec![0.0]);
        let l = temporal_fusion_loss_t(&mut t, [pe0, pe1], [u0, u1], 1e-2, None);
        assert!((t.scalar(l) - 0.3).abs() < 1e-7);
    }

    #[test]
    fn temporal_fusion_extreme_uncertainty_ignores_frame() {
        let mut t = Tape::new();
        let pe0 = t.constant(&[1, 1, 1], vec![0.9]);
        let pe1 = t.constant(&[1, 1, 1], vec![0.1]);
        let u0 = t.constant(&[1, 1, 1], vec![30.0]);
        let u1 = t.constant(&[1, 1, 1], vec![0.0]);
        let l = temporal_fusion_loss_t(&mut t, [pe0, pe1], [u0, u1], 0.0, None);
        // Frame 0 weight ~ 0: loss approaches pe1.
        assert!((t.scalar(l) - 0.1).abs() < 1e-4);
    }

    #[test]
    fn temporal_fusion_alpha_term_adds_raw_mean() {
        let mut t = Tape::new();
        let pe0 = t.constant(&[1, 1, 1], vec![0.0]);
        let pe1 = t.constant(&[1, 1, 1], vec![0.0]);
        let u0 = t.constant(&[1, 1, 1], vec![1.0]);
        let u1 = t.constant(&[1, 1, 1], vec![1.0]);
        let alpha = 1e-2;
        let l = temporal_fusion_loss_t(&mut t, [pe0, pe1], [u0, u1], alpha, None);
        assert!((t.scalar(l) - alpha * 2.0).abs() < 1e-7);
    }

    #[test]
    fn temporal_fusion_reduces_to_plain_mean_for_identical_uncertainty() {
        let mut rng = Stream::seed_from(49);
        let pe_data: Vec<f32> = (0..24).map(|_| rng.uniform_in(0.0, 0.5)).collect();
        let u_data: Vec<f32> = (0..24).map(|_| rng.uniform_in(0.0, 2.0)).collect();
        let mut t = Tape::new();
        let pe0 = t.constant(&[1, 4, 6], pe_data.clone());
        let pe1 = t.constant(&[1, 4, 6], pe_data.clone());
        let u0 = t.constant(&[1, 4, 6], u_data.clone());
        let u1 = t.constant(&[1, 4, 6], u_data);
        let l = temporal_fusion_loss_t(&mut t, [pe0, pe1], [u0, u1], 0.0, None);
        let expect = pe_data.iter().sum::<f32>() / 24.0;
        assert!((t.scalar(l) - expect).abs() < 1e-6);
    }

    #[test]
    fn utsf_single_pixel_value() {
        // Temporal pes (0.2, 0.4), spatial 0.1, all raw 0:
        // 0.5*(0.5*0.2 + 0.5*0.4) + 0.5*0.1 = 0.2.
        let mut t = Tape::new();
        let c = |v: f32, t: &mut Tape| t.constant(&[1, 1, 1], vec![v]);
        let pe0 = c(0.2, &mut t);
        let pe1 = c(0.4, &mut t);
        let ps = c(0.1, &mut t);
        let z0 = c(0.0, &mut t);
        let z1 = c(0.0, &mut t);
        let z2 = c(0.0, &mut t);
        let z3 = c(0.0, &mut t);
        let out = utsf_loss_t(&mut t, [pe0, pe1], ps, [z0, z1], [z2, z3], 1e-2, None);
        assert!((t.scalar(out.total) - 0.2).abs() < 1e-7);
        assert!(t.scalar(out.raw_reg).abs() < 1e-9);
    }

    #[test]
    fn utsf_high_temporal_uncertainty_falls_back_to_spatial() {
        let mut t = Tape::new();
        let c = |v: f32, t: &mut Tape| t.constant(&[1, 1, 1], vec![v]);
        let pe0 = c(0.8, &mut t);
        let pe1 = c(0.9, &mut t);
        let ps = c(0.05, &mut t);
        let zf0 = c(0.0, &mut t);
        let zf1 = c(0.0, &mut t);
        let u_tau = c(30.0, &mut t);
        let u_s = c(0.0, &mut t);
        let out = utsf_loss_t(&mut t, [pe0, pe1], ps, [zf0, zf1], [u_tau, u_s], 0.0, None);
        // Domain weight for temporal ~ 0: only u_s * spatial_pe remains.
        assert!((t.scalar(out.total) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn utsf_matches_temporal_fusion_under_symmetry() {
        // Equal spatial and fused temporal errors with symmetric domain
        // uncertainties collapse to the temporal fusion data term.
        let mut rng = Stream::seed_from(50);
        let pe: Vec<f32> = (0..12).map(|_| rng.uniform_in(0.0, 0.4)).collect();
        let mut t = Tape::new();
        let pe0 = t.constant(&[1, 3, 4], pe.clone());
        let pe1 = t.constant(&[1, 3, 4], pe.clone());
        let ps = t.constant(&[1, 3, 4], pe.clone());
        let z = t.constant(&[1, 3, 4], vec![0.0; 12]);
        let fused = utsf_loss_t(&mut t, [pe0, pe1], ps, [z, z], [z, z], 0.0, None);
        let temporal = temporal_fusion_loss_t(&mut t, [pe0, pe1], [z, z], 0.0, None);
        assert!((t.scalar(fused.total) - t.scalar(temporal)).abs() < 1e-6);
    }

    #[test]
    fn optimizer_composites_and_breakdown() {
        let b1 = optimizer1_loss(0.1, 0.2, 1.0, 1e-3);
        assert!((b1.total - 0.301).abs() < 1e-7);
        assert!((b1.recompose() - b1.total).abs() < 1e-6);

        let b2 = optimizer2_loss(0.2, 1.0, 1.0, 1e-2, 1e-3);
        assert!((b2.total - 0.211).abs() < 1e-7);
        assert!((b2.recompose() - b2.total).abs() < 1e-6);

        let z1 = optimizer1_loss(0.0, 0.0, 0.0, 1e-3);
        assert_eq!(z1.total, 0.0);
        let z2 = optimizer2_loss(0.0, 0.0, 0.0, 1e-2, 1e-3);
        assert_eq!(z2.total, 0.0);

        // Zero sky term makes the total independent of the sky weight.
        let s1 = optimizer2_loss(0.3, 0.5, 0.0, 1e-2, 1e-3);
        let s2 = optimizer2_loss(0.3, 0.5, 0.0, 1e-2, 99.0);
        assert_eq!(s1.total, s2.total);
    }

    #[test]
    fn auto_mask_strict_comparison_and_invariance() {
        let warped = Grid::new(1, 3, vec![0.1, 0.5, 0.3]).unwrap();
        let raw = Grid::new(1, 3, vec![0.2, 0.5, 0.1]).unwrap();
        let m = auto_mask_from_pe(&[warped.clone()], &[raw.clone()]).unwrap();
        // Strict <: equality at pixel 1 gives 0.
        assert_eq!(m.data, vec![1.0, 0.0, 0.0]);

        // Invariant under a strictly monotone rescaling of both sides.
        let mono = |g: &Grid| {
            Grid::new(
                g.height,
                g.width,
                g.data.iter().map(|&v| (v * 3.0 + 0.2).sqrt()).collect(),
            )
            .unwrap()
        };
        let m2 = auto_mask_from_pe(&[mono(&warped)], &[mono(&raw)]).unwrap();
        assert_eq!(m.data, m2.data);
    }

    #[test]
    fn auto_mask_of_static_scene_keeps_pixels() {
        // Warped error ~0 beats raw error wherever the scene moved between
        // frames; a pixel whose raw frame already matches is dropped.
        let mut rng = Stream::seed_from(51);
        let target = Image::new(3, 4, 6, rand_image(&mut rng, 3, 4, 6)).unwrap();
        let perfect_warp = WarpResult {
            image: target.clone(),
            validity: Grid::filled(4, 6, 1.0),
        };
        let moved = Image::new(
            3,
            4,
            6,
            target.data.iter().map(|v| (v + 0.2).min(1.0)).collect(),
        )
        .unwrap();
        let m = auto_mask(&[perfect_warp], &[moved.clone()], &target).unwrap();
        assert!(m.data.iter().all(|&v| v == 1.0));

        // Raw frame equals the target (object moving with the camera):
        // warped error cannot strictly beat it anywhere.
        let warp_off = WarpResult {
            image: moved,
            validity: Grid::filled(4, 6, 1.0),
        };
        let m2 = auto_mask(&[warp_off], &[target.clone()], &target).unwrap();
        assert!(m2.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn min_over_frames_respects_validity() {
        let mut t = Tape::new();
        let a = t.constant(&[1, 1, 2], vec![0.5, 0.9]);
        let b = t.constant(&[1, 1, 2], vec![0.7, 0.2]);
        let va = Grid::new(1, 2, vec![1.0, 0.0]).unwrap();
        let vb = Grid::new(1, 2, vec![1.0, 1.0]).unwrap();
        let (m, any) = min_over_frames_t(&mut t, &[(a, &va), (b, &vb)]);
        let d = t.data(m);
        assert!((d[0] - 0.5).abs() < 1e-7);
        assert!((d[1] - 0.2).abs() < 1e-7, "invalid a must not win");
        assert_eq!(any.data, vec![1.0, 1.0]);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        // The per-loss gradient contract at spec tolerances: 1e-3 step,
        // 1e-2 relative, >= 99% of probes.
        let mut rng = Stream::seed_from(52);
        let (h, w) = (6usize, 8usize);
        // atol is the f32 forward-evaluation noise floor: one loss eval
        // carries ~1e-7 absolute rounding, so a central difference over
        // 2e-3 cannot resolve gradients below ~1e-4. Above the floor the
        // 1e-2 relative tolerance applies unchanged.
        let cfg = gradcheck::Config {
            probes_per_input: 30,
            atol: 3e-4,
            ..Default::default()
        };
        let mut all = gradcheck::Report::default();

        // Photometric wrt both images.
        let pred = rand_image(&mut rng, 3, h, w);
        let target = rand_image(&mut rng, 3, h, w);
        let r = gradcheck::check(
            &[(vec![3, h, w], pred), (vec![3, h, w], target)],
            |t, l| {
                let pe = photometric_error_t(t, l[0], l[1]).unwrap();
                t.mean(pe)
            },
            &cfg,
            &mut rng,
        );
        assert!(r.pass_fraction() > 0.99, "photometric: {}", r.summary());
        all.merge(&r);

        // Smoothness wrt disparity.
        let disp: Vec<f32> = (0..h * w).map(|_| rng.uniform_in(0.1, 0.9)).collect();
        let img = rand_image(&mut rng, 3, h, w);
        let r = gradcheck::check(
            &[(vec![1, h, w], disp.clone())],
            |t, l| {
                let iv = t.constant(&[3, h, w], img.clone());
                smoothness_t(t, l[0], iv).unwrap()
            },
            &cfg,
            &mut rng,
        );
        assert!(r.pass_fraction() > 0.99, "smoothness: {}", r.summary());
        all.merge(&r);

        // Sky wrt disparity.
        let mut mg = Grid::filled(h, w, 0.0);
        for i in 0..h * w / 2 {
            mg.data[i] = 1.0;
        }
        let mask = SkyMask::new(mg).unwrap();
        let r = gradcheck::check(
            &[(vec![1, h, w], disp.clone())],
            |t, l| sky_regularization_t(t, l[0], &mask).unwrap(),
            &cfg,
            &mut rng,
        );
        assert!(r.pass_fraction() > 0.99, "sky: {}", r.summary());
        all.merge(&r);

        // Supervised affine-invariant wrt prediction.
        let gt: Vec<f32> = (0..h * w).map(|_| rng.uniform_in(0.1, 1.0)).collect();
        let r = gradcheck::check(
            &[(vec![1, h, w], disp)],
            |t, l| {
                let g = t.constant(&[1, h, w], gt.clone());
                supervised_depth_loss_t(t, l[0], g, None).unwrap()
            },
            &cfg,
            &mut rng,
        );
        assert!(r.pass_fraction() > 0.99, "supervised: {}", r.summary());
        all.merge(&r);

        // Fused objective wrt error maps and raw uncertainties.
        let mk = |rng: &mut Stream, lo: f32, hi: f32| -> Vec<f32> {
            (0..h * w).map(|_| rng.uniform_in(lo, hi)).collect()
        };
        let inputs = vec![
            (vec![1, h, w], mk(&mut rng, 0.0, 0.5)),
            (vec![1, h, w], mk(&mut rng, 0.0, 0.5)),
            (vec![1, h, w], mk(&mut rng, 0.0, 0.5)),
            (vec![1, h, w], mk(&mut rng, 0.0, 2.0)),
            (vec![1, h, w], mk(&mut rng, 0.0, 2.0)),
            (vec![1, h, w], mk(&mut rng, 0.0, 2.0)),
            (vec![1, h, w], mk(&mut rng, 0.0, 2.0)),
        ];
        let r = gradcheck::check(
            &inputs,
            |t, l| {
                let out = utsf_loss_t(
                    t,
                    [l[0], l[1]],
                    l[2],
                    [l[3], l[4]],
                    [l[5], l[6]],
                    1e-2,
                    None,
                );
                out.total
            },
            &cfg,
            &mut rng,
        );
        assert!(r.pass_fraction() > 0.99, "utsf: {}", r.summary());
        all.merge(&r);

        assert!(all.pass_fraction() > 0.99, "overall: {}", all.summary());
    }
}
