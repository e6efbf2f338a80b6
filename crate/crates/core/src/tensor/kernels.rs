//! Dense array kernels behind the tape ops: direct convolution, bilinear
//! grid sampling, and the 3x3 reflect-padded box filter.
//!
//! Loops are arranged so the innermost dimension walks contiguous memory;
//! everything is single-threaded and accumulation order is fixed, keeping
//! results bit-reproducible.

/// Convolution hyper-parameters. Weight layout is `[OC, IC/groups, KH, KW]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn unit() -> Self {
        ConvSpec {
            stride: 1,
            pad: 0,
            dilation: 1,
            groups: 1,
        }
    }

    pub fn same(k: usize) -> Self {
        ConvSpec {
            stride: 1,
            pad: (k - 1) / 2,
            dilation: 1,
            groups: 1,
        }
    }

    pub fn out_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.dilation * (kh - 1) - 1) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.dilation * (kw - 1) - 1) / self.stride + 1;
        (oh, ow)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd(
    x: &[f32],
    ic: usize,
    h: usize,
    w: usize,
    wt: &[f32],
    oc: usize,
    kh: usize,
    kw: usize,
    bias: Option<&[f32]>,
    spec: ConvSpec,
) -> (Vec<f32>, usize, usize) {
    let (oh, ow) = spec.out_size(h, w, kh, kw);
    let icg = ic / spec.groups;
    let ocg = oc / spec.groups;
    let mut out = vec![0.0f32; oc * oh * ow];

    for o in 0..oc {
        let group = o / ocg;
        let out_ch = &mut out[o * oh * ow..(o + 1) * oh * ow];
        if let Some(b) = bias {
            out_ch.fill(b[o]);
        }
        for icl in 0..icg {
            let in_ch = group * icg + icl;
            let x_ch = &x[in_ch * h * w..(in_ch + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wt[((o * icg + icl) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * spec.stride + ky * spec.dilation) as isize
                            - spec.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = &x_ch[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut out_ch[oy * ow..(oy + 1) * ow];
                        let x_off = kx as isize * spec.dilation as isize - spec.pad as isize;
                        if spec.stride == 1 {
                            // Contiguous span of valid output columns; can
                            // be empty when padding exceeds the row width.
                            let ox_lo = (-x_off).max(0) as usize;
                            let ox_hi =
                                ((w as isize - x_off).min(ow as isize)).max(0) as usize;
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            let src =
                                &x_row[(ox_lo as isize + x_off) as usize..(ox_hi as isize + x_off) as usize];
                            let dst = &mut out_row[ox_lo..ox_hi];
                            for (d, s) in dst.iter_mut().zip(src.iter()) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in 0..ow {
                                let ix = ox as isize * spec.stride as isize + x_off;
                                if ix >= 0 && (ix as usize) < w {
                                    out_row[ox] += wv * x_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd_input(
    gout: &[f32],
    oc: usize,
    oh: usize,
    ow: usize,
    wt: &[f32],
    kh: usize,
    kw: usize,
    spec: ConvSpec,
    ic: usize,
    h: usize,
    w: usize,
    gx: &mut [f32],
) {
    let icg = ic / spec.groups;
    let ocg = oc / spec.groups;
    for o in 0..oc {
        let group = o / ocg;
        let g_ch = &gout[o * oh * ow..(o + 1) * oh * ow];
        for icl in 0..icg {
            let in_ch = group * icg + icl;
            let gx_ch = &mut gx[in_ch * h * w..(in_ch + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wt[((o * icg + icl) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * spec.stride + ky * spec.dilation) as isize
                            - spec.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let g_row = &g_ch[oy * ow..(oy + 1) * ow];
                        let gx_row =
                            &mut gx_ch[iy as usize * w..(iy as usize + 1) * w];
                        let x_off = kx as isize * spec.dilation as isize - spec.pad as isize;
                        for ox in 0..ow {
                            let ix = ox as isize * spec.stride as isize + x_off;
                            if ix >= 0 && (ix as usize) < w {
                                gx_row[ix as usize] += wv * g_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd_weight(
    gout: &[f32],
    oc: usize,
    oh: usize,
    ow: usize,
    x: &[f32],
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: ConvSpec,
    gw: &mut [f32],
) {
    let icg = ic / spec.groups;
    let ocg = oc / spec.groups;
    for o in 0..oc {
        let group = o / ocg;
        let g_ch = &gout[o * oh * ow..(o + 1) * oh * ow];
        for icl in 0..icg {
            let in_ch = group * icg + icl;
            let x_ch = &x[in_ch * h * w..(in_ch + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = 0.0f64;
                    let x_off = kx as isize * spec.dilation as isize - spec.pad as isize;
                    for oy in 0..oh {
                        let iy = (oy * spec.stride + ky * spec.dilation) as isize
                            - spec.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let g_row = &g_ch[oy * ow..(oy + 1) * ow];
                        let x_row = &x_ch[iy as usize * w..(iy as usize + 1) * w];
                        if spec.stride == 1 {
                            let ox_lo = (-x_off).max(0) as usize;
                            let ox_hi =
                                ((w as isize - x_off).min(ow as isize)).max(0) as usize;
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            let mut acc_row = 0.0f32;
                            let src = &x_row
                                [(ox_lo as isize + x_off) as usize..(ox_hi as isize + x_off) as usize];
                            for (gv, xv) in g_row[ox_lo..ox_hi].iter().zip(src.iter()) {
                                acc_row += gv * xv;
                            }
                            acc += acc_row as f64;
                        } else {
                            let mut acc_row = 0.0f32;
                            for ox in 0..ow {
                                let ix = ox as isize * spec.stride as isize + x_off;
                                if ix >= 0 && (ix as usize) < w {
                                    acc_row += g_row[ox] * x_row[ix as usize];
                                }
                            }
                            acc += acc_row as f64;
                        }
                    }
                    gw[((o * icg + icl) * kh + ky) * kw + kx] += acc as f32;
                }
            }
        }
    }
}

/// Bilinear sampling with zero padding. `coords` holds x then y planes in
/// pixel units. Validity is 1 only where all four taps are in bounds; there
/// is no border clamping so out-of-bounds taps contribute neither value nor
/// gradient.
pub fn grid_sample_fwd(
    img: &[f32],
    c: usize,
    hs: usize,
    ws: usize,
    coords: &[f32],
    h: usize,
    w: usize,
) -> (Vec<f32>, Vec<f32>) {
    let hw = h * w;
    let mut out = vec![0.0f32; c * hw];
    let mut valid = vec![0.0f32; hw];
    for i in 0..hw {
        let x = coords[i];
        let y = coords[hw + i];
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0i, y0i) = (x0 as isize, y0 as isize);
        let inb = |xx: isize, yy: isize| xx >= 0 && yy >= 0 && xx < ws as isize && yy < hs as isize;
        let all_in = inb(x0i, y0i) && inb(x0i + 1, y0i) && inb(x0i, y0i + 1) && inb(x0i + 1, y0i + 1);
        if all_in {
            valid[i] = 1.0;
        }
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        for (dx, dy, wv) in [
            (0isize, 0isize, w00),
            (1, 0, w10),
            (0, 1, w01),
            (1, 1, w11),
        ] {
            let (xx, yy) = (x0i + dx, y0i + dy);
            if inb(xx, yy) && wv != 0.0 {
                let base = yy as usize * ws + xx as usize;
                for ci in 0..c {
                    out[ci * hw + i] += wv * img[ci * hs * ws + base];
                }
            }
        }
    }
    (out, valid)
}

#[allow(clippy::too_many_arguments)]
pub fn grid_sample_bwd_img(
    gout: &[f32],
    c: usize,
    hs: usize,
    ws: usize,
    coords: &[f32],
    h: usize,
    w: usize,
    gimg: &mut [f32],
) {
    let hw = h * w;
    for i in 0..hw {
        let x = coords[i];
        let y = coords[hw + i];
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0i, y0i) = (x0 as isize, y0 as isize);
        let inb = |xx: isize, yy: isize| xx >= 0 && yy >= 0 && xx < ws as isize && yy < hs as isize;
        for (dx, dy, wv) in [
            (0isize, 0isize, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let (xx, yy) = (x0i + dx, y0i + dy);
            if inb(xx, yy) && wv != 0.0 {
                let base = yy as usize * ws + xx as usize;
                for ci in 0..c {
                    gimg[ci * hs * ws + base] += wv * gout[ci * hw + i];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn grid_sample_bwd_coords(
    gout: &[f32],
    img: &[f32],
    c: usize,
    hs: usize,
    ws: usize,
    coords: &[f32],
    h: usize,
    w: usize,
    gcoords: &mut [f32],
) {
    let hw = h * w;
    for i in 0..hw {
        let x = coords[i];
        let y = coords[hw + i];
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0i, y0i) = (x0 as isize, y0 as isize);
        let inb = |xx: isize, yy: isize| xx >= 0 && yy >= 0 && xx < ws as isize && yy < hs as isize;
        let tap = |xx: isize, yy: isize, ci: usize| -> f32 {
            if inb(xx, yy) {
                img[ci * hs * ws + yy as usize * ws + xx as usize]
            } else {
                0.0
            }
        };
        let mut gx = 0.0f32;
        let mut gy = 0.0f32;
        for ci in 0..c {
            let g = gout[ci * hw + i];
            if g == 0.0 {
                continue;
            }
            let v00 = tap(x0i, y0i, ci);
            let v10 = tap(x0i + 1, y0i, ci);
            let v01 = tap(x0i, y0i + 1, ci);
            let v11 = tap(x0i + 1, y0i + 1, ci);
            // d(out)/dx and d(out)/dy of bilinear interpolation.
            gx += g * ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01));
            gy += g * ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10));
        }
        gcoords[i] += gx;
        gcoords[hw + i] += gy;
    }
}

fn reflect(i: isize, n: usize) -> usize {
    // Reflect-101 (edge value not repeated); falls back to clamping for
    // degenerate 1-wide extents.
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

pub fn box3_fwd(x: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; c * h * w];
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for xi in 0..w {
                let mut acc = 0.0f32;
                for dy in -1isize..=1 {
                    let yy = reflect(y as isize + dy, h);
                    for dx in -1isize..=1 {
                        let xx = reflect(xi as isize + dx, w);
                        acc += src[yy * w + xx];
                    }
                }
                dst[y * w + xi] = acc / 9.0;
            }
        }
    }
    out
}

pub fn box3_bwd(gout: &[f32], c: usize, h: usize, w: usize, gx: &mut [f32]) {
    for ci in 0..c {
        let g = &gout[ci * h * w..(ci + 1) * h * w];
        let dst = &mut gx[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for xi in 0..w {
                let gv = g[y * w + xi] / 9.0;
                for dy in -1isize..=1 {
                    let yy = reflect(y as isize + dy, h);
                    for dx in -1isize..=1 {
                        let xx = reflect(xi as isize + dx, w);
                        dst[yy * w + xx] += gv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel_preserves_input() {
        let x: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let wt = vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let (out, oh, ow) = conv2d_fwd(&x, 1, 4, 4, &wt, 1, 3, 3, None, ConvSpec::same(3));
        assert_eq!((oh, ow), (4, 4));
        assert_eq!(out, x);
    }

    #[test]
    fn conv_stride_two_halves_output() {
        let x = vec![1.0f32; 3 * 8 * 8];
        let wt = vec![1.0f32; 4 * 3 * 3 * 3];
        let spec = ConvSpec {
            stride: 2,
            pad: 1,
            dilation: 1,
            groups: 1,
        };
        let (_, oh, ow) = conv2d_fwd(&x, 3, 8, 8, &wt, 4, 3, 3, None, spec);
        assert_eq!((oh, ow), (4, 4));
    }

    #[test]
    fn depthwise_groups_stay_separate() {
        // Two channels, depthwise 1x1 kernel with distinct scales.
        let x = vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
        let wt = vec![3.0, 5.0];
        let spec = ConvSpec {
            stride: 1,
            pad: 0,
            dilation: 1,
            groups: 2,
        };
        let (out, _, _) = conv2d_fwd(&x, 2, 2, 2, &wt, 2, 1, 1, None, spec);
        assert_eq!(&out[..4], &[3.0; 4]);
        assert_eq!(&out[4..], &[10.0; 4]);
    }

    #[test]
    fn dilation_reaches_farther() {
        // 1x3 dilated kernel (d=2) on a 1x5 row picks every other sample.
        let x = vec![1.0, 10.0, 100.0, 1000.0, 10000.0];
        let wt = vec![1.0, 1.0, 1.0];
        let spec = ConvSpec {
            stride: 1,
            pad: 0,
            dilation: 2,
            groups: 1,
        };
        let (out, oh, ow) = conv2d_fwd(&x, 1, 1, 5, &wt, 1, 1, 3, None, spec);
        assert_eq!((oh, ow), (1, 1));
        assert_eq!(out[0], 10101.0);
    }

    #[test]
    fn grid_sample_identity_reproduces_interior() {
        let img: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let mut coords = vec![0.0f32; 2 * 12];
        for y in 0..3 {
            for x in 0..4 {
                coords[y * 4 + x] = x as f32;
                coords[12 + y * 4 + x] = y as f32;
            }
        }
        let (out, valid) = grid_sample_fwd(&img, 1, 3, 4, &coords, 3, 4);
        for i in 0..12 {
            assert!((out[i] - img[i]).abs() < 1e-6);
        }
        // Interior pixels (not on the last row/column) have all 4 taps inside.
        assert_eq!(valid[0], 1.0);
        assert_eq!(valid[5], 1.0);
        assert_eq!(valid[3], 0.0); // x = 3 needs tap at x = 4
        assert_eq!(valid[8], 0.0); // y = 2 needs tap at y = 3
    }

    #[test]
    fn grid_sample_outside_is_invalid_and_zero() {
        let img = vec![1.0f32; 4];
        let coords = vec![-5.0, 7.0, -5.0, 7.0];
        let (out, valid) = grid_sample_fwd(&img, 1, 2, 2, &coords, 1, 2);
        assert_eq!(out, vec![0.0, 0.0]);
        assert_eq!(valid, vec![0.0, 0.0]);
    }

    #[test]
    fn box3_on_constant_is_identity() {
        let x = vec![0.7f32; 2 * 5 * 6];
        let out = box3_fwd(&x, 2, 5, 6);
        for v in out {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }
}
