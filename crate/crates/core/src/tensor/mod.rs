//! Minimal reverse-mode autodiff over `f32` grids.
//!
//! A [`Tape`] is an append-only graph of eagerly evaluated nodes. Operations
//! push a node, compute its value immediately, and return a [`Var`] handle.
//! [`Tape::backward`] walks the nodes in reverse creation order and
//! accumulates gradients into every node that `needs_grad`.
//!
//! Everything is single-threaded and free of hidden state, so a forward and
//! backward pass is a deterministic function of the inputs — the property
//! the training loop's bit-reproducibility rests on.
//!
//! Shapes are small `Vec<usize>`; image-like values use `[C, H, W]`, camera
//! coordinate grids `[2, H, W]` / `[3, H, W]`, scalars `[1]`.

pub(crate) mod kernels;

pub mod gradcheck;

pub use kernels::ConvSpec;

use crate::{Error, Result};

/// Handle to a tape node.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryK {
    Abs,
    Exp,
    Ln,
    Sqrt,
    Sigmoid,
    Softplus,
    Relu,
    Gelu,
    Sin,
    Cos,
    Tanh,
    Recip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinK {
    Add,
    Sub,
    Mul,
    Div,
    Min,
}

/// Pinhole projection parameters used by the `Project` op.
#[derive(Clone, Copy, Debug)]
pub struct PinholeParams {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub z_eps: f32,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary {
        a: Var,
        k: UnaryK,
    },
    /// mul * x + add; only the slope matters to backward.
    AffineConst {
        a: Var,
        mul: f32,
    },
    Clamp {
        a: Var,
        lo: f32,
        hi: f32,
    },
    /// Elementwise, same shape.
    Bin {
        a: Var,
        b: Var,
        k: BinK,
    },
    /// Tensor (any shape) against a scalar node of shape [1].
    BinScalar {
        a: Var,
        s: Var,
        k: BinK,
    },
    /// a: [C,H,W] multiplied by a single-channel map m: [1,H,W].
    MulChan {
        a: Var,
        m: Var,
    },
    /// Per-channel scale and shift: out[c] = a[c]*w[c] + b[c].
    AffineChannels {
        a: Var,
        w: Var,
        b: Var,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    /// [C,H,W] -> [1,H,W] channel mean.
    MeanChannels {
        a: Var,
    },
    /// 3x3 box filter with reflect padding, per channel.
    BoxFilter3 {
        a: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    /// Nearest-neighbor 2x upsample.
    Upsample2 {
        a: Var,
    },
    ConcatC {
        parts: Vec<Var>,
    },
    SliceC {
        a: Var,
        start: usize,
    },
    /// [C,H,W] -> [C] spatial mean.
    GlobalAvgPool {
        a: Var,
    },
    /// Bilinear sampling of img [C,Hs,Ws] at coords [2,H,W] (x, y in pixels).
    GridSample {
        img: Var,
        coords: Var,
    },
    /// out[k,p] = sum_j R[3k+j] * pts[j,p] + t[k].
    TransformPoints {
        pts: Var,
        rot: Var,
        t: Var,
    },
    /// Pinhole projection of [3,H,W] points to [2,H,W] pixel coordinates.
    Project {
        pts: Var,
        cam: PinholeParams,
    },
    /// [3] -> [9] cross-product (skew-symmetric) matrix.
    Skew3 {
        a: Var,
    },
    /// 3x3 matrix product on [9] row-major values.
    MatMul3 {
        a: Var,
        b: Var,
    },
    StopGrad,
    /// Horizontal forward difference: [C,H,W] -> [C,H,W-1].
    DiffX {
        a: Var,
    },
    /// Vertical forward difference: [C,H,W] -> [C,H-1,W].
    DiffY {
        a: Var,
    },
    /// Median over all elements -> [1]. Even counts average the two central
    /// values (lower-interpolated convention, fixed for oracle exactness).
    Median {
        a: Var,
    },
    /// out[k] = a[idx[k]].
    Gather {
        a: Var,
        idx: Vec<usize>,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    needs_grad: bool,
    op: Op,
}

/// Append-only autodiff graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn chw(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() == 3, "expected [C,H,W], got {shape:?}");
    (shape[0], shape[1], shape[2])
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            needs_grad,
            op,
        });
        Var((self.nodes.len() - 1) as u32)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.idx()].needs_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.idx()].shape
    }

    pub fn data(&self, v: Var) -> &[f32] {
        &self.nodes[v.idx()].data
    }

    /// Value of a scalar (shape [1]) node.
    pub fn scalar(&self, v: Var) -> f32 {
        debug_assert_eq!(numel(&self.nodes[v.idx()].shape), 1);
        self.nodes[v.idx()].data[0]
    }

    /// Gradient accumulated into `v` by the latest `backward`, if any.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.idx()].grad.as_deref()
    }

    // ---- leaves ----

    pub fn leaf(&mut self, shape: &[usize], data: Vec<f32>, needs_grad: bool) -> Var {
        assert_eq!(numel(shape), data.len(), "leaf data does not match shape");
        self.push(shape.to_vec(), data, needs_grad, Op::Leaf)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f32>) -> Var {
        self.leaf(shape, data, false)
    }

    pub fn scalar_const(&mut self, value: f32) -> Var {
        self.constant(&[1], vec![value])
    }

    // ---- unary ----

    pub fn unary(&mut self, a: Var, k: UnaryK) -> Var {
        let src = &self.nodes[a.idx()];
        let data: Vec<f32> = src.data.iter().map(|&x| unary_fwd(k, x)).collect();
        let shape = src.shape.clone();
        let ng = self.ng(a);
        self.push(shape, data, ng, Op::Unary { a, k })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Abs)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Exp)
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Ln)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Sqrt)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Sigmoid)
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Softplus)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Relu)
    }
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Gelu)
    }
    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Sin)
    }
    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Cos)
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Tanh)
    }
    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, UnaryK::Recip)
    }

    pub fn scale(&mut self, a: Var, mul: f32) -> Var {
        self.affine_const(a, mul, 0.0)
    }

    pub fn add_const(&mut self, a: Var, add: f32) -> Var {
        self.affine_const(a, 1.0, add)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine_const(a, -1.0, 0.0)
    }

    pub fn affine_const(&mut self, a: Var, mul: f32, add: f32) -> Var {
        let src = &self.nodes[a.idx()];
        let data: Vec<f32> = src.data.iter().map(|&x| mul * x + add).collect();
        let shape = src.shape.clone();
        let ng = self.ng(a);
        self.push(shape, data, ng, Op::AffineConst { a, mul })
    }

    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        let src = &self.nodes[a.idx()];
        let data: Vec<f32> = src.data.iter().map(|&x| x.clamp(lo, hi)).collect();
        let shape = src.shape.clone();
        let ng = self.ng(a);
        self.push(shape, data, ng, Op::Clamp { a, lo, hi })
    }

    pub fn stop_grad(&mut self, a: Var) -> Var {
        let src = &self.nodes[a.idx()];
        let _ = a;
        let (shape, data) = (src.shape.clone(), src.data.clone());
        self.push(shape, data, false, Op::StopGrad)
    }

    // ---- binary ----

    pub fn bin(&mut self, a: Var, b: Var, k: BinK) -> Var {
        assert_eq!(
            self.nodes[a.idx()].shape,
            self.nodes[b.idx()].shape,
            "elementwise op on mismatched shapes"
        );
        let (na, nb) = (&self.nodes[a.idx()], &self.nodes[b.idx()]);
        let data: Vec<f32> = na
            .data
            .iter()
            .zip(nb.data.iter())
            .map(|(&x, &y)| bin_fwd(k, x, y))
            .collect();
        let shape = na.shape.clone();
        let ng = self.ng(a) || self.ng(b);
        self.push(shape, data, ng, Op::Bin { a, b, k })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.bin(a, b, BinK::Add)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.bin(a, b, BinK::Sub)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.bin(a, b, BinK::Mul)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.bin(a, b, BinK::Div)
    }
    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        self.bin(a, b, BinK::Min)
    }

    /// `a` (any shape) combined with scalar node `s` (shape [1]).
    pub fn bin_scalar(&mut self, a: Var, s: Var, k: BinK) -> Var {
        assert_eq!(numel(&self.nodes[s.idx()].shape), 1, "rhs must be scalar");
        let sv = self.nodes[s.idx()].data[0];
        let na = &self.nodes[a.idx()];
        let data: Vec<f32> = na.data.iter().map(|&x| bin_fwd(k, x, sv)).collect();
        let shape = na.shape.clone();
        let ng = self.ng(a) || self.ng(s);
        self.push(shape, data, ng, Op::BinScalar { a, s, k })
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        self.bin_scalar(a, s, BinK::Add)
    }
    pub fn sub_scalar(&mut self, a: Var, s: Var) -> Var {
        self.bin_scalar(a, s, BinK::Sub)
    }
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        self.bin_scalar(a, s, BinK::Mul)
    }
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        self.bin_scalar(a, s, BinK::Div)
    }

    /// Multiply every channel of `a: [C,H,W]` by the map `m: [1,H,W]`.
    pub fn mul_chan(&mut self, a: Var, m: Var) -> Var {
        let (_, h, w) = chw(&self.nodes[a.idx()].shape);
        let (mc, mh, mw) = chw(&self.nodes[m.idx()].shape);
        assert!(mc == 1 && mh == h && mw == w, "mask/map shape mismatch");
        let hw = h * w;
        let na = &self.nodes[a.idx()];
        let nm = &self.nodes[m.idx()];
        let mut data = vec![0.0; na.data.len()];
        for (chunk, out) in na.data.chunks_exact(hw).zip(data.chunks_exact_mut(hw)) {
            for i in 0..hw {
                out[i] = chunk[i] * nm.data[i];
            }
        }
        let shape = na.shape.clone();
        let ng = self.ng(a) || self.ng(m);
        self.push(shape, data, ng, Op::MulChan { a, m })
    }

    /// Per-channel affine: out[c] = a[c]*w[c] + b[c], with w, b of shape [C].
    pub fn affine_channels(&mut self, a: Var, w: Var, b: Var) -> Var {
        let (c, h, wd) = chw(&self.nodes[a.idx()].shape);
        assert_eq!(self.nodes[w.idx()].shape, vec![c]);
        assert_eq!(self.nodes[b.idx()].shape, vec![c]);
        let hw = h * wd;
        let (na, nw, nb) = (
            &self.nodes[a.idx()],
            &self.nodes[w.idx()],
            &self.nodes[b.idx()],
        );
        let mut data = vec![0.0; na.data.len()];
        for ci in 0..c {
            let (scale, shift) = (nw.data[ci], nb.data[ci]);
            for i in 0..hw {
                data[ci * hw + i] = na.data[ci * hw + i] * scale + shift;
            }
        }
        let shape = na.shape.clone();
        let ng = self.ng(a) || self.ng(w) || self.ng(b);
        self.push(shape, data, ng, Op::AffineChannels { a, w, b })
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.nodes[a.idx()].data.iter().map(|&x| x as f64).sum();
        let ng = self.ng(a);
        self.push(vec![1], vec![total as f32], ng, Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.idx()].data.len().max(1);
        let total: f64 = self.nodes[a.idx()].data.iter().map(|&x| x as f64).sum();
        let ng = self.ng(a);
        self.push(
            vec![1],
            vec![(total / n as f64) as f32],
            ng,
            Op::Mean { a },
        )
    }

    pub fn mean_channels(&mut self, a: Var) -> Var {
        let (c, h, w) = chw(&self.nodes[a.idx()].shape);
        let hw = h * w;
        let src = &self.nodes[a.idx()].data;
        let mut data = vec![0.0f32; hw];
        for ci in 0..c {
            for i in 0..hw {
                data[i] += src[ci * hw + i];
            }
        }
        let inv = 1.0 / c as f32;
        for v in data.iter_mut() {
            *v *= inv;
        }
        let ng = self.ng(a);
        self.push(vec![1, h, w], data, ng, Op::MeanChannels { a })
    }

    pub fn global_avg_pool(&mut self, a: Var) -> Var {
        let (c, h, w) = chw(&self.nodes[a.idx()].shape);
        let hw = h * w;
        let src = &self.nodes[a.idx()].data;
        let data: Vec<f32> = (0..c)
            .map(|ci| {
                let s: f64 = src[ci * hw..(ci + 1) * hw].iter().map(|&x| x as f64).sum();
                (s / hw as f64) as f32
            })
            .collect();
        let ng = self.ng(a);
        self.push(vec![c], data, ng, Op::GlobalAvgPool { a })
    }

    pub fn median(&mut self, a: Var) -> Var {
        let src = &self.nodes[a.idx()].data;
        assert!(src.len() >= 1, "median of empty tensor");
        let (m, _, _) = median_with_indices(src);
        let ng = self.ng(a);
        self.push(vec![1], vec![m], ng, Op::Median { a })
    }

    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = &self.nodes[a.idx()].data;
        let data: Vec<f32> = idx.iter().map(|&i| src[i]).collect();
        let n = data.len();
        let ng = self.ng(a);
        self.push(vec![n], data, ng, Op::Gather { a, idx })
    }

    // ---- structure ----

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (_, h, w) = chw(&self.nodes[parts[0].idx()].shape);
        let mut c_total = 0;
        for &p in parts {
            let (pc, ph, pw) = chw(&self.nodes[p.idx()].shape);
            assert!(ph == h && pw == w, "concat spatial mismatch");
            c_total += pc;
        }
        let mut data = Vec::with_capacity(c_total * h * w);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p.idx()].data);
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            vec![c_total, h, w],
            data,
            ng,
            Op::ConcatC {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (c, h, w) = chw(&self.nodes[a.idx()].shape);
        assert!(start + len <= c);
        let hw = h * w;
        let data = self.nodes[a.idx()].data[start * hw..(start + len) * hw].to_vec();
        let ng = self.ng(a);
        self.push(vec![len, h, w], data, ng, Op::SliceC { a, start })
    }

    pub fn upsample2(&mut self, a: Var) -> Var {
        let (c, h, w) = chw(&self.nodes[a.idx()].shape);
        let src = &self.nodes[a.idx()].data;
        let (oh, ow) = (h * 2, w * 2);
        let mut data = vec![0.0f32; c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                let iy = oy / 2;
                let src_row = &src[ci * h * w + iy * w..ci * h * w + (iy + 1) * w];
                let dst_row = &mut data[ci * oh * ow + oy * ow..ci * oh * ow + (oy + 1) * ow];
                for ox in 0..ow {
                    dst_row[ox] = src_row[ox / 2];
                }
            }
        }
        let ng = self.ng(a);
        self.push(vec![c, oh, ow], data, ng, Op::Upsample2 { a })
    }

    pub fn box_filter3(&mut self, a: Var) -> Var {
        let (c, h, w) = chw(&self.nodes[a.idx()].shape);
        let data = kernels::box3_fwd(&self.nodes[a.idx()].data, c, h, w);
        let ng = self.ng(a);
        self.push(vec![c, h, w], data, ng, Op::BoxFilter3 { a })
    }

    pub fn diff_x(&mut self, a: Var) -> Var {
        let (c, h, w) = chw(&self.nodes[a.idx()].shape);
        assert!(w >= 2, "diff_x needs width >= 2");
        let src = &self.nodes[a.idx()].data;
        let ow = w - 1;
        let mut data = vec![0.0f32; c * h * ow];
        for ci in 0..c {
            for y in 0..h {
                let row = &src[ci * h * w + y * w..ci * h * w + (y + 1) * w];
                let out = &mut data[ci * h * ow + y * ow..ci * h * ow + (y + 1) * ow];
                for x in 0..ow {
                    out[x] = row[x + 1] - row[x];
                }
            }
        }
        let ng = self.ng(a);
        self.push(vec![c, h, ow], data, ng, Op::DiffX { a })
    }

    pub fn diff_y(&mut self, a: Var) -> Var {
        let (c, h, w) = chw(&self.nodes[a.idx()].shape);
        assert!(h >= 2, "diff_y needs height >= 2");
        let src = &self.nodes[a.idx()].data;
        let oh = h - 1;
        let mut data = vec![0.0f32; c * oh * w];
        for ci in 0..c {
            for y in 0..oh {
                for x in 0..w {
                    data[ci * oh * w + y * w + x] =
                        src[ci * h * w + (y + 1) * w + x] - src[ci * h * w + y * w + x];
                }
            }
        }
        let ng = self.ng(a);
        self.push(vec![c, oh, w], data, ng, Op::DiffY { a })
    }

    // ---- convolution ----

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Var {
        let (ic, h, wd) = chw(&self.nodes[x.idx()].shape);
        let ws = &self.nodes[w.idx()].shape;
        assert_eq!(ws.len(), 4, "conv weight must be [OC, IC/g, KH, KW]");
        let (oc, icg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(
            icg * spec.groups,
            ic,
            "conv weight in-channels do not match input"
        );
        assert_eq!(oc % spec.groups, 0, "out channels not divisible by groups");
        if let Some(bv) = b {
            assert_eq!(self.nodes[bv.idx()].shape, vec![oc]);
        }
        let (out, oh, ow) = kernels::conv2d_fwd(
            &self.nodes[x.idx()].data,
            ic,
            h,
            wd,
            &self.nodes[w.idx()].data,
            oc,
            kh,
            kw,
            b.map(|bv| self.nodes[bv.idx()].data.as_slice()),
            spec,
        );
        let ng = self.ng(x) || self.ng(w) || b.map(|bv| self.ng(bv)).unwrap_or(false);
        self.push(vec![oc, oh, ow], out, ng, Op::Conv2d { x, w, b, spec })
    }

    // ---- geometry ops ----

    /// Bilinear sampling. Returns the sampled image and a validity map with
    /// 1.0 exactly where all four taps fell inside the source image.
    pub fn grid_sample(&mut self, img: Var, coords: Var) -> (Var, Vec<f32>) {
        let (c, hs, ws) = chw(&self.nodes[img.idx()].shape);
        let (cc, h, w) = chw(&self.nodes[coords.idx()].shape);
        assert_eq!(cc, 2, "coords must be [2,H,W]");
        let (out, valid) = kernels::grid_sample_fwd(
            &self.nodes[img.idx()].data,
            c,
            hs,
            ws,
            &self.nodes[coords.idx()].data,
            h,
            w,
        );
        let ng = self.ng(img) || self.ng(coords);
        let v = self.push(vec![c, h, w], out, ng, Op::GridSample { img, coords });
        (v, valid)
    }

    pub fn transform_points(&mut self, pts: Var, rot: Var, t: Var) -> Var {
        let (c, h, w) = chw(&self.nodes[pts.idx()].shape);
        assert_eq!(c, 3, "points must be [3,H,W]");
        assert_eq!(numel(&self.nodes[rot.idx()].shape), 9);
        assert_eq!(numel(&self.nodes[t.idx()].shape), 3);
        let hw = h * w;
        let p = &self.nodes[pts.idx()].data;
        let r = &self.nodes[rot.idx()].data;
        let tv = &self.nodes[t.idx()].data;
        let mut data = vec![0.0f32; 3 * hw];
        for i in 0..hw {
            let (x, y, z) = (p[i], p[hw + i], p[2 * hw + i]);
            for k in 0..3 {
                data[k * hw + i] =
                    r[3 * k] * x + r[3 * k + 1] * y + r[3 * k + 2] * z + tv[k];
            }
        }
        let ng = self.ng(pts) || self.ng(rot) || self.ng(t);
        self.push(vec![3, h, w], data, ng, Op::TransformPoints { pts, rot, t })
    }

    /// Project camera-frame points to pixel coordinates. Points with
    /// `z <= z_eps` are marked invalid (validity 0) and their coordinates are
    /// pushed far outside the image so downstream sampling rejects them.
    pub fn project(&mut self, pts: Var, cam: PinholeParams) -> (Var, Vec<f32>) {
        let (c, h, w) = chw(&self.nodes[pts.idx()].shape);
        assert_eq!(c, 3, "points must be [3,H,W]");
        let hw = h * w;
        let p = &self.nodes[pts.idx()].data;
        let mut data = vec![0.0f32; 2 * hw];
        let mut valid = vec![0.0f32; hw];
        for i in 0..hw {
            let (x, y, z) = (p[i], p[hw + i], p[2 * hw + i]);
            if z > cam.z_eps {
                data[i] = cam.fx * x / z + cam.cx;
                data[hw + i] = cam.fy * y / z + cam.cy;
                valid[i] = 1.0;
            } else {
                data[i] = -2.0 * w as f32 - 8.0;
                data[hw + i] = -2.0 * h as f32 - 8.0;
            }
        }
        let ng = self.ng(pts);
        let v = self.push(vec![2, h, w], data, ng, Op::Project { pts, cam });
        (v, valid)
    }

    pub fn skew3(&mut self, a: Var) -> Var {
        assert_eq!(numel(&self.nodes[a.idx()].shape), 3);
        let v = &self.nodes[a.idx()].data;
        let (x, y, z) = (v[0], v[1], v[2]);
        let data = vec![0.0, -z, y, z, 0.0, -x, -y, x, 0.0];
        let ng = self.ng(a);
        self.push(vec![9], data, ng, Op::Skew3 { a })
    }

    pub fn matmul3(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(numel(&self.nodes[a.idx()].shape), 9);
        assert_eq!(numel(&self.nodes[b.idx()].shape), 9);
        let (ma, mb) = (&self.nodes[a.idx()].data, &self.nodes[b.idx()].data);
        let mut data = vec![0.0f32; 9];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += ma[3 * i + k] * mb[3 * k + j];
                }
                data[3 * i + j] = acc;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(vec![9], data, ng, Op::MatMul3 { a, b })
    }

    // ---- backward ----

    /// Backpropagate from a scalar node. Gradients of earlier backward calls
    /// on the same tape are cleared first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if numel(&self.nodes[root.idx()].shape) != 1 {
            return Err(Error::InvalidInput(
                "backward root must be a scalar".into(),
            ));
        }
        if !self.nodes[root.idx()].data[0].is_finite() {
            return Err(Error::DegenerateInput(format!(
                "backward root is not finite: {}",
                self.nodes[root.idx()].data[0]
            )));
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[root.idx()].grad = Some(vec![1.0]);
        for idx in (0..=root.idx()).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            self.backprop_node(idx);
        }
        Ok(())
    }

    fn ensure_grad(nodes: &mut [Node], v: Var) {
        let n = &mut nodes[v.idx()];
        if n.needs_grad && n.grad.is_none() {
            n.grad = Some(vec![0.0; n.data.len()]);
        }
    }

    fn backprop_node(&mut self, idx: usize) {
        // Parents always precede children on the tape, so split at `idx`.
        let (parents, rest) = self.nodes.split_at_mut(idx);
        let node = &rest[0];
        let g = node.grad.as_ref().expect("grad present").clone();

        let grad_into = |nodes: &mut [Node], v: Var, f: &mut dyn FnMut(&mut [f32], &[f32])| {
            if !nodes[v.idx()].needs_grad {
                return;
            }
            Tape::ensure_grad(nodes, v);
            // Work on a detached copy of the parent's data to satisfy the
            // borrow checker when the closure also reads it.
            let mut acc = nodes[v.idx()].grad.take().expect("just ensured");
            let data_copy;
            {
                data_copy = nodes[v.idx()].data.clone();
            }
            f(&mut acc, &data_copy);
            nodes[v.idx()].grad = Some(acc);
        };

        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::Unary { a, k } => {
                let k = *k;
                grad_into(parents, *a, &mut |acc, xd| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * unary_dfdx(k, xd[i]);
                    }
                });
            }
            Op::AffineConst { a, mul, .. } => {
                let m = *mul;
                grad_into(parents, *a, &mut |acc, _| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * m;
                    }
                });
            }
            Op::Clamp { a, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                grad_into(parents, *a, &mut |acc, xd| {
                    for i in 0..acc.len() {
                        if xd[i] >= lo && xd[i] <= hi {
                            acc[i] += g[i];
                        }
                    }
                });
            }
            Op::Bin { a, b, k } => {
                let k = *k;
                let (av, bv) = (*a, *b);
                let bd = parents[bv.idx()].data.clone();
                grad_into(parents, av, &mut |acc, ad| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * bin_dfda(k, ad[i], bd[i]);
                    }
                });
                let ad = parents[av.idx()].data.clone();
                grad_into(parents, bv, &mut |acc, bd2| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * bin_dfdb(k, ad[i], bd2[i]);
                    }
                });
            }
            Op::BinScalar { a, s, k } => {
                let k = *k;
                let (av, sv) = (*a, *s);
                let s_val = parents[sv.idx()].data[0];
                grad_into(parents, av, &mut |acc, ad| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * bin_dfda(k, ad[i], s_val);
                    }
                });
                let ad = parents[av.idx()].data.clone();
                grad_into(parents, sv, &mut |acc, _| {
                    let mut total = 0.0f64;
                    for i in 0..ad.len() {
                        total += (g[i] * bin_dfdb(k, ad[i], s_val)) as f64;
                    }
                    acc[0] += total as f32;
                });
            }
            Op::MulChan { a, m } => {
                let (av, mv) = (*a, *m);
                let hw = {
                    let s = &parents[mv.idx()].shape;
                    s[1] * s[2]
                };
                let md = parents[mv.idx()].data.clone();
                grad_into(parents, av, &mut |acc, _| {
                    for (ci, chunk) in acc.chunks_exact_mut(hw).enumerate() {
                        let gs = &g[ci * hw..(ci + 1) * hw];
                        for i in 0..hw {
                            chunk[i] += gs[i] * md[i];
                        }
                    }
                });
                let ad = parents[av.idx()].data.clone();
                grad_into(parents, mv, &mut |acc, _| {
                    let c = ad.len() / hw;
                    for ci in 0..c {
                        for i in 0..hw {
                            acc[i] += g[ci * hw + i] * ad[ci * hw + i];
                        }
                    }
                });
            }
            Op::AffineChannels { a, w, b } => {
                let (av, wv, bv) = (*a, *w, *b);
                let hw = {
                    let s = &parents[av.idx()].shape;
                    s[1] * s[2]
                };
                let wd = parents[wv.idx()].data.clone();
                grad_into(parents, av, &mut |acc, _| {
                    for (ci, chunk) in acc.chunks_exact_mut(hw).enumerate() {
                        let scale = wd[ci];
                        let gs = &g[ci * hw..(ci + 1) * hw];
                        for i in 0..hw {
                            chunk[i] += gs[i] * scale;
                        }
                    }
                });
                let ad = parents[av.idx()].data.clone();
                grad_into(parents, wv, &mut |acc, _| {
                    for ci in 0..acc.len() {
                        let mut total = 0.0f64;
                        for i in 0..hw {
                            total += (g[ci * hw + i] * ad[ci * hw + i]) as f64;
                        }
                        acc[ci] += total as f32;
                    }
                });
                grad_into(parents, bv, &mut |acc, _| {
                    for ci in 0..acc.len() {
                        let mut total = 0.0f64;
                        for i in 0..hw {
                            total += g[ci * hw + i] as f64;
                        }
                        acc[ci] += total as f32;
                    }
                });
            }
            Op::Sum { a } => {
                grad_into(parents, *a, &mut |acc, _| {
                    for v in acc.iter_mut() {
                        *v += g[0];
                    }
                });
            }
            Op::Mean { a } => {
                grad_into(parents, *a, &mut |acc, _| {
                    let s = g[0] / acc.len() as f32;
                    for v in acc.iter_mut() {
                        *v += s;
                    }
                });
            }
            Op::MeanChannels { a } => {
                let av = *a;
                let hw = g.len();
                grad_into(parents, av, &mut |acc, _| {
                    let c = acc.len() / hw;
                    let inv = 1.0 / c as f32;
                    for ci in 0..c {
                        for i in 0..hw {
                            acc[ci * hw + i] += g[i] * inv;
                        }
                    }
                });
            }
            Op::GlobalAvgPool { a } => {
                let av = *a;
                grad_into(parents, av, &mut |acc, _| {
                    let c = g.len();
                    let hw = acc.len() / c;
                    let inv = 1.0 / hw as f32;
                    for ci in 0..c {
                        let gs = g[ci] * inv;
                        for i in 0..hw {
                            acc[ci * hw + i] += gs;
                        }
                    }
                });
            }
            Op::Median { a } => {
                let av = *a;
                let (_, i_lo, i_hi) = median_with_indices(&parents[av.idx()].data);
                grad_into(parents, av, &mut |acc, _| {
                    if i_lo == i_hi {
                        acc[i_lo] += g[0];
                    } else {
                        acc[i_lo] += 0.5 * g[0];
                        acc[i_hi] += 0.5 * g[0];
                    }
                });
            }
            Op::Gather { a, idx } => {
                let av = *a;
                let idx = idx.clone();
                grad_into(parents, av, &mut |acc, _| {
                    for (k, &i) in idx.iter().enumerate() {
                        acc[i] += g[k];
                    }
                });
            }
            Op::ConcatC { parts } => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let len = parents[p.idx()].data.len();
                    grad_into(parents, p, &mut |acc, _| {
                        for i in 0..len {
                            acc[i] += g[offset + i];
                        }
                    });
                    offset += len;
                }
            }
            Op::SliceC { a, start, .. } => {
                let av = *a;
                let hw = {
                    let s = &parents[av.idx()].shape;
                    s[1] * s[2]
                };
                let off = start * hw;
                grad_into(parents, av, &mut |acc, _| {
                    for i in 0..g.len() {
                        acc[off + i] += g[i];
                    }
                });
            }
            Op::Upsample2 { a } => {
                let av = *a;
                let (c, h, w) = chw(&parents[av.idx()].shape);
                let (oh, ow) = (h * 2, w * 2);
                grad_into(parents, av, &mut |acc, _| {
                    for ci in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                acc[ci * h * w + (oy / 2) * w + ox / 2] +=
                                    g[ci * oh * ow + oy * ow + ox];
                            }
                        }
                    }
                });
            }
            Op::BoxFilter3 { a } => {
                let av = *a;
                let (c, h, w) = chw(&parents[av.idx()].shape);
                grad_into(parents, av, &mut |acc, _| {
                    kernels::box3_bwd(&g, c, h, w, acc);
                });
            }
            Op::DiffX { a } => {
                let av = *a;
                let (c, h, w) = chw(&parents[av.idx()].shape);
                let ow = w - 1;
                grad_into(parents, av, &mut |acc, _| {
                    for ci in 0..c {
                        for y in 0..h {
                            for x in 0..ow {
                                let gv = g[ci * h * ow + y * ow + x];
                                acc[ci * h * w + y * w + x + 1] += gv;
                                acc[ci * h * w + y * w + x] -= gv;
                            }
                        }
                    }
                });
            }
            Op::DiffY { a } => {
                let av = *a;
                let (c, h, w) = chw(&parents[av.idx()].shape);
                let oh = h - 1;
                grad_into(parents, av, &mut |acc, _| {
                    for ci in 0..c {
                        for y in 0..oh {
                            for x in 0..w {
                                let gv = g[ci * oh * w + y * w + x];
                                acc[ci * h * w + (y + 1) * w + x] += gv;
                                acc[ci * h * w + y * w + x] -= gv;
                            }
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, spec } => {
                let (xv, wv, bv, spec) = (*x, *w, *b, *spec);
                let (ic, h, wd) = chw(&parents[xv.idx()].shape);
                let ws = parents[wv.idx()].shape.clone();
                let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
                let (oh, ow) = {
                    let s = &node.shape;
                    (s[1], s[2])
                };
                let wdata = parents[wv.idx()].data.clone();
                grad_into(parents, xv, &mut |acc, _| {
                    kernels::conv2d_bwd_input(
                        &g, oc, oh, ow, &wdata, kh, kw, spec, ic, h, wd, acc,
                    );
                });
                let xdata = parents[xv.idx()].data.clone();
                grad_into(parents, wv, &mut |acc, _| {
                    kernels::conv2d_bwd_weight(
                        &g, oc, oh, ow, &xdata, ic, h, wd, kh, kw, spec, acc,
                    );
                });
                if let Some(bvar) = bv {
                    grad_into(parents, bvar, &mut |acc, _| {
                        for ci in 0..oc {
                            let mut total = 0.0f64;
                            for i in 0..oh * ow {
                                total += g[ci * oh * ow + i] as f64;
                            }
                            acc[ci] += total as f32;
                        }
                    });
                }
            }
            Op::GridSample { img, coords } => {
                let (iv, cv) = (*img, *coords);
                let (c, hs, ws) = chw(&parents[iv.idx()].shape);
                let (h, w) = {
                    let s = &node.shape;
                    (s[1], s[2])
                };
                let coords_data = parents[cv.idx()].data.clone();
                grad_into(parents, iv, &mut |acc, _| {
                    kernels::grid_sample_bwd_img(&g, c, hs, ws, &coords_data, h, w, acc);
                });
                let img_data = parents[iv.idx()].data.clone();
                grad_into(parents, cv, &mut |acc, _| {
                    kernels::grid_sample_bwd_coords(
                        &g, &img_data, c, hs, ws, &coords_data, h, w, acc,
                    );
                });
            }
            Op::TransformPoints { pts, rot, t } => {
                let (pv, rv, tv) = (*pts, *rot, *t);
                let (_, h, w) = chw(&parents[pv.idx()].shape);
                let hw = h * w;
                let rdata = parents[rv.idx()].data.clone();
                grad_into(parents, pv, &mut |acc, _| {
                    for i in 0..hw {
                        for j in 0..3 {
                            let mut acc_v = 0.0;
                            for k in 0..3 {
                                acc_v += g[k * hw + i] * rdata[3 * k + j];
                            }
                            acc[j * hw + i] += acc_v;
                        }
                    }
                });
                let pdata = parents[pv.idx()].data.clone();
                grad_into(parents, rv, &mut |acc, _| {
                    for k in 0..3 {
                        for j in 0..3 {
                            let mut total = 0.0f64;
                            for i in 0..hw {
                                total += (g[k * hw + i] * pdata[j * hw + i]) as f64;
                            }
                            acc[3 * k + j] += total as f32;
                        }
                    }
                });
                grad_into(parents, tv, &mut |acc, _| {
                    for k in 0..3 {
                        let mut total = 0.0f64;
                        for i in 0..hw {
                            total += g[k * hw + i] as f64;
                        }
                        acc[k] += total as f32;
                    }
                });
            }
            Op::Project { pts, cam } => {
                let (pv, cam) = (*pts, *cam);
                let (_, h, w) = chw(&parents[pv.idx()].shape);
                let hw = h * w;
                grad_into(parents, pv, &mut |acc, pd| {
                    for i in 0..hw {
                        let z = pd[2 * hw + i];
                        if z > cam.z_eps {
                            let (x, y) = (pd[i], pd[hw + i]);
                            let (gu, gv) = (g[i], g[hw + i]);
                            acc[i] += gu * cam.fx / z;
                            acc[hw + i] += gv * cam.fy / z;
                            acc[2 * hw + i] +=
                                -(gu * cam.fx * x + gv * cam.fy * y) / (z * z);
                        }
                    }
                });
            }
            Op::Skew3 { a } => {
                grad_into(parents, *a, &mut |acc, _| {
                    acc[0] += g[7] - g[5];
                    acc[1] += g[2] - g[6];
                    acc[2] += g[3] - g[1];
                });
            }
            Op::MatMul3 { a, b } => {
                let (av, bv) = (*a, *b);
                let bd = parents[bv.idx()].data.clone();
                grad_into(parents, av, &mut |acc, _| {
                    for i in 0..3 {
                        for k in 0..3 {
                            let mut s = 0.0;
                            for j in 0..3 {
                                s += g[3 * i + j] * bd[3 * k + j];
                            }
                            acc[3 * i + k] += s;
                        }
                    }
                });
                let ad = parents[av.idx()].data.clone();
                grad_into(parents, bv, &mut |acc, _| {
                    for k in 0..3 {
                        for j in 0..3 {
                            let mut s = 0.0;
                            for i in 0..3 {
                                s += ad[3 * i + k] * g[3 * i + j];
                            }
                            acc[3 * k + j] += s;
                        }
                    }
                });
            }
        }
    }
}

fn unary_fwd(k: UnaryK, x: f32) -> f32 {
    match k {
        UnaryK::Abs => x.abs(),
        UnaryK::Exp => x.exp(),
        UnaryK::Ln => x.ln(),
        UnaryK::Sqrt => x.sqrt(),
        UnaryK::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        UnaryK::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        UnaryK::Relu => x.max(0.0),
        UnaryK::Gelu => {
            let u = 0.797_884_6 * (x + 0.044715 * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        }
        UnaryK::Sin => x.sin(),
        UnaryK::Cos => x.cos(),
        UnaryK::Tanh => x.tanh(),
        UnaryK::Recip => 1.0 / x,
    }
}

fn unary_dfdx(k: UnaryK, x: f32) -> f32 {
    match k {
        UnaryK::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryK::Exp => x.exp(),
        UnaryK::Ln => 1.0 / x,
        UnaryK::Sqrt => 0.5 / x.sqrt(),
        UnaryK::Sigmoid => {
            let s = 1.0 / (1.0 + (-x).exp());
            s * (1.0 - s)
        }
        UnaryK::Softplus => 1.0 / (1.0 + (-x).exp()),
        UnaryK::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryK::Gelu => {
            let c = 0.797_884_6;
            let u = c * (x + 0.044715 * x * x * x);
            let t = u.tanh();
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
        }
        UnaryK::Sin => x.cos(),
        UnaryK::Cos => -x.sin(),
        UnaryK::Tanh => {
            let t = x.tanh();
            1.0 - t * t
        }
        UnaryK::Recip => -1.0 / (x * x),
    }
}

fn bin_fwd(k: BinK, a: f32, b: f32) -> f32 {
    match k {
        BinK::Add => a + b,
        BinK::Sub => a - b,
        BinK::Mul => a * b,
        BinK::Div => a / b,
        BinK::Min => {
            if a <= b {
                a
            } else {
                b
            }
        }
    }
}

fn bin_dfda(k: BinK, a: f32, b: f32) -> f32 {
    match k {
        BinK::Add | BinK::Sub => 1.0,
        BinK::Mul => b,
        BinK::Div => 1.0 / b,
        BinK::Min => {
            if a <= b {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn bin_dfdb(k: BinK, a: f32, b: f32) -> f32 {
    match k {
        BinK::Add => 1.0,
        BinK::Sub => -1.0,
        BinK::Mul => a,
        BinK::Div => -a / (b * b),
        BinK::Min => {
            if a <= b {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Median value plus the source indices it was formed from (equal for odd
/// counts). Ties are broken by index order, which keeps backward routing
/// deterministic.
fn median_with_indices(xs: &[f32]) -> (f32, usize, usize) {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap().then(i.cmp(&j)));
    let n = xs.len();
    if n % 2 == 1 {
        let i = order[n / 2];
        (xs[i], i, i)
    } else {
        let (i_lo, i_hi) = (order[n / 2 - 1], order[n / 2]);
        (0.5 * (xs[i_lo] + xs[i_hi]), i_lo, i_hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn eager_forward_values() {
        let mut t = Tape::new();
        let a = t.leaf(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], false);
        let b = t.scale(a, 2.0);
        assert_eq!(t.data(b), &[2.0, 4.0, 6.0, 8.0]);
        let m = t.mean(a);
        assert!((t.scalar(m) - 2.5).abs() < 1e-7);
    }

    #[test]
    fn backward_through_simple_chain() {
        // f = mean((2x + 1)^2), df/dx_i = 4(2x_i + 1)/n
        let mut t = Tape::new();
        let x = t.leaf(&[1, 1, 3], vec![0.5, -1.0, 2.0], true);
        let y = t.affine_const(x, 2.0, 1.0);
        let y2 = t.mul(y, y);
        let f = t.mean(y2);
        t.backward(f).unwrap();
        let g = t.grad(x).unwrap();
        for (i, &xv) in [0.5f32, -1.0, 2.0].iter().enumerate() {
            let expect = 4.0 * (2.0 * xv + 1.0) / 3.0;
            assert!((g[i] - expect).abs() < 1e-6, "i={i} got={} want={expect}", g[i]);
        }
    }

    #[test]
    fn needs_grad_propagates_and_gates() {
        let mut t = Tape::new();
        let x = t.leaf(&[1], vec![2.0], true);
        let c = t.constant(&[1], vec![3.0]);
        let y = t.mul(x, c);
        let z = t.stop_grad(y);
        let f = t.mul(z, c);
        assert!(!t.nodes[f.idx()].needs_grad);
        let f2 = t.mul(y, c);
        t.backward(f2).unwrap();
        assert!(t.grad(x).is_some());
        assert!(t.grad(c).is_none());
    }

    #[test]
    fn median_matches_convention() {
        let mut t = Tape::new();
        let a = t.leaf(&[4], vec![1.0, 2.0, 3.0, 10.0], true);
        let m = t.median(a);
        assert!((t.scalar(m) - 2.5).abs() < 1e-7);
        t.backward(m).unwrap();
        let g = t.grad(a).unwrap();
        assert_eq!(g, &[0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn min_elem_routes_gradient_to_smaller_side() {
        let mut t = Tape::new();
        let a = t.leaf(&[2], vec![1.0, 5.0], true);
        let b = t.leaf(&[2], vec![3.0, 2.0], true);
        let m = t.min_elem(a, b);
        let s = t.sum(m);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[1.0, 0.0]);
        assert_eq!(t.grad(b).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn concat_and_slice_roundtrip_gradients() {
        let mut t = Tape::new();
        let a = t.leaf(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], true);
        let b = t.leaf(&[2, 2, 2], vec![0.0; 8], true);
        let cat = t.concat_channels(&[a, b]);
        let sl = t.slice_channels(cat, 0, 1);
        let s = t.sum(sl);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[1.0; 4]);
        assert_eq!(t.grad(b).unwrap(), &[0.0; 8]);
    }

    #[test]
    fn softplus_is_nonnegative_and_stable() {
        let mut t = Tape::new();
        let x = t.leaf(&[4], vec![-50.0, -1.0, 1.0, 50.0], false);
        let y = t.softplus(x);
        let d = t.data(y);
        assert!(d.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!((d[3] - 50.0).abs() < 1e-4);
    }

    #[test]
    fn conv2d_grads_match_finite_differences() {
        let mut rng = Stream::seed_from(21);
        let specs = [
            (ConvSpec::same(3), 2usize, 4usize, 3, 3),
            (
                ConvSpec {
                    stride: 2,
                    pad: 1,
                    dilation: 1,
                    groups: 1,
                },
                3,
                4,
                3,
                3,
            ),
            (
                ConvSpec {
                    stride: 1,
                    pad: 2,
                    dilation: 2,
                    groups: 1,
                },
                2,
                2,
                3,
                3,
            ),
            (
                ConvSpec {
                    stride: 1,
                    pad: 2,
                    dilation: 1,
                    groups: 4,
                },
                4,
                4,
                5,
                5,
            ),
        ];
        for (spec, ic, oc, kh, kw) in specs {
            let (h, w) = (6usize, 7usize);
            let x: Vec<f32> = (0..ic * h * w).map(|_| rng.normal() * 0.5).collect();
            let wt: Vec<f32> = (0..oc * (ic / spec.groups) * kh * kw)
                .map(|_| rng.normal() * 0.3)
                .collect();
            let b: Vec<f32> = (0..oc).map(|_| rng.normal() * 0.1).collect();
            let report = gradcheck::check(
                &[
                    (vec![ic, h, w], x),
                    (vec![oc, ic / spec.groups, kh, kw], wt),
                    (vec![oc], b),
                ],
                |t, leaves| {
                    let y = t.conv2d(leaves[0], leaves[1], Some(leaves[2]), spec);
                    let y2 = t.mul(y, y);
                    t.mean(y2)
                },
                // Step and atol sit above the f32 noise floor of the
                // probe loss; the ops here are smooth so the larger step
                // costs no truncation accuracy at this tolerance.
                &gradcheck::Config {
                    step: 5e-3,
                    atol: 5e-5,
                    ..Default::default()
                },
                &mut rng,
            );
            assert!(
                report.pass_fraction() > 0.99,
                "spec {spec:?}: {}",
                report.summary()
            );
        }
    }

    #[test]
    fn structural_op_grads_match_finite_differences() {
        let mut rng = Stream::seed_from(22);
        let x: Vec<f32> = (0..2 * 5 * 6).map(|_| rng.normal()).collect();
        let report = gradcheck::check(
            &[(vec![2, 5, 6], x)],
            |t, leaves| {
                let up = t.upsample2(leaves[0]);
                let bf = t.box_filter3(up);
                let dx = t.diff_x(bf);
                let dy = t.diff_y(bf);
                let sx = t.mean(dx);
                let sy = t.mean(dy);
                let m = t.mean_channels(bf);
                let sm = t.mean(m);
                let gap = t.global_avg_pool(bf);
                let sg = t.mean(gap);
                let a = t.add(sx, sy);
                let b = t.add(sm, sg);
                let ab = t.mul(a, b);
                let abs = t.abs(ab);
                t.sum(abs)
            },
            &gradcheck::Config {
                probes_per_input: 40,
                ..Default::default()
            },
            &mut rng,
        );
        assert!(report.pass_fraction() > 0.99, "{}", report.summary());
    }

    #[test]
    fn grid_sample_grads_match_finite_differences() {
        let mut rng = Stream::seed_from(23);
        // Smooth image, generic fractional coordinates (away from integer
        // lattice kinks of the bilinear kernel).
        let (hs, ws) = (7usize, 8usize);
        let img: Vec<f32> = (0..2 * hs * ws)
            .map(|i| {
                let x = (i % ws) as f32;
                let y = ((i / ws) % hs) as f32;
                (0.3 * x + 0.1 * y).sin() * 0.5 + 0.5
            })
            .collect();
        let (h, w) = (4usize, 5usize);
        // Keep fractional parts away from 0/1 so the finite-difference
        // step never crosses a bilinear lattice kink.
        let mut coords = vec![0.0f32; 2 * h * w];
        for i in 0..h * w {
            coords[i] = rng.below(ws - 2) as f32 + rng.uniform_in(0.15, 0.85);
            coords[h * w + i] = rng.below(hs - 2) as f32 + rng.uniform_in(0.15, 0.85);
        }
        let report = gradcheck::check(
            &[(vec![2, hs, ws], img), (vec![2, h, w], coords)],
            |t, leaves| {
                let (out, _) = t.grid_sample(leaves[0], leaves[1]);
                let sq = t.mul(out, out);
                t.mean(sq)
            },
            &gradcheck::Config {
                probes_per_input: 48,
                step: 5e-3,
                atol: 5e-5,
                ..Default::default()
            },
            &mut rng,
        );
        assert!(report.pass_fraction() > 0.99, "{}", report.summary());
    }

    #[test]
    fn camera_chain_grads_match_finite_differences() {
        let mut rng = Stream::seed_from(24);
        let (h, w) = (5usize, 6usize);
        let hw = h * w;
        let pts: Vec<f32> = (0..3 * hw)
            .map(|i| {
                if i < 2 * hw {
                    rng.uniform_in(-0.5, 0.5)
                } else {
                    rng.uniform_in(2.0, 4.0)
                }
            })
            .collect();
        let rot_v: Vec<f32> = (0..3).map(|_| rng.uniform_in(-0.05, 0.05)).collect();
        let t_v: Vec<f32> = (0..3).map(|_| rng.uniform_in(-0.2, 0.2)).collect();
        let cam = PinholeParams {
            fx: 10.0,
            fy: 11.0,
            cx: 2.5,
            cy: 2.0,
            z_eps: 1e-6,
        };
        let report = gradcheck::check(
            &[
                (vec![3, h, w], pts),
                (vec![3], rot_v),
                (vec![3], t_v),
            ],
            |t, leaves| {
                // Rodrigues from primitives, then transform + project.
                let v = leaves[0];
                let axis = leaves[1];
                let trans = leaves[2];
                let a2 = t.mul(axis, axis);
                let theta2 = t.sum(a2);
                let theta2e = t.add_const(theta2, 1e-18);
                let theta = t.sqrt(theta2e);
                let s = t.sin(theta);
                let a = t.div(s, theta);
                let half = t.scale(theta, 0.5);
                let sh = t.sin(half);
                let ratio = t.div(sh, theta);
                let r2 = t.mul(ratio, ratio);
                let b = t.scale(r2, 2.0);
                let k = t.skew3(axis);
                let k2 = t.matmul3(k, k);
                let eye = t.constant(&[9], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
                let ak = t.mul_scalar(k, a);
                let bk2 = t.mul_scalar(k2, b);
                let r_part = t.add(eye, ak);
                let rot = t.add(r_part, bk2);
                let moved = t.transform_points(v, rot, trans);
                let (coords, _) = t.project(moved, cam);
                let sq = t.mul(coords, coords);
                t.mean(sq)
            },
            &gradcheck::Config {
                probes_per_input: 36,
                step: 5e-3,
                atol: 5e-5,
                ..Default::default()
            },
            &mut rng,
        );
        assert!(report.pass_fraction() > 0.99, "{}", report.summary());
    }

    #[test]
    fn elementwise_grads_match_finite_differences() {
        let mut rng = Stream::seed_from(5);
        let kinds = [
            UnaryK::Abs,
            UnaryK::Exp,
            UnaryK::Sqrt,
            UnaryK::Sigmoid,
            UnaryK::Softplus,
            UnaryK::Gelu,
            UnaryK::Sin,
            UnaryK::Cos,
            UnaryK::Tanh,
            UnaryK::Recip,
            UnaryK::Ln,
        ];
        for k in kinds {
            let xs: Vec<f32> = (0..6).map(|_| rng.uniform_in(0.3, 1.5)).collect();
            let report = gradcheck::check(
                &[(vec![1, 2, 3], xs)],
                |t, leaves| {
                    let y = t.unary(leaves[0], k);
                    t.mean(y)
                },
                &gradcheck::Config::default(),
                &mut rng,
            );
            assert!(
                report.pass_fraction() > 0.99,
                "{k:?}: {}",
                report.summary()
            );
        }
    }
}
