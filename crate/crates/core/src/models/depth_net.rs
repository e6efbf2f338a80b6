//! Depth network: a four-stage attention-CNN encoder with an extra
//! half-resolution stem head, and a decoder that fuses coarse features
//! upward into a single full-resolution sigmoid disparity map.

use super::layers::{Conv2d, LkaBlock, Norm};
use super::{Binding, NetworkConfig, ParamStore};
use crate::rng::Stream;
use crate::tensor::{Tape, Var};
use crate::{Error, Result};

/// Encoder features at 1/2, 1/4, 1/8, 1/16 and 1/32 resolution.
pub struct FeaturePyramid {
    pub levels: [Var; 5],
}

impl FeaturePyramid {
    /// Validate the strict halving contract against the input size.
    pub fn check_sizes(&self, t: &Tape, input: (usize, usize)) -> Result<()> {
        let (h, w) = input;
        for (i, &v) in self.levels.iter().enumerate() {
            let f = 1 << (i + 1);
            let s = t.shape(v);
            if s[1] != h / f || s[2] != w / f {
                return Err(Error::ShapeMismatch(format!(
                    "pyramid level {i}: {}x{} != {}x{}",
                    s[1],
                    s[2],
                    h / f,
                    w / f
                )));
            }
        }
        Ok(())
    }
}

struct Stage {
    embed: Conv2d,
    embed_norm: Norm,
    blocks: Vec<LkaBlock>,
}

struct FuseLevel {
    conv: Conv2d,
    norm: Norm,
}

/// Depth estimation network.
pub struct DepthNet {
    pub cfg: NetworkConfig,
    stem_half: Conv2d,
    stem_half_norm: Norm,
    stages: Vec<Stage>,
    fuse: Vec<FuseLevel>,
    head_conv: Conv2d,
    out_conv: Conv2d,
}

impl DepthNet {
    pub fn new(ps: &mut ParamStore, rng: &mut Stream, cfg: &NetworkConfig) -> Result<DepthNet> {
        cfg.validate()?;
        let w = cfg.stage_widths;
        let stem_half = Conv2d::down(ps, rng, "depth.stem_half", 3, w[0], 3, 2);
        let stem_half_norm = Norm::new(ps, "depth.stem_half.n", w[0]);

        let mut stages = Vec::new();
        for s in 0..4 {
            let (in_ch, k, stride) = if s == 0 {
                (3, 7, 4)
            } else {
                (w[s - 1], 3, 2)
            };
            let embed = Conv2d::down(ps, rng, &format!("depth.s{s}.embed"), in_ch, w[s], k, stride);
            let embed_norm = Norm::new(ps, &format!("depth.s{s}.embed.n"), w[s]);
            let blocks = (0..cfg.stage_depths[s])
                .map(|b| LkaBlock::new(ps, rng, &format!("depth.s{s}.b{b}"), w[s], cfg))
                .collect();
            stages.push(Stage {
                embed,
                embed_norm,
                blocks,
            });
        }

        // Decoder: level widths (coarse to fine) w3 -> w2 -> w1 -> w0 -> w0,
        // each fusing the upsampled coarser state with the skip feature.
        let level_widths = [w[0], w[0], w[1], w[2], w[3]];
        let mut fuse = Vec::new();
        for i in (0..4).rev() {
            let in_ch = level_widths[i + 1] + level_widths[i];
            let out_ch = level_widths[i];
            let conv = Conv2d::same(ps, rng, &format!("depth.dec{i}"), in_ch, out_ch, 3);
            let norm = Norm::new(ps, &format!("depth.dec{i}.n"), out_ch);
            fuse.push(FuseLevel { conv, norm });
        }
        let head_conv = Conv2d::same(ps, rng, "depth.head", w[0], w[0], 3);
        let out_conv = Conv2d::same(ps, rng, "depth.out", w[0], 1, 3);
        // Bias the sigmoid below its midpoint so initial depths sit inside
        // the scene's working range under a scene-matched disparity
        // convention; warps then land inside the source images from the
        // first step instead of starting fully out of view.
        if let Some(b) = out_conv.b {
            ps.get_mut(b).data.fill(-1.0);
        }

        Ok(DepthNet {
            cfg: cfg.clone(),
            stem_half,
            stem_half_norm,
            stages,
            fuse,
            head_conv,
            out_conv,
        })
    }

    /// Multi-scale features. The half-resolution stem is an extra head on
    /// the image; the four main stages consume the image independently of
    /// it.
    pub fn encode(
        &self,
        t: &mut Tape,
        ps: &ParamStore,
        bind: &mut Binding,
        image: Var,
    ) -> Result<FeaturePyramid> {
        let (h, w) = (t.shape(image)[1], t.shape(image)[2]);
        if (h, w) != self.cfg.input_size {
            return Err(Error::ShapeMismatch(format!(
                "input {h}x{w} does not match configured {:?}",
                self.cfg.input_size
            )));
        }
        let sh = self.stem_half.apply(t, ps, bind, image);
        let sh = self.stem_half_norm.apply(t, ps, bind, sh);
        let half = t.gelu(sh);

        let mut feats = Vec::with_capacity(4);
        let mut x = image;
        for stage in &self.stages {
            let e = stage.embed.apply(t, ps, bind, x);
            let mut y = stage.embed_norm.apply(t, ps, bind, e);
            for block in &stage.blocks {
                y = block.apply(t, ps, bind, y);
            }
            feats.push(y);
            x = y;
        }
        let pyr = FeaturePyramid {
            levels: [half, feats[0], feats[1], feats[2], feats[3]],
        };
        pyr.check_sizes(t, self.cfg.input_size)?;
        Ok(pyr)
    }

    /// Upward fusion of the pyramid into a full-resolution disparity map in
    /// (0, 1).
    pub fn decode(
        &self,
        t: &mut Tape,
        ps: &ParamStore,
        bind: &mut Binding,
        pyr: &FeaturePyramid,
    ) -> Var {
        let mut d = pyr.levels[4];
        for (step, level) in (0..4).rev().enumerate() {
            let up = t.upsample2(d);
            let cat = t.concat_channels(&[up, pyr.levels[level]]);
            let f = self.fuse[step].conv.apply(t, ps, bind, cat);
            let n = self.fuse[step].norm.apply(t, ps, bind, f);
            d = t.gelu(n);
        }
        let full = t.upsample2(d);
        let h = self.head_conv.apply(t, ps, bind, full);
        let hg = t.gelu(h);
        let o = self.out_conv.apply(t, ps, bind, hg);
        t.sigmoid(o)
    }

    /// Image `[3,H,W]` to disparity `[1,H,W]`.
    pub fn forward(
        &self,
        t: &mut Tape,
        ps: &ParamStore,
        bind: &mut Binding,
        image: Var,
    ) -> Result<Var> {
        let pyr = self.encode(t, ps, bind, image)?;
        Ok(self.decode(t, ps, bind, &pyr))
    }
}
