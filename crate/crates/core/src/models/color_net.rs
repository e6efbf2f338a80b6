//! Color network: predicts an RGB image from a disparity map. One trained
//! weight set captures one target domain's color statistics, so separate
//! instances are kept per real dataset.

use super::layers::{Conv2d, LkaBlock, Norm};
use super::{Binding, NetworkConfig, ParamStore};
use crate::rng::Stream;
use crate::tensor::{Tape, Var};
use crate::{Error, Result};

pub struct ColorNet {
    enc1: Conv2d,
    enc1_norm: Norm,
    block1: LkaBlock,
    enc2: Conv2d,
    enc2_norm: Norm,
    block2: LkaBlock,
    dec1: Conv2d,
    dec1_norm: Norm,
    dec0: Conv2d,
    out: Conv2d,
}

impl ColorNet {
    pub fn new(ps: &mut ParamStore, rng: &mut Stream, cfg: &NetworkConfig) -> Result<ColorNet> {
        cfg.validate()?;
        let w1 = cfg.stage_widths[0];
        let w2 = cfg.stage_widths[1];
        Ok(ColorNet {
            enc1: Conv2d::down(ps, rng, "color.enc1", 1, w1, 3, 2),
            enc1_norm: Norm::new(ps, "color.enc1.n", w1),
            block1: LkaBlock::new(ps, rng, "color.b1", w1, cfg),
            enc2: Conv2d::down(ps, rng, "color.enc2", w1, w2, 3, 2),
            enc2_norm: Norm::new(ps, "color.enc2.n", w2),
            block2: LkaBlock::new(ps, rng, "color.b2", w2, cfg),
            dec1: Conv2d::same(ps, rng, "color.dec1", w2, w1, 3),
            dec1_norm: Norm::new(ps, "color.dec1.n", w1),
            dec0: Conv2d::same(ps, rng, "color.dec0", w1, w1, 3),
            out: Conv2d::same(ps, rng, "color.out", w1, 3, 3),
        })
    }

    /// Disparity `[1,H,W]` to RGB `[3,H,W]` in (0,1).
    pub fn forward(
        &self,
        t: &mut Tape,
        ps: &ParamStore,
        bind: &mut Binding,
        disp: Var,
    ) -> Result<Var> {
        let s = t.shape(disp).to_vec();
        if s.len() != 3 || s[0] != 1 {
            return Err(Error::ShapeMismatch(format!(
                "color net expects [1,H,W], got {s:?}"
            )));
        }
        if s[1] % 4 != 0 || s[2] % 4 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "color net needs H, W divisible by 4, got {}x{}",
                s[1], s[2]
            )));
        }
        let e1 = self.enc1.apply(t, ps, bind, disp);
        let e1 = self.enc1_norm.apply(t, ps, bind, e1);
        let e1 = t.gelu(e1);
        let e1 = self.block1.apply(t, ps, bind, e1);

        let e2 = self.enc2.apply(t, ps, bind, e1);
        let e2 = self.enc2_norm.apply(t, ps, bind, e2);
        let e2 = t.gelu(e2);
        let e2 = self.block2.apply(t, ps, bind, e2);

        let u1 = t.upsample2(e2);
        let d1 = self.dec1.apply(t, ps, bind, u1);
        let d1 = self.dec1_norm.apply(t, ps, bind, d1);
        let d1 = t.gelu(d1);
        let skip = t.add(d1, e1);

        let u0 = t.upsample2(skip);
        let d0 = self.dec0.apply(t, ps, bind, u0);
        let d0 = t.gelu(d0);
        let o = self.out.apply(t, ps, bind, d0);
        Ok(t.sigmoid(o))
    }
}
