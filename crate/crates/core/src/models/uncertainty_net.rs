//! Uncertainty generation network: encodes a (related, target) frame pair
//! with the pose encoder and decodes a full-resolution nonnegative raw
//! uncertainty map. Pairs are processed independently with shared weights.
//!
//! By default the encoder weights are the pose net's own (shared); a
//! separate encoder instance can be requested instead.

use super::layers::Conv2d;
use super::pose_net::{PairEncoder, PoseNet, POSE_ENC_WIDTHS};
use super::{Binding, ParamStore};
use crate::rng::Stream;
use crate::tensor::{Tape, Var};
use crate::{Error, Result};

struct DecLevel {
    conv: Conv2d,
}

pub struct UncertaintyNet {
    own_encoder: Option<PairEncoder>,
    levels: [DecLevel; 3],
    head: Conv2d,
    out: Conv2d,
    shares_encoder: bool,
}

impl UncertaintyNet {
    /// With `shared` the decoder rides on the given pose encoder; otherwise
    /// a private encoder is registered under the `unc.` prefix.
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Stream,
        shared: Option<&PoseNet>,
    ) -> Result<UncertaintyNet> {
        let w = POSE_ENC_WIDTHS;
        let own_encoder = match shared {
            Some(_) => None,
            None => Some(PairEncoder::new(ps, rng, "unc.enc")),
        };
        let levels = [
            // up(f3) + f2 -> w2, up + f1 -> w1, up + f0 -> w0
            DecLevel {
                conv: Conv2d::same(ps, rng, "unc.dec2", w[3] + w[2], w[2], 3),
            },
            DecLevel {
                conv: Conv2d::same(ps, rng, "unc.dec1", w[2] + w[1], w[1], 3),
            },
            DecLevel {
                conv: Conv2d::same(ps, rng, "unc.dec0", w[1] + w[0], w[0], 3),
            },
        ];
        let head = Conv2d::same(ps, rng, "unc.head", w[0], 8, 3);
        let out = Conv2d::same(ps, rng, "unc.out", 8, 1, 3);
        Ok(UncertaintyNet {
            own_encoder,
            levels,
            head,
            out,
            shares_encoder: shared.is_some(),
        })
    }

    pub fn shares_encoder(&self) -> bool {
        self.shares_encoder
    }

    /// Raw uncertainty map for the pair (related, target): `[1,H,W]`, all
    /// values nonnegative via softplus.
    pub fn forward(
        &self,
        t: &mut Tape,
        ps: &ParamStore,
        bind: &mut Binding,
        pose_net: &PoseNet,
        related: Var,
        target: Var,
    ) -> Result<Var> {
        if t.shape(related) != t.shape(target) {
            return Err(Error::ShapeMismatch(format!(
                "uncertainty pair shapes differ: {:?} vs {:?}",
                t.shape(related),
                t.shape(target)
            )));
        }
        let pair = t.concat_channels(&[related, target]);
        let encoder = self.own_encoder.as_ref().unwrap_or(&pose_net.encoder);
        let feats = encoder.features(t, ps, bind, pair);

        let mut x = feats[3];
        for (i, level) in self.levels.iter().enumerate() {
            let up = t.upsample2(x);
            let skip = feats[2 - i];
            let cat = t.concat_channels(&[up, skip]);
            let c = level.conv.apply(t, ps, bind, cat);
            x = t.relu(c);
        }
        let full = t.upsample2(x);
        let h = self.head.apply(t, ps, bind, full);
        let h = t.relu(h);
        let o = self.out.apply(t, ps, bind, h);
        Ok(t.softplus(o))
    }
}
