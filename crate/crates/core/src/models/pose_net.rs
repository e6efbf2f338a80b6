//! Pose network: regresses a 6-dof axis-angle + translation from a
//! concatenated frame pair, converted to a rigid transform through the
//! exponential map. The strided conv encoder is also reused by the
//! uncertainty net.

use super::layers::Conv2d;
use super::{Binding, ParamStore};
use crate::geometry::diff::PoseVars;
use crate::rng::Stream;
use crate::tensor::{Tape, Var};
use crate::{Error, Result};

/// Encoder widths at 1/2, 1/4, 1/8 and 1/16 resolution.
pub const POSE_ENC_WIDTHS: [usize; 4] = [16, 24, 32, 48];

/// Rotation output scale; keeps early poses near identity and the
/// exponential map in its stable region.
const ROT_SCALE: f32 = 0.01;
/// Translation output scale; one raw unit is a decimeter, so metric
/// baselines are reachable without extreme activations.
const TRANS_SCALE: f32 = 0.1;

/// The strided encoder shared between pose regression and uncertainty
/// generation. Input is a 6-channel stacked pair.
pub struct PairEncoder {
    convs: [Conv2d; 4],
}

impl PairEncoder {
    pub fn new(ps: &mut ParamStore, rng: &mut Stream, prefix: &str) -> PairEncoder {
        let w = POSE_ENC_WIDTHS;
        PairEncoder {
            convs: [
                Conv2d::down(ps, rng, &format!("{prefix}.c0"), 6, w[0], 7, 2),
                Conv2d::down(ps, rng, &format!("{prefix}.c1"), w[0], w[1], 5, 2),
                Conv2d::down(ps, rng, &format!("{prefix}.c2"), w[1], w[2], 3, 2),
                Conv2d::down(ps, rng, &format!("{prefix}.c3"), w[2], w[3], 3, 2),
            ],
        }
    }

    /// Features at 1/2, 1/4, 1/8, 1/16.
    pub fn features(
        &self,
        t: &mut Tape,
        ps: &ParamStore,
        bind: &mut Binding,
        pair: Var,
    ) -> [Var; 4] {
        let mut feats = Vec::with_capacity(4);
        let mut x = pair;
        for conv in &self.convs {
            let c = conv.apply(t, ps, bind, x);
            x = t.relu(c);
            feats.push(x);
        }
        [feats[0], feats[1], feats[2], feats[3]]
    }
}

/// Raw regression plus the assembled rigid transform.
pub struct PoseOutput {
    pub axis_angle: Var,
    pub translation: Var,
    pub pose: PoseVars,
}

pub struct PoseNet {
    pub encoder: PairEncoder,
    squeeze: Conv2d,
    head1: Conv2d,
    head2: Conv2d,
}

impl PoseNet {
    pub fn new(ps: &mut ParamStore, rng: &mut Stream) -> Result<PoseNet> {
        let w = POSE_ENC_WIDTHS[3];
        Ok(PoseNet {
            encoder: PairEncoder::new(ps, rng, "pose.enc"),
            squeeze: Conv2d::same(ps, rng, "pose.squeeze", w, w, 1),
            head1: Conv2d::same(ps, rng, "pose.head1", w, w, 3),
            head2: Conv2d::same(ps, rng, "pose.head2", w, 6, 1),
        })
    }

    /// Regress the transform taking target-frame points into the other
    /// frame's camera. Inputs are `[3,H,W]` each, stacked internally.
    pub fn forward(
        &self,
        t: &mut Tape,
        ps: &ParamStore,
        bind: &mut Binding,
        frame_a: Var,
        frame_b: Var,
    ) -> Result<PoseOutput> {
        if t.shape(frame_a) != t.shape(frame_b) {
            return Err(Error::ShapeMismatch(format!(
                "pose pair shapes differ: {:?} vs {:?}",
                t.shape(frame_a),
                t.shape(frame_b)
            )));
        }
        let pair = t.concat_channels(&[frame_a, frame_b]);
        let feats = self.encoder.features(t, ps, bind, pair);
        let s = self.squeeze.apply(t, ps, bind, feats[3]);
        let s = t.relu(s);
        let h1 = self.head1.apply(t, ps, bind, s);
        let h1 = t.relu(h1);
        let h2 = self.head2.apply(t, ps, bind, h1);
        let pooled = t.global_avg_pool(h2);
        let rot_raw = t.gather(pooled, vec![0, 1, 2]);
        let trans_raw = t.gather(pooled, vec![3, 4, 5]);
        let axis_angle = t.scale(rot_raw, ROT_SCALE);
        let translation = t.scale(trans_raw, TRANS_SCALE);
        let pose = PoseVars::from_axis_angle(t, axis_angle, translation);
        Ok(PoseOutput {
            axis_angle,
            translation,
            pose,
        })
    }
}
