//! Building blocks: convolution layers with registered parameters, a
//! per-sample normalization, and the large-kernel attention block.

use super::{kaiming_uniform, Binding, NetworkConfig, ParamId, ParamStore};
use crate::rng::Stream;
use crate::tensor::{ConvSpec, Tape, Var};

/// Convolution layer over `[C,H,W]` nodes.
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Stream,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Conv2d {
        let icg = in_ch / spec.groups;
        let fan_in = icg * k * k;
        let w = ps.register(
            &format!("{name}.w"),
            &[out_ch, icg, k, k],
            kaiming_uniform(rng, out_ch * icg * k * k, fan_in),
        );
        let b = bias.then(|| {
            ps.register(
                &format!("{name}.b"),
                &[out_ch],
                kaiming_uniform(rng, out_ch, fan_in),
            )
        });
        Conv2d { w, b, spec }
    }

    /// Standard same-padded conv.
    pub fn same(
        ps: &mut ParamStore,
        rng: &mut Stream,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
    ) -> Conv2d {
        Conv2d::new(ps, rng, name, in_ch, out_ch, k, ConvSpec::same(k), true)
    }

    /// Same-padded depthwise conv with dilation.
    pub fn depthwise(
        ps: &mut ParamStore,
        rng: &mut Stream,
        name: &str,
        ch: usize,
        k: usize,
        dilation: usize,
    ) -> Conv2d {
        let spec = ConvSpec {
            stride: 1,
            pad: dilation * (k - 1) / 2,
            dilation,
            groups: ch,
        };
        Conv2d::new(ps, rng, name, ch, ch, k, spec, true)
    }

    /// Strided downsampling conv (same-style padding).
    pub fn down(
        ps: &mut ParamStore,
        rng: &mut Stream,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
    ) -> Conv2d {
        let spec = ConvSpec {
            stride,
            pad: (k - 1) / 2,
            dilation: 1,
            groups: 1,
        };
        Conv2d::new(ps, rng, name, in_ch, out_ch, k, spec, true)
    }

    pub fn apply(&self, t: &mut Tape, ps: &ParamStore, bind: &mut Binding, x: Var) -> Var {
        let w = bind.bind(t, ps, self.w);
        let b = self.b.map(|id| bind.bind(t, ps, id));
        t.conv2d(x, w, b, self.spec)
    }
}

/// Per-sample normalization over all of (C,H,W) with a learned per-channel
/// affine. Statistics never cross samples, so batched and single-sample
/// forwards agree exactly.
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    eps: f32,
}

impl Norm {
    pub fn new(ps: &mut ParamStore, name: &str, ch: usize) -> Norm {
        Norm {
            gamma: ps.register(&format!("{name}.g"), &[ch], vec![1.0; ch]),
            beta: ps.register(&format!("{name}.b"), &[ch], vec![0.0; ch]),
            eps: 1e-5,
        }
    }

    pub fn apply(&self, t: &mut Tape, ps: &ParamStore, bind: &mut Binding, x: Var) -> Var {
        let mu = t.mean(x);
        let centered = t.sub_scalar(x, mu);
        let sq = t.mul(centered, centered);
        let var = t.mean(sq);
        let var_eps = t.add_const(var, self.eps);
        let std = t.sqrt(var_eps);
        let normed = t.div_scalar(centered, std);
        let g = bind.bind(t, ps, self.gamma);
        let b = bind.bind(t, ps, self.beta);
        t.affine_channels(normed, g, b)
    }
}

/// One attention stage block: pre-normed large-kernel attention with a
/// residual, then a pre-normed depthwise MLP with a residual.
///
/// The attention path decomposes a large kernel into a local depthwise
/// conv, a depthwise-dilated conv, and a pointwise conv; its output gates
/// the features elementwise.
pub struct LkaBlock {
    norm1: Norm,
    proj1: Conv2d,
    dw: Conv2d,
    dwd: Conv2d,
    pw: Conv2d,
    proj2: Conv2d,
    norm2: Norm,
    mlp_fc1: Conv2d,
    mlp_dw: Conv2d,
    mlp_fc2: Conv2d,
}

const MLP_RATIO: usize = 2;

impl LkaBlock {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Stream,
        name: &str,
        ch: usize,
        cfg: &NetworkConfig,
    ) -> LkaBlock {
        let hidden = ch * MLP_RATIO;
        LkaBlock {
            norm1: Norm::new(ps, &format!("{name}.n1"), ch),
            proj1: Conv2d::same(ps, rng, &format!("{name}.proj1"), ch, ch, 1),
            dw: Conv2d::depthwise(ps, rng, &format!("{name}.dw"), ch, cfg.lka_kernel, 1),
            dwd: Conv2d::depthwise(
                ps,
                rng,
                &format!("{name}.dwd"),
                ch,
                cfg.lka_dilated_kernel,
                cfg.lka_dilation,
            ),
            pw: Conv2d::same(ps, rng, &format!("{name}.pw"), ch, ch, 1),
            proj2: Conv2d::same(ps, rng, &format!("{name}.proj2"), ch, ch, 1),
            norm2: Norm::new(ps, &format!("{name}.n2"), ch),
            mlp_fc1: Conv2d::same(ps, rng, &format!("{name}.mlp1"), ch, hidden, 1),
            mlp_dw: Conv2d::depthwise(ps, rng, &format!("{name}.mlpdw"), hidden, 3, 1),
            mlp_fc2: Conv2d::same(ps, rng, &format!("{name}.mlp2"), hidden, ch, 1),
        }
    }

    /// The attention map path alone (without the gating multiply); exposed
    /// for receptive-field probes.
    pub fn attention_map(&self, t: &mut Tape, ps: &ParamStore, bind: &mut Binding, x: Var) -> Var {
        let local = self.dw.apply(t, ps, bind, x);
        let long = self.dwd.apply(t, ps, bind, local);
        self.pw.apply(t, ps, bind, long)
    }

    pub fn apply(&self, t: &mut Tape, ps: &ParamStore, bind: &mut Binding, x: Var) -> Var {
        // Attention sub-block.
        let z = self.norm1.apply(t, ps, bind, x);
        let p = self.proj1.apply(t, ps, bind, z);
        let a = t.gelu(p);
        let attn = self.attention_map(t, ps, bind, a);
        let gated = t.mul(a, attn);
        let out = self.proj2.apply(t, ps, bind, gated);
        let x = t.add(x, out);

        // MLP sub-block.
        let z2 = self.norm2.apply(t, ps, bind, x);
        let h = self.mlp_fc1.apply(t, ps, bind, z2);
        let hd = self.mlp_dw.apply(t, ps, bind, h);
        let hg = t.gelu(hd);
        let m = self.mlp_fc2.apply(t, ps, bind, hg);
        t.add(x, m)
    }

    /// Zero the attention output projection; the block then reduces to
    /// identity plus the MLP path.
    pub fn zero_attention_output(&self, ps: &mut ParamStore) {
        ps.get_mut(self.proj2.w).data.fill(0.0);
        if let Some(b) = self.proj2.b {
            ps.get_mut(b).data.fill(0.0);
        }
    }
}
