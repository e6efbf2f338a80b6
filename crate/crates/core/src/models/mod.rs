//! Trainable networks: depth (attention-CNN encoder + high-resolution
//! decoder), color (depth-to-color), pose, and uncertainty generation.
//!
//! All parameters of all networks live in one [`ParamStore`] under dotted
//! name prefixes (`depth.`, `color.`, `pose.`, `unc.`), which is what lets
//! each optimizer select exactly the networks it owns and lets checkpoints
//! serialize everything by name.

mod color_net;
mod depth_net;
mod layers;
mod pose_net;
mod uncertainty_net;

pub use color_net::ColorNet;
pub use depth_net::{DepthNet, FeaturePyramid};
pub use layers::{Conv2d, LkaBlock, Norm};
pub use pose_net::{PoseNet, PoseOutput};
pub use uncertainty_net::UncertaintyNet;

use crate::rng::Stream;
use crate::tensor::{Tape, Var};
use crate::{Error, Result};
use std::collections::HashMap;

/// Channel widths and block counts for the depth encoder stages plus the
/// attention kernel geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub stage_widths: [usize; 4],
    pub stage_depths: [usize; 4],
    /// Local depthwise kernel of the attention decomposition.
    pub lka_kernel: usize,
    /// Long-range depthwise-dilated kernel.
    pub lka_dilated_kernel: usize,
    pub lka_dilation: usize,
    /// (H, W); both must be divisible by 32.
    pub input_size: (usize, usize),
    pub toy_scale: bool,
}

impl NetworkConfig {
    /// Small widths for desk-scale training and tests.
    pub fn toy(height: usize, width: usize) -> Self {
        NetworkConfig {
            stage_widths: [8, 16, 24, 32],
            stage_depths: [1, 1, 1, 1],
            lka_kernel: 5,
            lka_dilated_kernel: 7,
            lka_dilation: 3,
            input_size: (height, width),
            toy_scale: true,
        }
    }

    /// Full-scale presets (0..=3) mirroring the published attention-network
    /// family; not exercised in CI.
    pub fn full_scale(variant: usize, height: usize, width: usize) -> Result<Self> {
        let (widths, depths) = match variant {
            0 => ([32, 64, 160, 256], [3, 3, 5, 2]),
            1 => ([64, 128, 320, 512], [2, 2, 4, 2]),
            2 => ([64, 128, 320, 512], [3, 3, 12, 3]),
            3 => ([64, 128, 320, 512], [3, 5, 27, 3]),
            v => {
                return Err(Error::Config(format!(
                    "unknown full-scale variant {v}, expected 0..=3"
                )))
            }
        };
        Ok(NetworkConfig {
            stage_widths: widths,
            stage_depths: depths,
            lka_kernel: 5,
            lka_dilated_kernel: 7,
            lka_dilation: 3,
            input_size: (height, width),
            toy_scale: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be divisible by 32"
            )));
        }
        if self.stage_widths.iter().any(|&c| c == 0) {
            return Err(Error::Config("stage widths must be >= 1".into()));
        }
        if self.stage_depths.iter().any(|&d| d == 0) {
            return Err(Error::Config("stage depths must be >= 1".into()));
        }
        for k in [self.lka_kernel, self.lka_dilated_kernel] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("kernel {k} must be odd")));
            }
        }
        if self.lka_dilation == 0 {
            return Err(Error::Config("dilation must be >= 1".into()));
        }
        Ok(())
    }

    /// Expected receptive field of the attention path along one axis.
    pub fn attention_receptive_field(&self) -> usize {
        self.lka_kernel + (self.lka_dilated_kernel - 1) * self.lka_dilation
    }
}

/// Handle to one named parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Flat store of every trainable tensor, addressed by id or dotted name.
#[derive(Default, Clone)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> ParamId {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "param {name}: shape/data mismatch"
        );
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids whose names start with any of the given prefixes, in id order.
    pub fn ids_with_prefixes(&self, prefixes: &[&str]) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| {
                let name = &self.get(id).name;
                prefixes.iter().any(|p| name.starts_with(p))
            })
            .collect()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }
}

/// Per-forward cache of parameter leaves. Binding the same parameter twice
/// in one pass reuses the node, so gradient contributions from repeated
/// (weight-shared) applications accumulate on a single leaf.
pub struct Binding {
    trainable: bool,
    cache: HashMap<usize, Var>,
}

impl Binding {
    pub fn new(trainable: bool) -> Self {
        Binding {
            trainable,
            cache: HashMap::new(),
        }
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn bind(&mut self, t: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.cache.get(&id.0) {
            return v;
        }
        let e = store.get(id);
        let v = t.leaf(&e.shape, e.data.clone(), self.trainable);
        self.cache.insert(id.0, v);
        v
    }

    /// (param, leaf) pairs bound during this pass, in id order.
    pub fn bound(&self) -> Vec<(ParamId, Var)> {
        let mut out: Vec<(ParamId, Var)> = self
            .cache
            .iter()
            .map(|(&i, &v)| (ParamId(i), v))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// Uniform Kaiming-style init, bound 1/sqrt(fan_in).
pub(crate) fn kaiming_uniform(rng: &mut Stream, n: usize, fan_in: usize) -> Vec<f32> {
    let bound = (1.0 / fan_in.max(1) as f32).sqrt();
    (0..n).map(|_| rng.uniform_in(-bound, bound)).collect()
}

/// The four networks plus their shared parameter store.
pub struct Networks {
    pub store: ParamStore,
    pub depth: DepthNet,
    pub color: ColorNet,
    pub pose: PoseNet,
    pub unc: UncertaintyNet,
}

/// Parameter-name prefixes each optimizer may touch.
pub const OPT1_PREFIXES: [&str; 2] = ["depth.", "color."];
pub const OPT2_PREFIXES: [&str; 3] = ["depth.", "pose.", "unc."];

impl Networks {
    /// Build all networks with deterministic, seed-derived initialization.
    /// When `share_pose_encoder` is set the uncertainty net binds the pose
    /// encoder's weights instead of owning a copy.
    pub fn build(cfg: &NetworkConfig, seed: u64, share_pose_encoder: bool) -> Result<Networks> {
        cfg.validate()?;
        let root = Stream::seed_from(seed);
        let mut store = ParamStore::new();
        let depth = DepthNet::new(&mut store, &mut root.child(1), cfg)?;
        let color = ColorNet::new(&mut store, &mut root.child(2), cfg)?;
        let pose = PoseNet::new(&mut store, &mut root.child(3))?;
        let unc = UncertaintyNet::new(
            &mut store,
            &mut root.child(4),
            if share_pose_encoder { Some(&pose) } else { None },
        )?;
        Ok(Networks {
            store,
            depth,
            color,
            pose,
            unc,
        })
    }
}
