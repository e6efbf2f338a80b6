//! Two-optimizer training: configuration, optimizer, step functions,
//! checkpointing and the run loop.
//!
//! Each iteration performs the supervised step (optimizer 1: depth on
//! composited synthetic colors, color on real) followed by the unsupervised
//! step (optimizer 2: uncertainty-fused reprojection with smoothness and
//! sky regularizers), in that order.

mod checkpoint;
mod optimizer;
mod run;
mod steps;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optimizer::Adam;
pub use run::{networks_from_checkpoint, predict_disparity, run_training, validate, InMemoryData, RunSummary, TrainOutputs};
pub use steps::{step_optimizer1, step_optimizer2, PhaseLog, Step1Inputs, UnsupervisedLossMode};

use crate::data::SynExhaustedPolicy;
use crate::models::NetworkConfig;
use crate::{Error, Result};

/// All run hyper-parameters. Every field maps to one key of the flat
/// key-value config file; flag overrides are applied by the caller before
/// the run starts.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub lr_decayed: f32,
    /// Zero-based epoch index at which the decayed rate takes over; the
    /// default 15 means epochs 0..15 run at `lr` and epoch 15 onward (the
    /// 16th epoch) at `lr_decayed`.
    pub lr_decay_epoch: usize,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    /// Uncertainty regularizer weight.
    pub alpha: f32,
    /// Smoothness weight in the unsupervised composite.
    pub beta: f32,
    /// Smoothness weight (supervised composite) and sky weight
    /// (unsupervised composite).
    pub gamma: f32,
    pub batch_real: usize,
    pub batch_syn: usize,
    pub epochs: usize,
    pub seed: u64,
    pub auto_mask: bool,
    pub utsf: bool,
    pub sky_loss: bool,
    pub cutmix: bool,
    /// Global-norm gradient clip; 0 disables.
    pub grad_clip: f32,
    pub min_depth: f32,
    pub max_depth: f32,
    pub height: usize,
    pub width: usize,
    pub stage_widths: [usize; 4],
    pub stage_depths: [usize; 4],
    pub checkpoint_every: usize,
    pub share_pose_encoder: bool,
    /// Apply optimizer 1's smoothness to the composite-sample prediction.
    pub smooth_on_composite: bool,
    pub syn_policy: SynExhaustedPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            lr_decayed: 1e-5,
            lr_decay_epoch: 15,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            alpha: 1e-2,
            beta: 1e-2,
            gamma: 1e-3,
            batch_real: 1,
            batch_syn: 1,
            epochs: 20,
            seed: 1,
            auto_mask: false,
            utsf: true,
            sky_loss: true,
            cutmix: true,
            grad_clip: 0.0,
            min_depth: 0.1,
            max_depth: 100.0,
            height: 64,
            width: 128,
            stage_widths: [8, 16, 24, 32],
            stage_depths: [1, 1, 1, 1],
            checkpoint_every: 500,
            share_pose_encoder: true,
            smooth_on_composite: true,
            syn_policy: SynExhaustedPolicy::Reshuffle,
        }
    }
}

impl TrainConfig {
    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            stage_widths: self.stage_widths,
            stage_depths: self.stage_depths,
            input_size: (self.height, self.width),
            ..NetworkConfig::toy(self.height, self.width)
        }
    }

    /// Learning rate for a zero-based epoch index.
    pub fn lr_for_epoch(&self, epoch: usize) -> f32 {
        if epoch >= self.lr_decay_epoch {
            self.lr_decayed
        } else {
            self.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr", self.lr),
            ("lr_decayed", self.lr_decayed),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_real == 0 || self.batch_syn == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch sizes and epochs must be positive".into(),
            ));
        }
        if !(0.0 < self.min_depth && self.min_depth < self.max_depth) {
            return Err(Error::Config(format!(
                "need 0 < min_depth < max_depth, got {} / {}",
                self.min_depth, self.max_depth
            )));
        }
        self.network_config().validate()
    }

    /// Flat `key = value` text, one key per line, stable order.
    pub fn to_text(&self) -> String {
        let w = self.stage_widths;
        let d = self.stage_depths;
        format!(
            "lr = {}\nlr_decayed = {}\nlr_decay_epoch = {}\nadam_beta1 = {}\nadam_beta2 = {}\n\
             alpha = {}\nbeta = {}\ngamma = {}\nbatch_real = {}\nbatch_syn = {}\nepochs = {}\n\
             seed = {}\nauto_mask = {}\nutsf = {}\nsky_loss = {}\ncutmix = {}\ngrad_clip = {}\n\
             min_depth = {}\nmax_depth = {}\nheight = {}\nwidth = {}\n\
             stage_widths = {},{},{},{}\nstage_depths = {},{},{},{}\ncheckpoint_every = {}\n\
             share_pose_encoder = {}\nsmooth_on_composite = {}\nsyn_policy = {}\n",
            self.lr,
            self.lr_decayed,
            self.lr_decay_epoch,
            self.adam_beta1,
            self.adam_beta2,
            self.alpha,
            self.beta,
            self.gamma,
            self.batch_real,
            self.batch_syn,
            self.epochs,
            self.seed,
            self.auto_mask,
            self.utsf,
            self.sky_loss,
            self.cutmix,
            self.grad_clip,
            self.min_depth,
            self.max_depth,
            self.height,
            self.width,
            w[0],
            w[1],
            w[2],
            w[3],
            d[0],
            d[1],
            d[2],
            d[3],
            self.checkpoint_every,
            self.share_pose_encoder,
            self.smooth_on_composite,
            match self.syn_policy {
                SynExhaustedPolicy::Reshuffle => "reshuffle",
                SynExhaustedPolicy::Repeat => "repeat",
            },
        )
    }

    /// Parse the flat key-value format; errors carry 1-based line numbers.
    pub fn from_text(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.apply_key(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key = value` assignment (also used for flag overrides).
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "on" | "1" => Ok(true),
                "false" | "off" | "0" => Ok(false),
                _ => Err(Error::Config(format!("bad flag '{v}' for {key}"))),
            }
        }
        fn four(key: &str, v: &str) -> Result<[usize; 4]> {
            let parts: Vec<&str> = v.split(',').map(|p| p.trim()).collect();
            if parts.len() != 4 {
                return Err(Error::Config(format!(
                    "{key} needs 4 comma-separated values"
                )));
            }
            let mut out = [0usize; 4];
            for (i, p) in parts.iter().enumerate() {
                out[i] = num(key, p)?;
            }
            Ok(out)
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "lr_decayed" => self.lr_decayed = num(key, value)?,
            "lr_decay_epoch" => self.lr_decay_epoch = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "batch_real" => self.batch_real = num(key, value)?,
            "batch_syn" => self.batch_syn = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "auto_mask" => self.auto_mask = flag(key, value)?,
            "utsf" => self.utsf = flag(key, value)?,
            "sky_loss" => self.sky_loss = flag(key, value)?,
            "cutmix" => self.cutmix = flag(key, value)?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            "min_depth" => self.min_depth = num(key, value)?,
            "max_depth" => self.max_depth = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "stage_widths" => self.stage_widths = four(key, value)?,
            "stage_depths" => self.stage_depths = four(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "share_pose_encoder" => self.share_pose_encoder = flag(key, value)?,
            "smooth_on_composite" => self.smooth_on_composite = flag(key, value)?,
            "syn_policy" => {
                self.syn_policy = match value {
                    "reshuffle" => SynExhaustedPolicy::Reshuffle,
                    "repeat" => SynExhaustedPolicy::Repeat,
                    _ => return Err(Error::Config(format!("bad syn_policy '{value}'"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Keys whose values differ from `other`, for resume mismatch messages.
    pub fn diff(&self, other: &TrainConfig) -> Vec<String> {
        let a = self.to_text();
        let b = other.to_text();
        a.lines()
            .zip(b.lines())
            .filter(|(x, y)| x != y)
            .map(|(x, y)| format!("'{x}' vs '{y}'"))
            .collect()
    }
}
