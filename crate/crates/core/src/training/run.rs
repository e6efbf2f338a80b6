//! The training run loop: schedules data, alternates the two optimizer
//! steps, validates per epoch, logs per-step loss records, and writes
//! resumable checkpoints.

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::optimizer::Adam;
use super::steps::{step_optimizer1, step_optimizer2, PhaseLog, Step1Inputs};
use super::TrainConfig;
use crate::data::{epoch_scheduler, RealDataset, RealSample, SyntheticSample, UnifiedSynthetic};
use crate::evaluation::{evaluate_with_median_scaling, MetricsReport};
use crate::geometry::{disp_to_depth, DepthMap, DisparityMap, Grid};
use crate::losses::LossBreakdown;
use crate::models::{Binding, Networks, OPT1_PREFIXES, OPT2_PREFIXES};
use crate::rng::Stream;
use crate::tensor::Tape;
use crate::{Error, Result};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Samples preloaded into memory; the run loop is pure compute after this.
pub struct InMemoryData {
    pub real_train: Vec<RealSample>,
    pub syn_train: Vec<SyntheticSample>,
    /// Held-out (sample, dense ground truth) pairs.
    pub val: Vec<(RealSample, DepthMap)>,
}

impl InMemoryData {
    /// Load every sample referenced by the datasets.
    pub fn load(
        real_train: &RealDataset,
        syn: &UnifiedSynthetic,
        real_val: &RealDataset,
    ) -> Result<InMemoryData> {
        let mut rt = Vec::with_capacity(real_train.len());
        for i in 0..real_train.len() {
            rt.push(real_train.load(i)?);
        }
        let mut st = Vec::with_capacity(syn.len());
        for i in 0..syn.len() {
            st.push(syn.load(i)?);
        }
        let mut val = Vec::with_capacity(real_val.len());
        for i in 0..real_val.len() {
            let sample = real_val.load(i)?;
            let gt = real_val.load_gt_depth(i)?.ok_or_else(|| {
                Error::Dataset(format!(
                    "validation sample '{}' lacks ground-truth depth",
                    real_val.ids[i]
                ))
            })?;
            val.push((sample, gt));
        }
        Ok(InMemoryData {
            real_train: rt,
            syn_train: st,
            val,
        })
    }
}

/// Files produced by a run.
pub struct TrainOutputs {
    pub run_dir: PathBuf,
    pub loss_log: PathBuf,
    pub val_log: PathBuf,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

/// Final counters and metrics of a completed run.
pub struct RunSummary {
    pub steps_run: u64,
    pub final_val: Option<MetricsReport>,
    pub best_abs_rel: f64,
    pub outputs: TrainOutputs,
}

/// Predict disparity for one image with the current weights (no gradient).
pub fn predict_disparity(nets: &Networks, image: &crate::geometry::Image) -> Result<DisparityMap> {
    let mut tape = Tape::new();
    let mut bind = Binding::new(false);
    let img = tape.constant(&image.shape(), image.data.clone());
    let disp = nets
        .depth
        .forward(&mut tape, &nets.store, &mut bind, img)?;
    DisparityMap::new(Grid::new(
        image.height,
        image.width,
        tape.data(disp).to_vec(),
    )?)
}

/// Median-scaled validation over held-out samples; returns the pooled
/// report (pixel-weighted across samples).
pub fn validate(
    nets: &Networks,
    val: &[(RealSample, DepthMap)],
    cfg: &TrainConfig,
) -> Result<MetricsReport> {
    if val.is_empty() {
        return Err(Error::InvalidInput("empty validation split".into()));
    }
    let clamp = (cfg.min_depth as f64, cfg.max_depth as f64);
    let mut pooled: Option<MetricsReport> = None;
    let mut total_pixels = 0usize;
    for (sample, gt) in val {
        let disp = predict_disparity(nets, sample.target())?;
        let depth = disp_to_depth(&disp, cfg.min_depth, cfg.max_depth)?;
        let valid = Grid::filled(gt.grid().height, gt.grid().width, 1.0);
        let r = evaluate_with_median_scaling(&depth, gt, &valid, clamp)?;
        total_pixels += r.n_pixels;
        pooled = Some(match pooled {
            None => r,
            Some(p) => {
                let wa = p.n_pixels as f64;
                let wb = r.n_pixels as f64;
                let t = wa + wb;
                MetricsReport {
                    abs_rel: (p.abs_rel * wa + r.abs_rel * wb) / t,
                    sq_rel: (p.sq_rel * wa + r.sq_rel * wb) / t,
                    rmse: ((p.rmse * p.rmse * wa + r.rmse * r.rmse * wb) / t).sqrt(),
                    rmse_log: ((p.rmse_log * p.rmse_log * wa + r.rmse_log * r.rmse_log * wb)
                        / t)
                        .sqrt(),
                    a1: (p.a1 * wa + r.a1 * wb) / t,
                    a2: (p.a2 * wa + r.a2 * wb) / t,
                    a3: (p.a3 * wa + r.a3 * wb) / t,
                    n_pixels: p.n_pixels + r.n_pixels,
                    scaling: 1.0,
                    clamp_min: p.clamp_min,
                    clamp_max: p.clamp_max,
                }
            }
        });
    }
    let mut out = pooled.expect("nonempty");
    out.n_pixels = total_pixels;
    Ok(out)
}

fn log_breakdown(
    file: &mut std::fs::File,
    step: u64,
    opt: u8,
    lr: f32,
    bd: &LossBreakdown,
) -> std::io::Result<()> {
    let mut line = format!("step={step} opt={opt} lr={lr}");
    for (name, v) in bd.fields() {
        line.push_str(&format!(" {name}={v}"));
    }
    writeln!(file, "{line}")
}

/// Execute the full two-optimizer schedule. When `resume` names a
/// checkpoint, training continues from its step with identical state.
pub fn run_training(
    cfg: &TrainConfig,
    data: &InMemoryData,
    run_dir: &Path,
    resume: Option<&Path>,
) -> Result<RunSummary> {
    cfg.validate()?;
    if data.real_train.is_empty() || data.syn_train.is_empty() {
        return Err(Error::InvalidInput(
            "training needs nonempty real and synthetic sets".into(),
        ));
    }
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let outputs = TrainOutputs {
        run_dir: run_dir.to_path_buf(),
        loss_log: run_dir.join("loss_log.txt"),
        val_log: run_dir.join("val_log.txt"),
        last_checkpoint: run_dir.join("last.ckpt"),
        best_checkpoint: run_dir.join("best.ckpt"),
    };

    let mut nets = Networks::build(&cfg.network_config(), cfg.seed, cfg.share_pose_encoder)?;
    let mut opt1 = Adam::new(
        &nets.store,
        &OPT1_PREFIXES,
        cfg.lr,
        cfg.adam_beta1,
        cfg.adam_beta2,
    );
    let mut opt2 = Adam::new(
        &nets.store,
        &OPT2_PREFIXES,
        cfg.lr,
        cfg.adam_beta1,
        cfg.adam_beta2,
    );
    let mut cutmix_rng = Stream::seed_from(cfg.seed).child(0x63757478);
    let mut start_step = 0u64;
    let mut best_abs_rel = f64::INFINITY;

    if let Some(ckpt_path) = resume {
        let ckpt = load_checkpoint(ckpt_path)?;
        ckpt.check_config(cfg)?;
        ckpt.restore_params(&mut nets.store)?;
        opt1.restore(&nets.store, ckpt.opt1_t, &ckpt.opt1_state)?;
        opt2.restore(&nets.store, ckpt.opt2_t, &ckpt.opt2_state)?;
        cutmix_rng = Stream::from_state(ckpt.cutmix_rng);
        start_step = ckpt.step;
        best_abs_rel = ckpt.best_abs_rel;
    }

    let plan = epoch_scheduler(
        data.real_train.len(),
        data.syn_train.len(),
        cfg.epochs,
        cfg.batch_real,
        cfg.batch_syn,
        cfg.syn_policy,
        cfg.seed,
    )?;

    let mut loss_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&outputs.loss_log)
        .map_err(|e| Error::io(&outputs.loss_log, e))?;
    let mut val_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&outputs.val_log)
        .map_err(|e| Error::io(&outputs.val_log, e))?;

    let mut final_val = None;
    let mut last_epoch = usize::MAX;

    for step_idx in (start_step as usize)..plan.steps.len() {
        let entry = &plan.steps[step_idx];
        let lr = cfg.lr_for_epoch(entry.epoch);
        opt1.lr = lr;
        opt2.lr = lr;
        last_epoch = entry.epoch;

        let real_batch: Vec<RealSample> = entry
            .real_indices
            .iter()
            .map(|&i| data.real_train[i].clone())
            .collect();
        let syn_batch: Vec<SyntheticSample> = entry
            .syn_indices
            .iter()
            .map(|&i| data.syn_train[i].clone())
            .collect();

        // Strict phase order per iteration: frozen inference, compositing,
        // supervised update, unsupervised update.
        let mut phases = PhaseLog::default();
        let bd1 = step_optimizer1(
            &mut nets,
            &mut opt1,
            Step1Inputs {
                syn: &syn_batch,
                real: &real_batch,
            },
            cfg,
            &mut cutmix_rng,
            &mut phases,
        )?;
        let bd2 = step_optimizer2(&mut nets, &mut opt2, &real_batch, cfg, &mut phases)?;
        debug_assert_eq!(
            phases.0,
            vec![
                "infer_frozen",
                "composite",
                "optimize_supervised",
                "optimize_unsupervised"
            ]
        );

        let step = step_idx as u64 + 1;
        log_breakdown(&mut loss_file, step, 1, lr, &bd1).map_err(|e| Error::io(&outputs.loss_log, e))?;
        log_breakdown(&mut loss_file, step, 2, lr, &bd2).map_err(|e| Error::io(&outputs.loss_log, e))?;

        let end_of_epoch = step_idx + 1 == plan.steps.len()
            || plan.steps[step_idx + 1].epoch != entry.epoch;
        if end_of_epoch && !data.val.is_empty() {
            let report = validate(&nets, &data.val, cfg)?;
            writeln!(
                val_file,
                "step={step} epoch={} abs_rel={} rmse={} a1={}",
                entry.epoch, report.abs_rel, report.rmse, report.a1
            )
            .map_err(|e| Error::io(&outputs.val_log, e))?;
            if report.abs_rel < best_abs_rel {
                best_abs_rel = report.abs_rel;
                save_checkpoint(
                    &outputs.best_checkpoint,
                    cfg,
                    &nets.store,
                    &opt1,
                    &opt2,
                    step,
                    entry.epoch as u64,
                    best_abs_rel,
                    cutmix_rng.state(),
                )?;
            }
            final_val = Some(report);
        }

        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every as u64 == 0 {
            save_checkpoint(
                &outputs.last_checkpoint,
                cfg,
                &nets.store,
                &opt1,
                &opt2,
                step,
                entry.epoch as u64,
                best_abs_rel,
                cutmix_rng.state(),
            )?;
        }
    }

    let total_steps = plan.steps.len() as u64;
    save_checkpoint(
        &outputs.last_checkpoint,
        cfg,
        &nets.store,
        &opt1,
        &opt2,
        total_steps,
        last_epoch.min(cfg.epochs.saturating_sub(1)) as u64,
        best_abs_rel,
        cutmix_rng.state(),
    )?;

    Ok(RunSummary {
        steps_run: total_steps.saturating_sub(start_step),
        final_val,
        best_abs_rel,
        outputs,
    })
}

/// Rebuild networks and load weights from a checkpoint (inference paths).
pub fn networks_from_checkpoint(path: &Path) -> Result<(Networks, TrainConfig)> {
    let ckpt = load_checkpoint(path)?;
    let cfg = TrainConfig::from_text(&ckpt.config_text)?;
    let mut nets = Networks::build(&cfg.network_config(), cfg.seed, cfg.share_pose_encoder)?;
    ckpt.restore_params(&mut nets.store)?;
    Ok((nets, cfg))
}
