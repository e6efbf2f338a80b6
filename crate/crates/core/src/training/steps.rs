//! The two optimizer steps of one training iteration.
//!
//! Step 1 (supervised): with gradients off, infer real/synthetic depths and
//! the syn-to-real color; composite syn and syn-to-real colors; with
//! gradients on, train the color net to reproduce real colors from real
//! depth and the depth net against synthetic ground truth.
//!
//! Step 2 (unsupervised): predict depth and poses, reproject the temporal
//! and stereo frames, and fuse the photometric errors with learned
//! uncertainty (or a per-pixel minimum when fusion is disabled).

use super::optimizer::Adam;
use super::TrainConfig;
use crate::augmentation::{compose_syn_real, CompositePair};
use crate::data::{RealSample, SyntheticSample};
use crate::geometry::diff::{disp_to_depth_t, reproject_t, PoseVars};
use crate::geometry::{depth_to_disp, Grid};
use crate::losses::{
    auto_mask_from_pe, color_reconstruction_loss_t, masked_mean_t, min_over_frames_t,
    optimizer1_loss, optimizer2_loss, photometric_error_t, sky_regularization_t, smoothness_t,
    supervised_depth_loss_t, utsf_loss_t, LossBreakdown,
};
use crate::models::{Binding, Networks};
use crate::rng::Stream;
use crate::tensor::{Tape, Var};
use crate::{Error, Result};

/// Ordered trace of the phases one iteration went through; lets tests
/// assert the strict infer -> composite -> supervised -> unsupervised
/// interleaving.
#[derive(Default, Debug)]
pub struct PhaseLog(pub Vec<&'static str>);

impl PhaseLog {
    pub fn push(&mut self, phase: &'static str) {
        self.0.push(phase);
    }
}

/// How step 2 combines per-frame reprojection errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnsupervisedLossMode {
    /// Temporal-spatial fusion by learned uncertainty.
    Utsf,
    /// Per-pixel minimum over all warped frames (baseline).
    MinReprojection,
}

/// Data consumed by one supervised step.
pub struct Step1Inputs<'a> {
    pub syn: &'a [SyntheticSample],
    pub real: &'a [RealSample],
}

fn image_leaf(t: &mut Tape, img: &crate::geometry::Image) -> Var {
    t.constant(&img.shape(), img.data.clone())
}

/// Supervised step: returns the loss breakdown after applying one
/// optimizer-1 update to the depth and color networks.
pub fn step_optimizer1(
    nets: &mut Networks,
    opt1: &mut Adam,
    inputs: Step1Inputs,
    cfg: &TrainConfig,
    cutmix_rng: &mut Stream,
    phases: &mut PhaseLog,
) -> Result<LossBreakdown> {
    if inputs.syn.is_empty() || inputs.real.is_empty() {
        return Err(Error::InvalidInput(
            "supervised step needs synthetic and real samples".into(),
        ));
    }
    let mut tape = Tape::new();
    let store = &nets.store;

    // Phase 1: gradient-free inference of real depths, synthetic depths and
    // syn-to-real colors.
    phases.push("infer_frozen");
    let mut frozen = Binding::new(false);
    let mut real_disps: Vec<Vec<f32>> = Vec::with_capacity(inputs.real.len());
    for r in inputs.real {
        let img = image_leaf(&mut tape, r.target());
        let disp = nets.depth.forward(&mut tape, store, &mut frozen, img)?;
        real_disps.push(tape.data(disp).to_vec());
    }
    let mut syn2real: Vec<crate::geometry::Image> = Vec::with_capacity(inputs.syn.len());
    if cfg.cutmix {
        for s in inputs.syn {
            let img = image_leaf(&mut tape, &s.color);
            let disp = nets.depth.forward(&mut tape, store, &mut frozen, img)?;
            let color = nets.color.forward(&mut tape, store, &mut frozen, disp)?;
            syn2real.push(crate::geometry::Image::new(
                3,
                s.color.height,
                s.color.width,
                tape.data(color).to_vec(),
            )?);
        }
    }

    // Phase 2: composite pairs; the depth label is the synthetic ground
    // truth converted to the shared disparity convention, never mixed.
    phases.push("composite");
    let mut composites: Vec<CompositePair> = Vec::with_capacity(inputs.syn.len());
    for (i, s) in inputs.syn.iter().enumerate() {
        let gt_disp = depth_to_disp(&s.depth, cfg.min_depth, cfg.max_depth)?;
        let pair = if cfg.cutmix {
            compose_syn_real(&s.color, &syn2real[i], gt_disp.grid(), cutmix_rng)?
        } else {
            // Ablation path: raw synthetic colors only.
            CompositePair {
                image: s.color.clone(),
                depth_label: gt_disp.grid().clone(),
                provenance: vec![
                    crate::augmentation::Provenance::Synthetic;
                    s.color.height * s.color.width
                ],
                mask: crate::augmentation::CutMixMask {
                    top: 0,
                    left: 0,
                    height: s.color.height,
                    width: s.color.width,
                    image_height: s.color.height,
                    image_width: s.color.width,
                },
            }
        };
        composites.push(pair);
    }

    // Phase 3: gradients on.
    phases.push("optimize_supervised");
    let mut bind = Binding::new(true);

    // Color net learns real colors from (detached) real depths.
    let mut d2c_sum = tape.scalar_const(0.0);
    for (r, disp_data) in inputs.real.iter().zip(real_disps.iter()) {
        let disp_const = tape.constant(&[1, cfg.height, cfg.width], disp_data.clone());
        let pred = nets.color.forward(&mut tape, store, &mut bind, disp_const)?;
        let target = image_leaf(&mut tape, r.target());
        let l = color_reconstruction_loss_t(&mut tape, pred, target)?;
        d2c_sum = tape.add(d2c_sum, l);
    }
    let d2c = tape.scale(d2c_sum, 1.0 / inputs.real.len() as f32);

    // Depth net learns from composites against synthetic ground truth.
    let mut sup_sum = tape.scalar_const(0.0);
    let mut smooth_sum = tape.scalar_const(0.0);
    for pair in &composites {
        let img = image_leaf(&mut tape, &pair.image);
        let disp = nets.depth.forward(&mut tape, store, &mut bind, img)?;
        let gt = tape.constant(
            &[1, pair.image.height, pair.image.width],
            pair.depth_label.data.clone(),
        );
        let sup = supervised_depth_loss_t(&mut tape, disp, gt, None)?;
        sup_sum = tape.add(sup_sum, sup);
        if cfg.smooth_on_composite {
            let sm = smoothness_t(&mut tape, disp, img)?;
            smooth_sum = tape.add(smooth_sum, sm);
        }
    }
    let n_syn = composites.len() as f32;
    let supervised = tape.scale(sup_sum, 1.0 / n_syn);
    let mut smooth = tape.scale(smooth_sum, 1.0 / n_syn);
    if !cfg.smooth_on_composite {
        // Alternative reading: smooth the real-sample prediction instead
        // (one extra trainable forward per real sample).
        let mut sm_sum = tape.scalar_const(0.0);
        for r in inputs.real {
            let img = image_leaf(&mut tape, r.target());
            let disp = nets.depth.forward(&mut tape, store, &mut bind, img)?;
            let sm = smoothness_t(&mut tape, disp, img)?;
            sm_sum = tape.add(sm_sum, sm);
        }
        smooth = tape.scale(sm_sum, 1.0 / inputs.real.len() as f32);
    }

    let sup_w = tape.add(d2c, supervised);
    let sm_w = tape.scale(smooth, cfg.gamma);
    let total = tape.add(sup_w, sm_w);
    tape.backward(total)?;

    let grads = Adam::collect_grads(&tape, &bind);
    opt1.step(&mut nets.store, &grads, cfg.grad_clip)?;

    Ok(optimizer1_loss(
        tape.scalar(d2c),
        tape.scalar(supervised),
        tape.scalar(smooth),
        cfg.gamma,
    ))
}

/// Unsupervised step: one optimizer-2 update from reprojection losses.
pub fn step_optimizer2(
    nets: &mut Networks,
    opt2: &mut Adam,
    real_batch: &[RealSample],
    cfg: &TrainConfig,
    phases: &mut PhaseLog,
) -> Result<LossBreakdown> {
    if real_batch.is_empty() {
        return Err(Error::InvalidInput(
            "unsupervised step needs at least one real sample".into(),
        ));
    }
    phases.push("optimize_unsupervised");
    let mode = if cfg.utsf {
        UnsupervisedLossMode::Utsf
    } else {
        UnsupervisedLossMode::MinReprojection
    };

    let mut tape = Tape::new();
    let store = &nets.store;
    let mut bind = Binding::new(true);

    let mut data_sum = tape.scalar_const(0.0);
    let mut reg_sum = tape.scalar_const(0.0);
    let mut smooth_sum = tape.scalar_const(0.0);
    let mut sky_sum = tape.scalar_const(0.0);

    for sample in real_batch {
        let k = &sample.intrinsics;
        let target = image_leaf(&mut tape, sample.target());
        let prev = image_leaf(&mut tape, &sample.frames[0]);
        let next = image_leaf(&mut tape, &sample.frames[2]);
        let stereo = image_leaf(&mut tape, &sample.stereo);

        let disp = nets.depth.forward(&mut tape, store, &mut bind, target)?;
        let depth = disp_to_depth_t(&mut tape, disp, cfg.min_depth, cfg.max_depth);

        let pose_prev = nets
            .pose
            .forward(&mut tape, store, &mut bind, target, prev)?;
        let pose_next = nets
            .pose
            .forward(&mut tape, store, &mut bind, target, next)?;
        let pose_stereo = PoseVars::constant(&mut tape, &sample.stereo_pose);

        let w_prev = reproject_t(&mut tape, &sample.frames[0], depth, &pose_prev.pose, k);
        let w_next = reproject_t(&mut tape, &sample.frames[2], depth, &pose_next.pose, k);
        let w_stereo = reproject_t(&mut tape, &sample.stereo, depth, &pose_stereo, k);

        let pe_prev = photometric_error_t(&mut tape, w_prev.image, target)?;
        let pe_next = photometric_error_t(&mut tape, w_next.image, target)?;
        let pe_stereo = photometric_error_t(&mut tape, w_stereo.image, target)?;

        // Optional Eq.-8 style mask from the current warps (no gradient).
        let mu = if cfg.auto_mask {
            let (h, w) = (cfg.height, cfg.width);
            let to_grid = |v: Var, t: &Tape| Grid::new(h, w, t.data(v).to_vec()).unwrap();
            let warped_pe = vec![
                to_grid(pe_prev, &tape),
                to_grid(pe_next, &tape),
                to_grid(pe_stereo, &tape),
            ];
            let mut raw_pe = Vec::new();
            for img in [&sample.frames[0], &sample.frames[2], &sample.stereo] {
                let iv = image_leaf(&mut tape, img);
                let pe = photometric_error_t(&mut tape, iv, target)?;
                raw_pe.push(to_grid(pe, &tape));
            }
            Some(auto_mask_from_pe(&warped_pe, &raw_pe)?)
        } else {
            None
        };

        let (data, raw_reg) = match mode {
            UnsupervisedLossMode::Utsf => {
                let u_prev =
                    nets.unc
                        .forward(&mut tape, store, &mut bind, &nets.pose, prev, target)?;
                let u_next =
                    nets.unc
                        .forward(&mut tape, store, &mut bind, &nets.pose, next, target)?;
                // Domain representatives: (target, target) for temporal,
                // (stereo, target) for spatial.
                let u_tau =
                    nets.unc
                        .forward(&mut tape, store, &mut bind, &nets.pose, target, target)?;
                let u_s =
                    nets.unc
                        .forward(&mut tape, store, &mut bind, &nets.pose, stereo, target)?;

                // Joint validity: a pixel participates only where every
                // warp landed inside its source.
                let mut joint = Grid::filled(cfg.height, cfg.width, 1.0);
                for v in [&w_prev.validity, &w_next.validity, &w_stereo.validity] {
                    for i in 0..joint.data.len() {
                        joint.data[i] *= v.data[i];
                    }
                }
                if let Some(m) = &mu {
                    for i in 0..joint.data.len() {
                        joint.data[i] *= m.data[i];
                    }
                }
                let fused = utsf_loss_t(
                    &mut tape,
                    [pe_prev, pe_next],
                    pe_stereo,
                    [u_prev, u_next],
                    [u_tau, u_s],
                    cfg.alpha,
                    Some(&joint),
                );
                (fused.total, Some(fused.raw_reg))
            }
            UnsupervisedLossMode::MinReprojection => {
                let (min_pe, mut any_valid) = min_over_frames_t(
                    &mut tape,
                    &[
                        (pe_prev, &w_prev.validity),
                        (pe_next, &w_next.validity),
                        (pe_stereo, &w_stereo.validity),
                    ],
                );
                if let Some(m) = &mu {
                    for i in 0..any_valid.data.len() {
                        any_valid.data[i] *= m.data[i];
                    }
                }
                let data = masked_mean_t(&mut tape, min_pe, Some(&any_valid));
                (data, None)
            }
        };
        data_sum = tape.add(data_sum, data);
        if let Some(r) = raw_reg {
            reg_sum = tape.add(reg_sum, r);
        }

        let sm = smoothness_t(&mut tape, disp, target)?;
        smooth_sum = tape.add(smooth_sum, sm);

        if cfg.sky_loss {
            if let Some(mask) = &sample.sky_mask {
                let sky = sky_regularization_t(&mut tape, disp, mask)?;
                sky_sum = tape.add(sky_sum, sky);
            }
        }
    }

    let n = real_batch.len() as f32;
    let fused = tape.scale(data_sum, 1.0 / n);
    let smooth = tape.scale(smooth_sum, 1.0 / n);
    let sky = tape.scale(sky_sum, 1.0 / n);
    let reg = tape.scale(reg_sum, 1.0 / n);

    let sm_w = tape.scale(smooth, cfg.beta);
    let sky_w = tape.scale(sky, cfg.gamma);
    let a = tape.add(fused, sm_w);
    let total = tape.add(a, sky_w);
    tape.backward(total)?;

    let grads = Adam::collect_grads(&tape, &bind);
    opt2.step(&mut nets.store, &grads, cfg.grad_clip)?;

    let mut breakdown = optimizer2_loss(
        tape.scalar(fused),
        tape.scalar(smooth),
        tape.scalar(sky),
        cfg.beta,
        cfg.gamma,
    );
    breakdown.uncertainty_reg = tape.scalar(reg);
    breakdown.alpha = cfg.alpha;
    Ok(breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_toy_scene_full, ColorDomain, ToySceneSpec};
    use crate::models::{Networks, OPT1_PREFIXES, OPT2_PREFIXES};

    fn toy_setup(seed: u64) -> (Networks, TrainConfig, RealSample, SyntheticSample) {
        let mut cfg = TrainConfig::default();
        cfg.height = 32;
        cfg.width = 64;
        cfg.seed = seed;
        let nets = Networks::build(&cfg.network_config(), seed, true).unwrap();
        let spec = ToySceneSpec {
            color_domain: ColorDomain::RealA,
            ..ToySceneSpec::new(seed, 32, 64)
        };
        let scene = generate_toy_scene_full(&spec).unwrap();
        (nets, cfg, scene.real, scene.syn)
    }

    #[test]
    fn step1_updates_only_depth_and_color() {
        let (mut nets, cfg, real, syn) = toy_setup(201);
        let before: Vec<(String, Vec<f32>)> = nets
            .store
            .ids()
            .map(|id| {
                let e = nets.store.get(id);
                (e.name.clone(), e.data.clone())
            })
            .collect();
        let mut opt1 = Adam::new(&nets.store, &OPT1_PREFIXES, 1e-3, 0.9, 0.999);
        let mut rng = Stream::seed_from(7);
        let mut phases = PhaseLog::default();
        let bd = step_optimizer1(
            &mut nets,
            &mut opt1,
            Step1Inputs {
                syn: &[syn.clone()],
                real: &[real.clone()],
            },
            &cfg,
            &mut rng,
            &mut phases,
        )
        .unwrap();
        assert!(bd.total.is_finite());
        assert_eq!(
            phases.0,
            vec!["infer_frozen", "composite", "optimize_supervised"]
        );

        let mut depth_changed = false;
        let mut color_changed = false;
        for (id, (name, old)) in nets.store.ids().zip(before.iter()) {
            let now = &nets.store.get(id).data;
            let changed = now != old;
            if name.starts_with("pose.") || name.starts_with("unc.") {
                assert!(!changed, "step 1 must not touch {name}");
            }
            if changed && name.starts_with("depth.") {
                depth_changed = true;
            }
            if changed && name.starts_with("color.") {
                color_changed = true;
            }
        }
        assert!(depth_changed, "depth net should move");
        assert!(color_changed, "color net should move");
    }

    #[test]
    fn step2_updates_only_depth_pose_uncertainty() {
        let (mut nets, cfg, real, _) = toy_setup(202);
        let before: Vec<(String, Vec<f32>)> = nets
            .store
            .ids()
            .map(|id| {
                let e = nets.store.get(id);
                (e.name.clone(), e.data.clone())
            })
            .collect();
        let mut opt2 = Adam::new(&nets.store, &OPT2_PREFIXES, 1e-3, 0.9, 0.999);
        let mut phases = PhaseLog::default();
        let bd =
            step_optimizer2(&mut nets, &mut opt2, &[real.clone()], &cfg, &mut phases).unwrap();
        assert!(bd.total.is_finite());
        assert!(bd.photometric >= 0.0);

        let mut pose_changed = false;
        let mut unc_changed = false;
        for (id, (name, old)) in nets.store.ids().zip(before.iter()) {
            let now = &nets.store.get(id).data;
            let changed = now != old;
            if name.starts_with("color.") {
                assert!(!changed, "step 2 must not touch {name}");
            }
            if changed && name.starts_with("pose.") {
                pose_changed = true;
            }
            if changed && name.starts_with("unc.") {
                unc_changed = true;
            }
        }
        assert!(pose_changed);
        assert!(unc_changed);
    }

    #[test]
    fn step2_min_reprojection_baseline_runs() {
        let (mut nets, mut cfg, real, _) = toy_setup(203);
        cfg.utsf = false;
        cfg.auto_mask = true;
        let mut opt2 = Adam::new(&nets.store, &OPT2_PREFIXES, 1e-3, 0.9, 0.999);
        let mut phases = PhaseLog::default();
        let bd = step_optimizer2(&mut nets, &mut opt2, &[real], &cfg, &mut phases).unwrap();
        assert!(bd.total.is_finite());
        assert_eq!(bd.uncertainty_reg, 0.0, "no uncertainty term in baseline");
    }

    #[test]
    fn step1_without_cutmix_routes_raw_synthetic() {
        let (mut nets, mut cfg, real, syn) = toy_setup(204);
        cfg.cutmix = false;
        let mut opt1 = Adam::new(&nets.store, &OPT1_PREFIXES, 1e-3, 0.9, 0.999);
        let mut rng = Stream::seed_from(8);
        let mut phases = PhaseLog::default();
        let bd = step_optimizer1(
            &mut nets,
            &mut opt1,
            Step1Inputs {
                syn: &[syn],
                real: &[real],
            },
            &cfg,
            &mut rng,
            &mut phases,
        )
        .unwrap();
        assert!(bd.total.is_finite());
    }

    #[test]
    fn supervised_loss_decreases_over_repeated_steps() {
        let (mut nets, cfg, real, syn) = toy_setup(205);
        let mut opt1 = Adam::new(&nets.store, &OPT1_PREFIXES, 2e-3, 0.9, 0.999);
        let mut rng = Stream::seed_from(9);
        let mut first = 0.0;
        let mut last = 0.0;
        for i in 0..30 {
            let mut phases = PhaseLog::default();
            let bd = step_optimizer1(
                &mut nets,
                &mut opt1,
                Step1Inputs {
                    syn: &[syn.clone()],
                    real: &[real.clone()],
                },
                &cfg,
                &mut rng,
                &mut phases,
            )
            .unwrap();
            if i == 0 {
                first = bd.total;
            }
            last = bd.total;
        }
        assert!(
            last < first,
            "supervised loss should decrease: {first} -> {last}"
        );
    }
}
