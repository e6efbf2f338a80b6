//! Diagnostic training probe: prints loss components, disparity statistics
//! and pose magnitudes while training on toy scenes.

use depthforge::data::{generate_toy_scene_full, ColorDomain, ToySceneSpec};
use depthforge::geometry::diff::PoseVars;
use depthforge::models::{Binding, Networks, OPT1_PREFIXES, OPT2_PREFIXES};
use depthforge::rng::Stream;
use depthforge::tensor::Tape;
use depthforge::training::{
    predict_disparity, step_optimizer1, step_optimizer2, validate, Adam, InMemoryData, PhaseLog,
    Step1Inputs, TrainConfig,
};

fn dump_gray(path: &str, g: &depthforge::geometry::Grid, lo: f32, hi: f32) {
    let mut img = depthforge::geometry::Image::zeros(3, g.height, g.width);
    for y in 0..g.height {
        for x in 0..g.width {
            let v = ((g.at(y, x) - lo) / (hi - lo)).clamp(0.0, 1.0);
            for c in 0..3 {
                img.set(c, y, x, v);
            }
        }
    }
    depthforge::data::io::write_rgb8(std::path::Path::new(path), &img).unwrap();
}

fn main() {
    let iters: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let cfg = TrainConfig {
        height: 64,
        width: 128,
        seed: 42,
        min_depth: 2.0,
        lr: 3e-4,
        cutmix: false,
        ..TrainConfig::default()
    };
    let n_train = 10usize;
    let mut data = InMemoryData {
        real_train: Vec::new(),
        syn_train: Vec::new(),
        val: Vec::new(),
    };
    for i in 0..n_train + 2 {
        let spec = ToySceneSpec {
            color_domain: ColorDomain::RealA,
            ..ToySceneSpec::new(1000 + i as u64, cfg.height, cfg.width)
        };
        let scene = generate_toy_scene_full(&spec).unwrap();
        if i < n_train {
            data.real_train.push(scene.real);
            data.syn_train.push(scene.syn);
        } else {
            data.val.push((scene.real, scene.real_gt_depth));
        }
    }
    // Ground-truth disparity stats of the first val scene.
    let gt = &data.val[0].1;
    let gtd: Vec<f32> = gt
        .grid()
        .data
        .iter()
        .map(|&z| ((1.0 / z) - 1.0 / 100.0) / (1.0 / 2.0 - 1.0 / 100.0))
        .collect();
    println!(
        "gt disp: min {:.5} max {:.5} mean {:.5}",
        gtd.iter().cloned().fold(f32::INFINITY, f32::min),
        gtd.iter().cloned().fold(0.0f32, f32::max),
        gtd.iter().sum::<f32>() / gtd.len() as f32
    );

    let mut nets = Networks::build(&cfg.network_config(), cfg.seed, true).unwrap();
    let mut opt1 = Adam::new(&nets.store, &OPT1_PREFIXES, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut opt2 = Adam::new(&nets.store, &OPT2_PREFIXES, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut cutmix_rng = Stream::seed_from(cfg.seed).child(0x63757478);

    for it in 0..iters {
        let r = it % n_train;
        let mut phases = PhaseLog::default();
        let bd1 = step_optimizer1(
            &mut nets,
            &mut opt1,
            Step1Inputs {
                syn: &data.syn_train[r..r + 1],
                real: &data.real_train[r..r + 1],
            },
            &cfg,
            &mut cutmix_rng,
            &mut phases,
        )
        .unwrap();
        let bd2 = step_optimizer2(&mut nets, &mut opt2, &data.real_train[r..r + 1], &cfg, &mut phases)
            .unwrap();

        if (it + 1) % 25 == 0 || it == 0 {
            let report = validate(&nets, &data.val, &cfg).unwrap();
            let disp = predict_disparity(&nets, data.val[0].0.target()).unwrap();
            let d = &disp.grid().data;
            let dmin = d.iter().cloned().fold(f32::INFINITY, f32::min);
            let dmax = d.iter().cloned().fold(0.0f32, f32::max);
            let dmean = d.iter().sum::<f32>() / d.len() as f32;

            // Pose translation for (target, next).
            let sample = &data.real_train[r];
            let mut tape = Tape::new();
            let mut bind = Binding::new(false);
            let tv = tape.constant(&sample.target().shape(), sample.target().data.clone());
            let nv = tape.constant(&sample.frames[2].shape(), sample.frames[2].data.clone());
            let pose = nets
                .pose
                .forward(&mut tape, &nets.store, &mut bind, tv, nv)
                .unwrap();
            let tr = tape.data(pose.translation).to_vec();
            let _ = PoseVars::constant(&mut tape, &sample.stereo_pose);

            // Region-wise error on the first validation scene after the
            // same median scaling the metric uses.
            let val_sample = &data.val[0].0;
            let gt0 = &data.val[0].1;
            let depth_pred = depthforge::geometry::disp_to_depth(&disp, cfg.min_depth, cfg.max_depth).unwrap();
            let all = depthforge::geometry::Grid::filled(cfg.height, cfg.width, 1.0);
            let (scaled, factor) = depthforge::evaluation::median_scale(&depth_pred, gt0, &all).unwrap();
            let sky_mask = val_sample.sky_mask.as_ref().unwrap();
            let mut sky_err = (0.0f64, 0.0f64);
            let mut obj_err = (0.0f64, 0.0f64);
            let mut sky_depth = (0.0f64, 0.0f64);
            for i in 0..gt0.grid().data.len() {
                let p = scaled.grid().data[i] as f64;
                let g = gt0.grid().data[i] as f64;
                let e = (p - g).abs() / g;
                if sky_mask.0.data[i] != 0.0 {
                    sky_err.0 += e;
                    sky_err.1 += 1.0;
                    sky_depth.0 += p;
                    sky_depth.1 += 1.0;
                } else {
                    obj_err.0 += e;
                    obj_err.1 += 1.0;
                }
            }
            if it + 1 == iters || (it + 1) % 100 == 0 {
                dump_gray(&format!("/tmp/diag_pred_{:04}.png", it + 1), disp.grid(), 0.0, 0.7);
                let gtd_grid = depthforge::geometry::depth_to_disp(gt0, cfg.min_depth, cfg.max_depth).unwrap();
                dump_gray("/tmp/diag_gt.png", gtd_grid.grid(), 0.0, 0.7);
            }
            println!(
                "it {:4} | d2c {:.4} sup {:.4} | photo {:.4} sm2 {:.4} sky {:.4} | disp {:.3}/{:.3}/{:.3} | t ({:.3},{:.3},{:.3}) | abs_rel {:.4} a1 {:.3} | sky_ar {:.3} obj_ar {:.3} skyZ {:.0} k {:.2}",
                it + 1,
                bd1.d2c, bd1.supervised,
                bd2.photometric, bd2.smoothness, bd2.sky,
                dmin, dmean, dmax,
                tr[0], tr[1], tr[2],
                report.abs_rel, report.a1,
                sky_err.0 / sky_err.1.max(1.0),
                obj_err.0 / obj_err.1.max(1.0),
                sky_depth.0 / sky_depth.1.max(1.0),
                factor,
            );
        }
    }
}
