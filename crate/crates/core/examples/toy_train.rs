//! Minimal end-to-end training demo on generated toy scenes.
//!
//! Run with: cargo run -p depthforge --example toy_train --release

use depthforge::data::{generate_toy_scene_full, ColorDomain, ToySceneSpec};
use depthforge::models::{Networks, OPT1_PREFIXES, OPT2_PREFIXES};
use depthforge::training::{
    step_optimizer1, step_optimizer2, validate, Adam, InMemoryData, PhaseLog, Step1Inputs,
    TrainConfig,
};
use depthforge::rng::Stream;

fn main() {
    let n_train = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(12usize);
    let iters = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(400usize);

    let cfg = TrainConfig {
        height: 64,
        width: 128,
        seed: 42,
        min_depth: 2.0,
        ..TrainConfig::default()
    };

    let mut data = InMemoryData {
        real_train: Vec::new(),
        syn_train: Vec::new(),
        val: Vec::new(),
    };
    for i in 0..n_train + 4 {
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

    let mut nets = Networks::build(&cfg.network_config(), cfg.seed, true).unwrap();
    let mut opt1 = Adam::new(&nets.store, &OPT1_PREFIXES, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut opt2 = Adam::new(&nets.store, &OPT2_PREFIXES, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut cutmix_rng = Stream::seed_from(cfg.seed).child(0x63757478);

    let t0 = std::time::Instant::now();
    for it in 0..iters {
        let r = it % data.real_train.len();
        let s = it % data.syn_train.len();
        let mut phases = PhaseLog::default();
        let bd1 = step_optimizer1(
            &mut nets,
            &mut opt1,
            Step1Inputs {
                syn: &data.syn_train[s..s + 1],
                real: &data.real_train[r..r + 1],
            },
            &cfg,
            &mut cutmix_rng,
            &mut phases,
        )
        .unwrap();
        let bd2 = step_optimizer2(
            &mut nets,
            &mut opt2,
            &data.real_train[r..r + 1],
            &cfg,
            &mut phases,
        )
        .unwrap();
        if (it + 1) % 50 == 0 || it == 0 {
            let report = validate(&nets, &data.val, &cfg).unwrap();
            println!(
                "iter {:4}  opt1 {:.4}  opt2 {:.4}  val abs_rel {:.4}  a1 {:.3}  ({:.0} ms/iter)",
                it + 1,
                bd1.total,
                bd2.total,
                report.abs_rel,
                report.a1,
                t0.elapsed().as_millis() as f64 / (it + 1) as f64
            );
        }
    }
}
