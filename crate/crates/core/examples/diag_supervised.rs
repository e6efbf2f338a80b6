//! Isolated probe: can the depth net fit dense synthetic disparity under
//! the affine-invariant loss alone?

use depthforge::data::{generate_toy_scene_full, ColorDomain, ToySceneSpec};
use depthforge::geometry::depth_to_disp;
use depthforge::losses::{smoothness_t, supervised_depth_loss_t};
use depthforge::models::{Binding, Networks, OPT1_PREFIXES};
use depthforge::tensor::Tape;
use depthforge::training::{Adam, TrainConfig};

fn main() {
    let iters: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let lr: f32 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-4);
    let n_scenes: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);

    let cfg = TrainConfig {
        height: 64,
        width: 128,
        min_depth: 2.0,
        seed: 42,
        lr,
        ..TrainConfig::default()
    };
    let scenes: Vec<_> = (0..n_scenes)
        .map(|i| {
            let spec = ToySceneSpec {
                color_domain: ColorDomain::Synthetic,
                ..ToySceneSpec::new(2000 + i as u64, cfg.height, cfg.width)
            };
            generate_toy_scene_full(&spec).unwrap()
        })
        .collect();

    let mut nets = Networks::build(&cfg.network_config(), cfg.seed, true).unwrap();
    let mut opt = Adam::new(&nets.store, &OPT1_PREFIXES, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);

    for it in 0..iters {
        let scene = &scenes[it % n_scenes];
        let gt_disp = depth_to_disp(&scene.syn.depth, cfg.min_depth, cfg.max_depth).unwrap();
        let mut tape = Tape::new();
        let mut bind = Binding::new(true);
        let img = tape.constant(&scene.syn.color.shape(), scene.syn.color.data.clone());
        let disp = nets
            .depth
            .forward(&mut tape, &nets.store, &mut bind, img)
            .unwrap();
        let gt = tape.constant(&[1, cfg.height, cfg.width], gt_disp.grid().data.clone());
        let sup = supervised_depth_loss_t(&mut tape, disp, gt, None).unwrap();
        let sm = smoothness_t(&mut tape, disp, img).unwrap();
        let smw = tape.scale(sm, cfg.gamma);
        let total = tape.add(sup, smw);
        tape.backward(total).unwrap();
        let grads = Adam::collect_grads(&tape, &bind);
        opt.step(&mut nets.store, &grads, 0.0).unwrap();
        if (it + 1) % 25 == 0 || it == 0 {
            // Plain L1 on raw disparity as an absolute-progress readout.
            let d = tape.data(disp);
            let l1: f32 = d
                .iter()
                .zip(gt_disp.grid().data.iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f32>()
                / d.len() as f32;
            println!(
                "it {:4}  sup {:.4}  raw_l1 {:.4}  disp mean {:.4}",
                it + 1,
                tape.scalar(sup),
                l1,
                d.iter().sum::<f32>() / d.len() as f32
            );
        }
    }
}
