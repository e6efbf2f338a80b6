//! Central finite-difference verification of tape gradients.
//!
//! `check` rebuilds the forward pass from scratch for every probe, so the
//! numeric reference never shares state with the analytic path it is
//! checking.

use super::{Tape, Var};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug)]
pub struct Config {
    /// Central-difference step.
    pub step: f32,
    /// Relative tolerance.
    pub rtol: f32,
    /// Absolute floor below which disagreement is ignored.
    pub atol: f32,
    /// Probes drawn per input tensor.
    pub probes_per_input: usize,
    /// Richardson-extrapolate the central difference from steps h and h/2,
    /// cancelling the O(h^2) truncation term. Useful for objectives with
    /// strong curvature (rational terms like SSIM).
    pub richardson: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            step: 1e-3,
            rtol: 1e-2,
            atol: 1e-5,
            probes_per_input: 24,
            richardson: false,
        }
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub checked: usize,
    pub passed: usize,
    pub worst_rel: f64,
    pub worst_detail: String,
}

impl Report {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{}/{} probes passed (worst rel err {:.3e}{})",
            self.passed, self.checked, self.worst_rel, self.worst_detail
        )
    }

    pub fn merge(&mut self, other: &Report) {
        self.checked += other.checked;
        self.passed += other.passed;
        if other.worst_rel > self.worst_rel {
            self.worst_rel = other.worst_rel;
            self.worst_detail = other.worst_detail.clone();
        }
    }
}

/// Compare analytic gradients of a scalar-valued builder against central
/// finite differences at randomly probed coordinates of each input.
///
/// `build` receives one leaf per `(shape, data)` input, in order, and must
/// return the scalar output node.
pub fn check(
    inputs: &[(Vec<usize>, Vec<f32>)],
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    cfg: &Config,
    rng: &mut Stream,
) -> Report {
    let eval = |values: &[Vec<f32>]| -> f32 {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = inputs
            .iter()
            .zip(values.iter())
            .map(|((shape, _), data)| tape.leaf(shape, data.clone(), false))
            .collect();
        let out = build(&mut tape, &leaves);
        tape.scalar(out)
    };

    // One analytic pass with gradients enabled.
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs
        .iter()
        .map(|(shape, data)| tape.leaf(shape, data.clone(), true))
        .collect();
    let out = build(&mut tape, &leaves);
    tape.backward(out).expect("gradcheck backward");
    let analytic: Vec<Vec<f32>> = leaves
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.data(v).len()])
        })
        .collect();

    let base: Vec<Vec<f32>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let mut report = Report::default();

    for (k, (_, data)) in inputs.iter().enumerate() {
        let n = data.len();
        for _ in 0..cfg.probes_per_input.min(n * 4) {
            let i = rng.below(n);
            let central = |h: f32| -> f64 {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[k][i] += h;
                minus[k][i] -= h;
                // Use the realized f32 step to cancel quantization of x +/- h.
                let denom = (plus[k][i] - minus[k][i]) as f64;
                (eval(&plus) as f64 - eval(&minus) as f64) / denom
            };
            let fd = if cfg.richardson {
                let coarse = central(cfg.step);
                let fine = central(cfg.step * 0.5);
                (4.0 * fine - coarse) / 3.0
            } else {
                central(cfg.step)
            };
            let an = analytic[k][i] as f64;
            let err = (fd - an).abs();
            let scale = fd.abs().max(an.abs());
            let rel = if scale > 0.0 { err / scale } else { 0.0 };
            let ok = err <= cfg.atol as f64 || rel <= cfg.rtol as f64;
            report.checked += 1;
            if ok {
                report.passed += 1;
            }
            if rel > report.worst_rel && err > cfg.atol as f64 {
                report.worst_rel = rel;
                report.worst_detail =
                    format!(", input {k} coord {i}: fd={fd:.6e} analytic={an:.6e}");
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_wrong_gradient() {
        // mean(x^2) built with a deliberately wrong backward: use stop_grad
        // on one branch so the analytic gradient is half the true one.
        let mut rng = Stream::seed_from(9);
        let xs: Vec<f32> = (0..8).map(|_| rng.uniform_in(0.5, 1.5)).collect();
        let report = check(
            &[(vec![8], xs)],
            |t, leaves| {
                let x = leaves[0];
                let frozen = t.stop_grad(x);
                let y = t.mul(x, frozen);
                t.mean(y)
            },
            &Config::default(),
            &mut rng,
        );
        assert!(report.pass_fraction() < 0.5, "{}", report.summary());
    }

    #[test]
    fn passes_a_correct_gradient() {
        let mut rng = Stream::seed_from(10);
        let xs: Vec<f32> = (0..8).map(|_| rng.uniform_in(0.5, 1.5)).collect();
        let report = check(
            &[(vec![8], xs)],
            |t, leaves| {
                let y = t.mul(leaves[0], leaves[0]);
                t.mean(y)
            },
            &Config::default(),
            &mut rng,
        );
        assert_eq!(report.passed, report.checked, "{}", report.summary());
    }
}
