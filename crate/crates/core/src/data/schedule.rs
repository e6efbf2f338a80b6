//! Iteration planning: the real stream cycles for the configured number of
//! epochs while the synthetic stream is consumed once across the whole run,
//! pairing one real batch with one synthetic batch per iteration.

use crate::rng::Stream;
use crate::{Error, Result};

/// What to do when the synthetic stream runs dry before the run ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynExhaustedPolicy {
    /// Reshuffle the synthetic index and keep going (default).
    Reshuffle,
    /// Repeat the same shuffled order.
    Repeat,
}

/// One training iteration's data assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IterationStep {
    pub epoch: usize,
    pub real_indices: Vec<usize>,
    pub syn_indices: Vec<usize>,
}

/// The full, precomputed run plan. Deterministic in the seed.
#[derive(Clone, Debug)]
pub struct IterationPlan {
    pub steps: Vec<IterationStep>,
    pub iterations_per_epoch: usize,
    /// How many times the synthetic stream wrapped around.
    pub syn_wraps: usize,
}

/// Build the run plan pairing shuffled real batches with a once-through
/// synthetic stream.
#[allow(clippy::too_many_arguments)]
pub fn epoch_scheduler(
    real_len: usize,
    syn_len: usize,
    epochs: usize,
    batch_real: usize,
    batch_syn: usize,
    policy: SynExhaustedPolicy,
    seed: u64,
) -> Result<IterationPlan> {
    if real_len == 0 || syn_len == 0 {
        return Err(Error::InvalidInput(
            "scheduler needs nonempty real and synthetic streams".into(),
        ));
    }
    if batch_real == 0 || batch_syn == 0 || epochs == 0 {
        return Err(Error::InvalidInput(
            "batch sizes and epochs must be positive".into(),
        ));
    }
    if batch_real > real_len {
        return Err(Error::InvalidInput(format!(
            "real batch {batch_real} exceeds dataset size {real_len}"
        )));
    }
    let iterations_per_epoch = real_len / batch_real;
    let root = Stream::seed_from(seed);

    let mut syn_order: Vec<usize> = (0..syn_len).collect();
    let mut syn_rng = root.child(0x73796e);
    syn_rng.shuffle(&mut syn_order);
    let mut syn_cursor = 0usize;
    let mut syn_wraps = 0usize;

    let mut steps = Vec::with_capacity(epochs * iterations_per_epoch);
    for epoch in 0..epochs {
        let mut real_order: Vec<usize> = (0..real_len).collect();
        let mut epoch_rng = root.child(0x7265616c ^ (epoch as u64) << 16);
        epoch_rng.shuffle(&mut real_order);
        for it in 0..iterations_per_epoch {
            let real_indices = real_order[it * batch_real..(it + 1) * batch_real].to_vec();
            let mut syn_indices = Vec::with_capacity(batch_syn);
            for _ in 0..batch_syn {
                if syn_cursor == syn_order.len() {
                    syn_wraps += 1;
                    match policy {
                        SynExhaustedPolicy::Reshuffle => syn_rng.shuffle(&mut syn_order),
                        SynExhaustedPolicy::Repeat => {}
                    }
                    syn_cursor = 0;
                }
                syn_indices.push(syn_order[syn_cursor]);
                syn_cursor += 1;
            }
            steps.push(IterationStep {
                epoch,
                real_indices,
                syn_indices,
            });
        }
    }
    Ok(IterationPlan {
        steps,
        iterations_per_epoch,
        syn_wraps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_stream_consumed_exactly_once_when_sized() {
        // real_len = 100 over 5 epochs with batch 1 gives 500 iterations;
        // a synthetic stream of 500 is consumed exactly once.
        let plan = epoch_scheduler(100, 500, 5, 1, 1, SynExhaustedPolicy::Reshuffle, 3).unwrap();
        assert_eq!(plan.steps.len(), 500);
        assert_eq!(plan.syn_wraps, 0);
        let mut seen: Vec<usize> = plan
            .steps
            .iter()
            .flat_map(|s| s.syn_indices.iter().copied())
            .collect();
        seen.sort_unstable();
        let expect: Vec<usize> = (0..500).collect();
        assert_eq!(seen, expect, "every synthetic sample used exactly once");
    }

    #[test]
    fn short_synthetic_stream_reshuffles_and_continues() {
        let plan = epoch_scheduler(10, 7, 3, 1, 1, SynExhaustedPolicy::Reshuffle, 5).unwrap();
        assert_eq!(plan.steps.len(), 30);
        assert!(plan.syn_wraps >= 3);
        for s in &plan.steps {
            assert!(s.syn_indices[0] < 7);
        }
    }

    #[test]
    fn plan_is_deterministic_and_epochs_reshuffle_real() {
        let a = epoch_scheduler(20, 40, 2, 2, 1, SynExhaustedPolicy::Reshuffle, 9).unwrap();
        let b = epoch_scheduler(20, 40, 2, 2, 1, SynExhaustedPolicy::Reshuffle, 9).unwrap();
        assert_eq!(a.steps, b.steps);

        let e0: Vec<usize> = a.steps[..10]
            .iter()
            .flat_map(|s| s.real_indices.clone())
            .collect();
        let e1: Vec<usize> = a.steps[10..]
            .iter()
            .flat_map(|s| s.real_indices.clone())
            .collect();
        assert_ne!(e0, e1, "epoch orders should differ");
        let mut s0 = e0.clone();
        s0.sort_unstable();
        assert_eq!(s0, (0..20).collect::<Vec<_>>());
        // Every iteration pairs one real batch with one synthetic batch.
        for s in &a.steps {
            assert_eq!(s.real_indices.len(), 2);
            assert_eq!(s.syn_indices.len(), 1);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(epoch_scheduler(0, 5, 1, 1, 1, SynExhaustedPolicy::Reshuffle, 1).is_err());
        assert!(epoch_scheduler(5, 0, 1, 1, 1, SynExhaustedPolicy::Reshuffle, 1).is_err());
        assert!(epoch_scheduler(5, 5, 1, 9, 1, SynExhaustedPolicy::Reshuffle, 1).is_err());
    }
}
