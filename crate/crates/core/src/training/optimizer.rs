//! Adam over a prefix-selected subset of the parameter store, with an
//! optional global-norm gradient clip. Moment buffers live here and are
//! serialized into checkpoints for exact resumes.

use crate::models::{Binding, ParamId, ParamStore};
use crate::tensor::Tape;
use crate::{Error, Result};
use std::collections::HashMap;

pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub t: u64,
    params: Vec<ParamId>,
    owned: Vec<bool>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    /// Optimizer over every parameter whose name starts with one of
    /// `prefixes`.
    pub fn new(store: &ParamStore, prefixes: &[&str], lr: f32, beta1: f32, beta2: f32) -> Adam {
        let params = store.ids_with_prefixes(prefixes);
        let mut owned = vec![false; store.len()];
        for &id in &params {
            owned[id.0] = true;
        }
        let m = params
            .iter()
            .map(|&id| vec![0.0; store.get(id).data.len()])
            .collect();
        let v = params
            .iter()
            .map(|&id| vec![0.0; store.get(id).data.len()])
            .collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            params,
            owned,
            m,
            v,
        }
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.params
    }

    /// Gather gradients of bound parameters from a backpropagated tape.
    /// Parameters bound but unreached by the loss get zero gradients.
    pub fn collect_grads(tape: &Tape, binding: &Binding) -> Vec<(ParamId, Vec<f32>)> {
        binding
            .bound()
            .into_iter()
            .map(|(id, var)| {
                let g = tape
                    .grad(var)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; tape.data(var).len()]);
                (id, g)
            })
            .collect()
    }

    /// One update. Every gradient must belong to this optimizer's parameter
    /// set and appear at most once; parameters without a gradient are left
    /// untouched (their moments still decay only when updated, i.e. not at
    /// all here).
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[(ParamId, Vec<f32>)],
        grad_clip: f32,
    ) -> Result<()> {
        let mut seen: HashMap<usize, ()> = HashMap::new();
        for (id, g) in grads {
            if id.0 >= self.owned.len() || !self.owned[id.0] {
                return Err(Error::InvalidInput(format!(
                    "optimizer does not own parameter '{}'",
                    store.get(*id).name
                )));
            }
            if seen.insert(id.0, ()).is_some() {
                return Err(Error::InvalidInput(format!(
                    "parameter '{}' appears twice in one update",
                    store.get(*id).name
                )));
            }
            if g.len() != store.get(*id).data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient size for '{}'",
                    store.get(*id).name
                )));
            }
        }

        // Optional global-norm clip across the whole update.
        let mut scale = 1.0f32;
        if grad_clip > 0.0 {
            let norm_sq: f64 = grads
                .iter()
                .flat_map(|(_, g)| g.iter())
                .map(|&v| (v as f64) * (v as f64))
                .sum();
            let norm = norm_sq.sqrt() as f32;
            if norm > grad_clip {
                scale = grad_clip / norm;
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads {
            let slot = self
                .params
                .iter()
                .position(|p| p == id)
                .expect("ownership checked above");
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let data = &mut store.get_mut(*id).data;
            for i in 0..data.len() {
                let gi = g[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment buffers by parameter name, for checkpointing.
    pub fn state(&self, store: &ParamStore) -> Vec<(String, Vec<f32>, Vec<f32>)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                (
                    store.get(id).name.clone(),
                    self.m[i].clone(),
                    self.v[i].clone(),
                )
            })
            .collect()
    }

    /// Restore moment buffers saved by [`Adam::state`].
    pub fn restore(
        &mut self,
        store: &ParamStore,
        t: u64,
        state: &[(String, Vec<f32>, Vec<f32>)],
    ) -> Result<()> {
        if state.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state has {} entries, expected {}",
                state.len(),
                self.params.len()
            )));
        }
        for (name, m, v) in state {
            let id = store
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter '{name}'")))?;
            let slot = self
                .params
                .iter()
                .position(|p| *p == id)
                .ok_or_else(|| Error::Checkpoint(format!("'{name}' not owned")))?;
            if m.len() != self.m[slot].len() || v.len() != self.v[slot].len() {
                return Err(Error::Checkpoint(format!("moment size for '{name}'")));
            }
            self.m[slot] = m.clone();
            self.v[slot] = v.clone();
        }
        self.t = t;
        Ok(())
    }
}
