//! Named trainable tensors with per-group learning rates, adaptive-moment
//! update state, and checkpoint snapshots.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fmath;
use crate::matrix::Matrix;

/// Learning-rate group: the transformer layers train at a reduced rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Base,
    Transformer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
    pub group: ParamGroup,
    grad: Matrix,
    adam_m: Matrix,
    adam_v: Matrix,
}

/// Flat store of named parameters. Creation order is fixed by the model
/// builder, so iteration (and therefore training) is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    adam_step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Matrix, group: ParamGroup) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let (r, c) = value.shape();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            value,
            group,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.values().len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for v in e.grad.values_mut() {
                *v = 0.0;
            }
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Matrix) {
        self.entries[id.0].grad.add_assign(grad);
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].grad
    }

    /// One adaptive-moment update with bias correction. `lr_for` maps a
    /// parameter group to its current learning rate.
    pub fn adam_step(&mut self, lr_base: f64, lr_transformer: f64, hp: &AdamHyperParams) {
        self.adam_step += 1;
        let t = self.adam_step as f64;
        let bc1 = 1.0 - fmath::powi(hp.beta1, self.adam_step.min(u32::MAX as u64) as u32);
        let bc2 = 1.0 - fmath::powi(hp.beta2, self.adam_step.min(u32::MAX as u64) as u32);
        let _ = t;
        for e in &mut self.entries {
            let lr = match e.group {
                ParamGroup::Base => lr_base,
                ParamGroup::Transformer => lr_transformer,
            };
            let (m, v, g, x) = (
                e.adam_m.values_mut(),
                e.adam_v.values_mut(),
                e.grad.values(),
                e.value.values_mut(),
            );
            for i in 0..g.len() {
                m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
                v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                x[i] -= lr * m_hat / (fmath::sqrt(v_hat) + hp.eps);
            }
        }
    }

    /// Scale all gradients down so their global L2 norm is at most
    /// `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let mut sum_sq = 0.0;
        for e in &self.entries {
            for v in e.grad.values() {
                sum_sq += v * v;
            }
        }
        let norm = fmath::sqrt(sum_sq);
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for e in &mut self.entries {
                for v in e.grad.values_mut() {
                    *v *= scale;
                }
            }
        }
    }

    /// FNV-1a over the parameter values; used for frozen-provider and
    /// mutation checks.
    pub fn checksum(&self) -> u64 {
        let mut hash = fnv_init();
        for e in &self.entries {
            hash = fnv_bytes(hash, e.name.as_bytes());
            for v in e.value.values() {
                hash = fnv_bytes(hash, &v.to_le_bytes());
            }
        }
        hash
    }

    /// Named value snapshot (checkpoint payload).
    pub fn snapshot(&self) -> Vec<(String, Matrix)> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.clone())).collect()
    }

    /// Overwrite values from a snapshot; shapes and names must match the
    /// store built from the same configuration.
    pub fn restore(&mut self, snapshot: &[(String, Matrix)]) -> Result<(), String> {
        if snapshot.len() != self.entries.len() {
            return Err("parameter count mismatch".to_string());
        }
        for (e, (name, value)) in self.entries.iter_mut().zip(snapshot) {
            if &e.name != name {
                return Err(alloc::format!("parameter name mismatch: {} vs {}", e.name, name));
            }
            if e.value.shape() != value.shape() {
                return Err(alloc::format!("parameter shape mismatch for {}", e.name));
            }
            e.value = value.clone();
        }
        Ok(())
    }
}

/// Binds store parameters to graph leaves, one leaf per parameter per
/// forward pass, and routes gradients back after backward.
pub struct GraphBinder {
    bound: Vec<Option<crate::autodiff::NodeId>>,
}

impl GraphBinder {
    pub fn new(store: &ParamStore) -> Self {
        Self { bound: vec![None; store.len()] }
    }

    /// Graph leaf for a parameter, created on first use.
    pub fn node(
        &mut self,
        g: &mut crate::autodiff::Graph,
        store: &ParamStore,
        id: ParamId,
    ) -> crate::autodiff::NodeId {
        if let Some(node) = self.bound[id.0] {
            return node;
        }
        let node = g.param(store.value(id).clone());
        self.bound[id.0] = Some(node);
        node
    }

    /// Accumulate the gradients of every bound parameter into the store,
    /// scaled by `scale`.
    pub fn accumulate(
        &self,
        grads: &crate::autodiff::Gradients,
        store: &mut ParamStore,
        scale: f64,
    ) {
        for (i, bound) in self.bound.iter().enumerate() {
            if let Some(node) = bound {
                if let Some(grad) = grads.get(*node) {
                    store.accumulate_grad(ParamId(i), &grad.scale(scale));
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyperParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyperParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Seeded uniform init scaled by fan-in/fan-out (Glorot-style).
pub fn glorot_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = fmath::sqrt(6.0 / (rows + cols) as f64);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn zeros_row(cols: usize) -> Matrix {
    Matrix::zeros(1, cols)
}

pub fn ones_row(cols: usize) -> Matrix {
    Matrix::from_vec(1, cols, vec![1.0; cols])
}

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream))
}

pub const fn fnv_init() -> u64 {
    0xcbf2_9ce4_8422_2325
}

pub fn fnv_bytes(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}
