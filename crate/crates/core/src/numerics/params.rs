//! Named parameter collections and deterministic initialization.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::numerics::fmath;
use crate::numerics::tape::{Gradients, Tape};
use crate::numerics::tensor::Tensor;

/// Ordered map from unique parameter name to tensor.
///
/// Iteration order is lexicographic by name, which makes checkpoints and
/// checksum comparisons deterministic.
#[derive(Debug, Clone)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
    rng_seed: u64,
}

impl ParamSet {
    pub fn new(rng_seed: u64) -> Self {
        ParamSet {
            entries: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Insert a tensor under a fresh name; duplicate names are rejected.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(CoreError::Contract(alloc::format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.entries.insert(name.into(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| CoreError::Contract(alloc::format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| CoreError::Contract(alloc::format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Lexicographic iteration over `(name, tensor)`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_params(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    /// Register every tensor as a gradient leaf on `tape`, replacing any
    /// stale handles from earlier tapes.
    pub fn watch_all(&mut self, tape: &mut Tape) {
        for t in self.entries.values_mut() {
            tape.watch(t);
        }
    }

    /// Copy accumulated gradients into each tensor's `grad` buffer. Leaves
    /// with no gradient flow receive zeros.
    pub fn write_gradients(&mut self, grads: &Gradients) {
        for t in self.entries.values_mut() {
            let g = t
                .node()
                .and_then(|n| grads.get(n))
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()]);
            t.set_grad(Some(g));
        }
    }

    pub fn zero_grads(&mut self) {
        for t in self.entries.values_mut() {
            t.set_grad(None);
        }
    }

    /// FNV-1a hash over names, shapes, and exact value bits; used by the
    /// determinism tests.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        };
        for (name, t) in &self.entries {
            eat(name.as_bytes());
            for &d in t.shape() {
                eat(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Flatten all parameter values in iteration order; pairs with
    /// [`ParamSet::load_flat`] in the finite-difference checker.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_params());
        for t in self.entries.values() {
            out.extend_from_slice(t.data());
        }
        out
    }
}

/// Initialization rule for one named parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    /// Uniform in `[-a, a]` with `a = sqrt(6 / (rows + cols))`.
    Uniform,
    Zeros,
    Ones,
    Const(f64),
}

/// Declarative description of one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: ParamInit,
}

impl ParamSpec {
    pub fn new(name: String, rows: usize, cols: usize, init: ParamInit) -> Self {
        ParamSpec {
            name,
            rows,
            cols,
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Materialize a parameter set from specs.
///
/// Each tensor draws from its own RNG stream seeded by `(seed, name)`, so a
/// tensor's initial values do not depend on which other tensors exist.
/// Disabling a model component therefore leaves every shared tensor
/// bit-identical.
pub fn build_params(specs: &[ParamSpec], seed: u64) -> Result<ParamSet> {
    let mut params = ParamSet::new(seed);
    for spec in specs {
        let data = match spec.init {
            ParamInit::Uniform => {
                let a = fmath::sqrt(6.0 / (spec.rows + spec.cols) as f64);
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ fnv1a(spec.name.as_bytes()),
                );
                (0..spec.numel())
                    .map(|_| (2.0 * rng.gen::<f64>() - 1.0) * a)
                    .collect()
            }
            ParamInit::Zeros => vec![0.0; spec.numel()],
            ParamInit::Ones => vec![1.0; spec.numel()],
            ParamInit::Const(c) => vec![c; spec.numel()],
        };
        params.insert(&spec.name, Tensor::matrix(spec.rows, spec.cols, data)?)?;
    }
    Ok(params)
}
