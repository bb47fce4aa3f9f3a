use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, kept in registration order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

/// Stable 64-bit FNV-1a; `DefaultHasher` is not guaranteed stable across releases.
struct Fnv(u64);

impl Hasher for Fnv {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }
}

fn stable_hash(seed: u64, name: &str) -> u64 {
    let mut h = Fnv(0xcbf2_9ce4_8422_2325);
    seed.hash(&mut h);
    name.hash(&mut h);
    h.finish()
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Registers `value` under `name`. Panics on a duplicate name.
    pub fn insert(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(value);
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    /// Uniform in `±1/sqrt(fan_in)`, drawn from a stream keyed by `(seed, name)`
    /// so a parameter's initial value does not depend on what else is registered.
    pub fn uniform(
        &mut self,
        seed: u64,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, name));
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        self.insert(name, Tensor::new(rows, cols, data))
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.insert(name, Tensor::zeros(rows, cols))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on the tape as a leaf; the returned vector is
    /// indexed by [`ParamId::index`].
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Rebuilds the name index after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }

    /// True when names, order and shapes agree.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }
}
