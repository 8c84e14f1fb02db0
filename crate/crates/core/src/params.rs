//! Named parameter storage partitioned into the five trainable groups.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Convolutional waveform frontend.
    Frontend,
    /// Transformer blocks, positional parameters, mask embedding, final norm.
    Transformer,
    /// SSL projection head.
    Projection,
    /// Residual adapters.
    Adapter,
    /// Layer weights, BiLSTM and output projection.
    Decoder,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Frontend, Group::Transformer, Group::Projection, Group::Adapter, Group::Decoder];

    pub fn prefix(self) -> &'static str {
        match self {
            Group::Frontend => "frontend.",
            Group::Transformer => "encoder.",
            Group::Projection => "proj.",
            Group::Adapter => "adapter.",
            Group::Decoder => "decoder.",
        }
    }

    pub fn of(name: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| name.starts_with(g.prefix()))
    }

    pub fn label(self) -> &'static str {
        match self {
            Group::Frontend => "theta_f",
            Group::Transformer => "theta_T",
            Group::Projection => "theta_A",
            Group::Adapter => "theta_ada",
            Group::Decoder => "theta_d",
        }
    }

    pub fn from_label(s: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.label() == s)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which groups an optimizer step may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct FreezeSet {
    trainable: [bool; 5],
}

impl FreezeSet {
    pub fn only(groups: &[Group]) -> Self {
        let mut f = FreezeSet::default();
        for g in groups {
            f.trainable[*g as usize] = true;
        }
        f
    }

    pub fn is_trainable(&self, g: Group) -> bool {
        self.trainable[g as usize]
    }

    pub fn name_trainable(&self, name: &str) -> bool {
        Group::of(name).is_some_and(|g| self.is_trainable(g))
    }

    pub fn trainable_groups(&self) -> Vec<Group> {
        Group::ALL.into_iter().filter(|g| self.is_trainable(*g)).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on names outside the five group prefixes.
    pub fn insert(&mut self, name: impl Into<String>, m: Mat) {
        let name = name.into();
        assert!(Group::of(&name).is_some(), "parameter `{name}` has no group prefix");
        self.tensors.insert(name, m);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.tensors.get_mut(name)
    }

    /// Panics if the tensor is missing; model code only asks for names it created.
    pub fn expect(&self, name: &str) -> &Mat {
        self.tensors.get(name).unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn has_group(&self, g: Group) -> bool {
        self.tensors.keys().any(|n| Group::of(n) == Some(g))
    }

    pub fn group(&self, g: Group) -> impl Iterator<Item = (&String, &Mat)> {
        self.tensors.iter().filter(move |(n, _)| Group::of(n) == Some(g))
    }

    pub fn group_count(&self, g: Group) -> usize {
        self.group(g).map(|(_, m)| m.len()).sum()
    }

    pub fn remove_group(&mut self, g: Group) {
        self.tensors.retain(|n, _| Group::of(n) != Some(g));
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    /// SHA-256 over names, shapes and little-endian payloads of one group.
    pub fn group_hash(&self, g: Group) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.group(g) {
            h.update(name.as_bytes());
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}

pub(crate) fn normal(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}
