use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Names, shapes and offsets of every tensor inside the flat parameter
/// vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    len: usize,
}

impl ParamLayout {
    pub(crate) fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Range<usize> {
        let entry = ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.len,
            init,
        };
        let r = entry.range();
        self.len = r.end;
        self.entries.push(entry);
        r
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Entries whose name starts with `prefix`.
    pub fn ranges_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = Range<usize>> + 'a {
        self.entries
            .iter()
            .filter(move |e| e.name.starts_with(prefix))
            .map(ParamEntry::range)
    }

    /// Draws every tensor from its own stream, so adding a tensor does not
    /// perturb the others.
    pub fn initialize(&self, seed: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (i, e) in self.entries.iter().enumerate() {
            let slot = &mut out[e.range()];
            match e.init {
                Init::Const(v) => slot.fill(v),
                Init::Uniform(bound) => {
                    let mut rng = rng_for(seed, &[0x1a17, i as u64]);
                    slot.iter_mut().for_each(|v| *v = rng.gen_range(-bound..=bound));
                }
            }
        }
        out
    }
}
