//! Named parameter storage with parallel gradient buffers.

use std::fmt;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Role of a parameter tensor within its layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
    Lhuc,
}

impl ParamRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::Gamma => "gamma",
            ParamRole::Beta => "beta",
            ParamRole::Lhuc => "lhuc",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight" => Ok(ParamRole::Weight),
            "bias" => Ok(ParamRole::Bias),
            "gamma" => Ok(ParamRole::Gamma),
            "beta" => Ok(ParamRole::Beta),
            "lhuc" => Ok(ParamRole::Lhuc),
            other => Err(Error::Data(format!("unknown parameter role `{other}`"))),
        }
    }

    /// Stable numeric tag used by the checkpoint format.
    pub fn tag(&self) -> u8 {
        match self {
            ParamRole::Weight => 0,
            ParamRole::Bias => 1,
            ParamRole::Gamma => 2,
            ParamRole::Beta => 3,
            ParamRole::Lhuc => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ParamRole::Weight),
            1 => Ok(ParamRole::Bias),
            2 => Ok(ParamRole::Gamma),
            3 => Ok(ParamRole::Beta),
            4 => Ok(ParamRole::Lhuc),
            other => Err(Error::Data(format!("unknown parameter role tag {other}"))),
        }
    }
}

/// Identifies one parameter tensor: layer index plus role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub layer: usize,
    pub role: ParamRole,
}

impl ParamId {
    pub fn new(layer: usize, role: ParamRole) -> Self {
        Self { layer, role }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer{}.{}", self.layer, self.role.as_str())
    }
}

/// A map of gradients keyed like the parameter store.
pub type GradMap = IndexMap<ParamId, Tensor>;

/// Ordered parameter store holding the model weights and a parallel
/// gradient buffer per parameter. Iteration order is insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: IndexMap<ParamId, Tensor>,
    grads: IndexMap<ParamId, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a parameter; its gradient buffer starts at zero.
    pub fn insert(&mut self, id: ParamId, value: Tensor) {
        self.grads.insert(id, Tensor::zeros_like(&value));
        self.entries.insert(id, value);
    }

    pub fn get(&self, id: ParamId) -> Result<&Tensor> {
        self.entries
            .get(&id)
            .ok_or_else(|| Error::Usage(format!("unknown parameter `{id}`")))
    }

    pub fn get_mut(&mut self, id: ParamId) -> Result<&mut Tensor> {
        self.entries
            .get_mut(&id)
            .ok_or_else(|| Error::Usage(format!("unknown parameter `{id}`")))
    }

    pub fn grad(&self, id: ParamId) -> Result<&Tensor> {
        self.grads
            .get(&id)
            .ok_or_else(|| Error::Usage(format!("no gradient buffer for `{id}`")))
    }

    pub fn grad_mut(&mut self, id: ParamId) -> Result<&mut Tensor> {
        self.grads
            .get_mut(&id)
            .ok_or_else(|| Error::Usage(format!("no gradient buffer for `{id}`")))
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.entries.iter().map(|(id, t)| (*id, t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.fill(0.0);
        }
    }

    /// Read access to entries together with write access to gradients.
    pub fn split_mut(&mut self) -> (&IndexMap<ParamId, Tensor>, &mut IndexMap<ParamId, Tensor>) {
        (&self.entries, &mut self.grads)
    }

    pub fn grads(&self) -> &GradMap {
        &self.grads
    }

    /// Clones the gradient buffers into a standalone map.
    pub fn grads_snapshot(&self) -> GradMap {
        self.grads.clone()
    }

    /// Checks that the gradient map mirrors entries (keys and shapes).
    pub fn check_mirrored(&self) -> Result<()> {
        if self.entries.len() != self.grads.len() {
            return Err(Error::Usage(format!(
                "grads hold {} keys, entries hold {}",
                self.grads.len(),
                self.entries.len()
            )));
        }
        for (id, t) in &self.entries {
            let g = self
                .grads
                .get(id)
                .ok_or_else(|| Error::Usage(format!("no gradient buffer for `{id}`")))?;
            if g.shape() != t.shape() {
                return Err(Error::Usage(format!(
                    "gradient shape {:?} does not mirror `{id}` shape {:?}",
                    g.shape(),
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Maximum absolute elementwise difference across all parameters.
    pub fn max_abs_diff(&self, other: &ParamStore) -> f64 {
        let mut worst: f64 = 0.0;
        for (id, t) in &self.entries {
            if let Some(o) = other.entries.get(id) {
                for (a, b) in t.data().iter().zip(o.data().iter()) {
                    worst = worst.max((a - b).abs());
                }
            } else {
                worst = f64::INFINITY;
            }
        }
        worst
    }
}
