use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::AutodiffError;

/// Which part of the model a parameter slot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// High-level policy (phi).
    High,
    /// Conditioned sub-policy (theta).
    Sub,
    /// Critic heads.
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotId(pub(crate) usize);

impl SlotId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotInfo {
    pub name: String,
    pub shape: [usize; 2],
    pub partition: Partition,
    pub offset: usize,
}

impl SlotInfo {
    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered set of named slots. Fixed once built.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    slots: Vec<SlotInfo>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        partition: Partition,
    ) -> SlotId {
        let name = name.into();
        assert!(
            self.slots.iter().all(|s| s.name != name),
            "duplicate parameter slot {name}"
        );
        let id = SlotId(self.slots.len());
        self.slots.push(SlotInfo {
            name,
            shape: [rows, cols],
            partition,
            offset: self.total,
        });
        self.total += rows * cols;
        id
    }

    pub fn slots(&self) -> &[SlotInfo] {
        &self.slots
    }

    pub fn slot(&self, id: SlotId) -> &SlotInfo {
        &self.slots[id.0]
    }

    pub fn find(&self, name: &str) -> Option<SlotId> {
        self.slots.iter().position(|s| s.name == name).map(SlotId)
    }

    /// Total number of scalar parameters.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn count_in(&self, partition: Partition) -> usize {
        self.slots
            .iter()
            .filter(|s| s.partition == partition)
            .map(SlotInfo::len)
            .sum()
    }
}

/// Flat storage for every trainable parameter, addressed by slot.
///
/// Also used for gradients: a gradient buffer is a `ParameterVector` sharing the
/// layout of the parameters it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<T> {
    layout: Arc<ParamLayout>,
    data: Vec<T>,
}

impl<T: Scalar> ParameterVector<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let data = vec![T::zero(); layout.total()];
        Self { layout, data }
    }

    pub fn from_vec(layout: Arc<ParamLayout>, data: Vec<T>) -> Result<Self, AutodiffError> {
        if data.len() != layout.total() {
            return Err(AutodiffError::ParamCount {
                expected: layout.total(),
                found: data.len(),
            });
        }
        Ok(Self { layout, data })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn slot(&self, id: SlotId) -> &[T] {
        let info = self.layout.slot(id);
        &self.data[info.offset..info.offset + info.len()]
    }

    pub fn slot_mut(&mut self, id: SlotId) -> &mut [T] {
        let info = self.layout.slot(id);
        let (start, len) = (info.offset, info.len());
        &mut self.data[start..start + len]
    }

    pub fn slot_by_name(&self, name: &str) -> Option<&[T]> {
        self.layout.find(name).map(|id| self.slot(id))
    }

    /// Euclidean norm over all slots.
    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn norm_in(&self, partition: Partition) -> T {
        self.layout
            .slots()
            .iter()
            .filter(|s| s.partition == partition)
            .flat_map(|s| &self.data[s.offset..s.offset + s.len()])
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v = *v * factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
