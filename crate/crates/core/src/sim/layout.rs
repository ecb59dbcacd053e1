use std::ops::Range;

use crate::error::{Error, Result};

/// Named, contiguous, disjoint qubit ranges covering an allocation.
///
/// Registers are appended in order, starting at qubit 0, so the covering and
/// disjointness invariants hold by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegisterLayout {
    registers: Vec<(String, Range<usize>)>,
}

impl RegisterLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, width: usize) -> Result<Self> {
        self.push(name, width)?;
        Ok(self)
    }

    pub fn push(&mut self, name: &str, width: usize) -> Result<Range<usize>> {
        if width == 0 {
            return Err(Error::InvalidInput(format!(
                "register '{name}' has zero width"
            )));
        }
        if self.registers.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidInput(format!("duplicate register '{name}'")));
        }
        let start = self.n_qubits();
        let range = start..start + width;
        self.registers.push((name.to_string(), range.clone()));
        Ok(range)
    }

    pub fn get(&self, name: &str) -> Result<Range<usize>> {
        self.registers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
            .ok_or_else(|| Error::InvalidInput(format!("no register named '{name}'")))
    }

    pub fn n_qubits(&self) -> usize {
        self.registers.last().map_or(0, |(_, r)| r.end)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.registers.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.registers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registers.is_empty()
    }
}
