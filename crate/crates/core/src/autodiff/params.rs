use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named trainable arrays, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Contract(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.entries.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Number of named entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn same_schema(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    pub fn check_schema(&self, other: &ParameterSet) -> Result<()> {
        if self.same_schema(other) {
            return Ok(());
        }
        let describe = |p: &ParameterSet| {
            p.entries
                .iter()
                .map(|(k, v)| format!("{k}{:?}", v.shape()))
                .collect::<Vec<_>>()
                .join(", ")
        };
        Err(Error::Contract(format!(
            "parameter schemas differ: [{}] vs [{}]",
            describe(self),
            describe(other)
        )))
    }

    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Rebuilds a set with this set's schema from flat values.
    pub fn unflatten(&self, values: &[f64]) -> Result<ParameterSet> {
        if values.len() != self.scalar_count() {
            return Err(Error::Contract(format!(
                "expected {} values, got {}",
                self.scalar_count(),
                values.len()
            )));
        }
        let mut offset = 0;
        let mut out = ParameterSet::new();
        for (k, v) in &self.entries {
            let n = v.numel();
            out.insert(
                k,
                Tensor::new(v.shape().to_vec(), values[offset..offset + n].to_vec())?,
            )?;
            offset += n;
        }
        Ok(out)
    }

    /// In-place `self += a * x`.
    pub fn axpy_in_place(&mut self, a: f64, x: &ParameterSet) -> Result<()> {
        self.check_schema(x)?;
        for (dst, src) in self.entries.values_mut().zip(x.entries.values()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += a * s;
            }
        }
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.map(|x| a * x)))
                .collect(),
        }
    }

    pub fn dot(&self, other: &ParameterSet) -> Result<f64> {
        self.check_schema(other)?;
        Ok(self
            .entries
            .values()
            .zip(other.entries.values())
            .map(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            })
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0, |m, t| m.max(t.max_abs()))
    }

    /// Name of the first entry holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, v)| !v.all_finite())
            .map(|(k, _)| k.as_str())
    }
}

/// `a * x + y` as a new set.
pub fn axpy(a: f64, x: &ParameterSet, y: &ParameterSet) -> Result<ParameterSet> {
    let mut out = y.clone();
    out.axpy_in_place(a, x)?;
    Ok(out)
}
