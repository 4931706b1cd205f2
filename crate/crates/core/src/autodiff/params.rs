use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::{Element, Tensor};
use super::AutodiffError;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Named model parameters in deterministic (sorted) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    entries: BTreeMap<String, Parameter<T>>,
}

impl<T: Element> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<(), AutodiffError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        self.entries.insert(name, Parameter { value, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>, AutodiffError> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<(), AutodiffError> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(AutodiffError::Shape(format!(
                "parameter {name}: {:?} replaced by {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<(), AutodiffError> {
        self.entries
            .get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))
    }

    pub fn freeze_all(&mut self) {
        for p in self.entries.values_mut() {
            p.trainable = false;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Moves every entry of `other` in under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ParameterSet<T>) -> Result<(), AutodiffError> {
        for (name, p) in other.entries {
            self.insert(format!("{prefix}{name}"), p.value, p.trainable)?;
        }
        Ok(())
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> ParameterSet<T> {
        let entries = self
            .entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        ParameterSet { entries }
    }

    pub fn cast<U: Element>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Parameter {
                            value: p.value.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Weight initializers used by the network builders.
pub mod init {
    use super::*;

    pub fn normal<T: Element>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        Tensor::new(shape, data).expect("extent product matches")
    }

    /// He-style normal init scaled by fan-in.
    pub fn kaiming<T: Element>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
        normal(shape, (2.0 / fan_in as f64).sqrt(), rng)
    }
}
