use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Handle to one tensor inside a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors with stable (insertion) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter_mut())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Scalar counts grouped by the name prefix before the last `.`.
    pub fn breakdown(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (name, value) in self.iter() {
            let group = name.rsplit_once('.').map(|(g, _)| g).unwrap_or(name);
            *out.entry(group.to_owned()).or_insert(0) += value.len();
        }
        out
    }

    /// Overwrites every tensor from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParameterSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let src = other
                .id(name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if src.dim() != value.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.dim(),
                    value.dim()
                )));
            }
            value.assign(src);
        }
        Ok(())
    }

    /// Name of the first tensor containing a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter()
            .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n)
    }
}

/// Gradient tensors aligned with a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) grads: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Gradients {
            grads: params.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.grads.iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn first_non_finite(&self, params: &ParameterSet) -> Option<String> {
        self.grads
            .iter()
            .position(|g| g.iter().any(|x| !x.is_finite()))
            .map(|i| format!("gradient of `{}`", params.names[i]))
    }
}
