//! Trainable parameters and the parameter registry.

use rand::Rng;

use super::matrix::Matrix;
use super::NnError;

/// A named trainable value with its gradient accumulator. Value and gradient
/// always have the same shape.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Stable handle to a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Registry of all trainable parameters of a model, in creation order.
/// Creation order is the serialization order, which keeps archives
/// byte-stable across runs.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    /// Registers a parameter. Names must be unique within the set.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name:?}"
        );
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    /// Registers a parameter initialized uniformly in `[-s, s]` with
    /// `s = sqrt(6 / (rows + cols))`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        let value = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-s..=s));
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Name of the first parameter with a non-finite gradient entry, if any.
    pub fn first_nonfinite_grad(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| !p.grad.all_finite())
            .map(|p| p.name.as_str())
    }

    /// Copies of all values, in creation order.
    pub fn snapshot(&self) -> Vec<Matrix> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Restores values captured by [`ParamSet::snapshot`].
    pub fn restore(&mut self, snapshot: &[Matrix]) -> Result<(), NnError> {
        if snapshot.len() != self.params.len() {
            return Err(NnError::InvalidArgument(format!(
                "snapshot has {} entries, parameter set has {}",
                snapshot.len(),
                self.params.len()
            )));
        }
        for (p, saved) in self.params.iter_mut().zip(snapshot) {
            if p.value.shape() != saved.shape() {
                return Err(NnError::ShapeMismatch {
                    context: format!("restore of parameter {}", p.name),
                    left: p.value.shape(),
                    right: saved.shape(),
                });
            }
            p.value = saved.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_and_lookup() {
        let mut set = ParamSet::new();
        let id = set.add("w", Matrix::zeros(2, 3));
        assert_eq!(set.get(id).name, "w");
        assert_eq!(set.value(id).shape(), (2, 3));
        assert_eq!(set.grad(id).shape(), (2, 3));
        assert_eq!(set.find("w"), Some(id));
        assert_eq!(set.find("missing"), None);
    }

    #[test]
    #[should_panic]
    fn duplicate_names_rejected() {
        let mut set = ParamSet::new();
        set.add("w", Matrix::zeros(1, 1));
        set.add("w", Matrix::zeros(1, 1));
    }

    #[test]
    fn snapshot_restore_round_trips() {
        let mut set = ParamSet::new();
        let id = set.add("w", Matrix::filled(2, 2, 1.5));
        let snap = set.snapshot();
        set.get_mut(id).value.set(0, 0, -9.0);
        set.restore(&snap).unwrap();
        assert_eq!(set.value(id).get(0, 0), 1.5);
    }
}
