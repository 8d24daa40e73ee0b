use rand::Rng;

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// Re-draws every value uniformly from `(-scale, scale)`, in parameter order.
    pub fn init_uniform<R: Rng>(&mut self, scale: f64, rng: &mut R) {
        for t in &mut self.tensors {
            *t = Tensor::uniform(t.shape(), scale, rng);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Gradient buffers, one per parameter and of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub(crate) fn slot(&mut self, id: ParamId) -> &mut [f64] {
        self.tensors[id.0].data_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            super::tensor::axpy(factor, b.data(), a.data_mut());
        }
    }

    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|&v| v == 0.0))
    }
}
