use crate::numerics::{Gradients, Rng, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors in registration order. The order is the
/// checkpoint order and the optimizer-state order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    /// Gaussian-initialized parameter.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.normal() * std).collect();
        self.add(name, Tensor::from_f64(shape, &data).expect("shape/data agree"))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::filled(shape, T::from_f64_lossy(value)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Zero buffers shaped like every parameter.
    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.tensors.iter().map(|t| vec![T::zero(); t.numel()]).collect()
    }
}

/// Lazily places parameters on a tape as leaves, so a forward pass only
/// copies the parameters it touches.
pub struct Binder<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    vars: Vec<Option<Var>>,
    track: bool,
}

impl<'a, T: Scalar> Binder<'a, T> {
    /// `track` controls whether bound parameters require gradients.
    pub fn new(store: &'a ParamStore<T>, track: bool) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
            track,
        }
    }

    pub fn get(&mut self, tape: &mut Tape<T>, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let t = &self.store.tensors[id.0];
        let v = if self.track {
            tape.leaf(t)
        } else {
            tape.constant(t.shape(), t.data().to_vec())
        };
        self.vars[id.0] = Some(v);
        v
    }

    /// Gradients of the parameters bound in this pass, keyed by store index.
    pub fn collect(&self, grads: &Gradients<T>) -> ParamGrads<T> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, var)| var.and_then(|v| grads.get(v)).map(|g| (i, g.to_vec())))
            .collect()
    }
}

/// Sparse per-pass parameter gradients: `(store index, gradient)`.
pub type ParamGrads<T> = Vec<(usize, Vec<T>)>;

/// Adds sparse gradients into a dense accumulator indexed like the store.
pub fn add_into<T: Scalar>(acc: &mut [Vec<T>], part: &ParamGrads<T>) {
    for (i, g) in part {
        for (a, &d) in acc[*i].iter_mut().zip(g) {
            *a = *a + d;
        }
    }
}
