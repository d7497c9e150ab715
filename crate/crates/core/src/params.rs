//! Named parameter storage and the per-forward [`Session`] that binds
//! parameters onto a fresh [`Graph`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{grad_check, Graph, Tensor, TensorResult, Var};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Rows excluded from updates (frozen embeddings, the padding row).
    pub frozen_rows: Option<Vec<bool>>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            frozen_rows: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(value.shape(), self.params[id.0].value.shape());
        self.params[id.0].value = value;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Zeroes the gradient of frozen rows in place.
    pub fn mask_frozen(&self, id: ParamId, grad: &mut Tensor) {
        if let Some(frozen) = &self.params[id.0].frozen_rows {
            let c = grad.cols();
            for (r, &f) in frozen.iter().enumerate() {
                if f {
                    grad.data_mut()[r * c..(r + 1) * c].fill(0.0);
                }
            }
        }
    }
}

/// Uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    uniform(&[rows, cols], a, rng)
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// `size × size` orthogonal matrix from Gram-Schmidt on a Gaussian draw.
pub fn orthogonal(size: usize, rng: &mut impl Rng) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(size);
    while cols.len() < size {
        let mut v: Vec<f64> = (0..size).map(|_| rng.sample(StandardNormal)).collect();
        for u in &cols {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        cols.push(v);
    }
    let mut data = vec![0.0; size * size];
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            data[i * size + j] = x;
        }
    }
    Tensor::new(vec![size, size], data).expect("shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a graph plus lazily bound parameter leaves.
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    gathered: Vec<(ParamId, Vec<usize>, Var)>,
    mode: Mode,
    dropout: f64,
    rng: ChaCha8Rng,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode, dropout: f64, seed: u64) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            gathered: Vec::new(),
            mode,
            dropout,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval(store: &'a ParamStore) -> Self {
        Self::new(store, Mode::Eval, 0.0, 0)
    }

    /// Continues recording onto an existing graph.
    pub fn from_graph(store: &'a ParamStore, graph: Graph) -> Self {
        let mut s = Self::eval(store);
        s.graph = graph;
        s
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    /// Uses `var` in place of the stored value of `id` for this session.
    pub fn bind(&mut self, id: ParamId, var: Var) {
        self.bound[id.0] = Some(var);
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.graph.leaf(self.store.value(id).clone(), true);
        self.bound[id.0] = Some(v);
        v
    }

    /// Gathers rows of a parameter matrix without copying the whole matrix
    /// onto the graph. Gradients scatter back in [`param_grads`](Self::param_grads).
    pub fn param_rows(&mut self, id: ParamId, indices: &[usize]) -> TensorResult<Var> {
        if let Some(v) = self.bound[id.0] {
            return self.graph.gather_rows(v, indices);
        }
        let table = self.store.value(id);
        let c = table.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(table.row(i));
        }
        let t = Tensor::new(vec![indices.len(), c], data)?;
        let v = self.graph.leaf(t, true);
        self.gathered.push((id, indices.to_vec(), v));
        Ok(v)
    }

    /// Inverted dropout in training mode, identity otherwise.
    pub fn dropout(&mut self, x: Var) -> TensorResult<Var> {
        if self.mode != Mode::Train || self.dropout <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.dropout;
        let shape = self.graph.value(x).shape().to_vec();
        let n = self.graph.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = self.graph.constant(Tensor::new(shape, mask)?);
        self.graph.mul(x, m)
    }

    /// Gradients for every parameter touched by this session, after backward.
    /// Frozen rows are zeroed.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = Vec::new();
        for (i, slot) in self.bound.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(g) = self.graph.grad(*v) {
                    out.push((ParamId(i), g.clone()));
                }
            }
        }
        for (id, indices, v) in &self.gathered {
            let Some(g) = self.graph.grad(*v) else { continue };
            let table = self.store.value(*id);
            let c = table.cols();
            let pos = out.iter().position(|(pid, _)| pid == id);
            let idx = match pos {
                Some(p) => p,
                None => {
                    out.push((*id, Tensor::zeros(table.shape())));
                    out.len() - 1
                }
            };
            let dst = out[idx].1.data_mut();
            for (k, &r) in indices.iter().enumerate() {
                for j in 0..c {
                    dst[r * c + j] += g.data()[k * c + j];
                }
            }
        }
        for (id, g) in out.iter_mut() {
            self.store.mask_frozen(*id, g);
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// Gradient check of a session-built scalar with respect to an input tensor.
pub fn session_grad_check<F>(store: &ParamStore, x: &Tensor, epsilon: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Session, Var) -> Result<Var>,
{
    grad_check(
        |g, xv| {
            let mut s = Session::from_graph(store, std::mem::take(g));
            let out = f(&mut s, xv);
            *g = s.into_graph();
            out
        },
        x,
        epsilon,
    )
}

/// Gradient check of a session-built scalar with respect to one parameter.
pub fn param_grad_check<F>(store: &ParamStore, id: ParamId, epsilon: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Session) -> Result<Var>,
{
    session_grad_check(store, store.value(id), epsilon, |s, x| {
        s.bind(id, x);
        f(s)
    })
}
