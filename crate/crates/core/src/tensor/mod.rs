//! Dense row-major tensors with a reverse-mode gradient tape.
//!
//! Every differentiable quantity in the pipeline is a [`Tensor`]. A tensor is
//! immutable once built; the only mutable state is the gradient accumulator
//! on leaf parameters. Operations on tensors that require gradients record the
//! operation in the result, so the tape is the DAG reachable from a root.
//!
//! Scalars are `f64` by default. `Tensor<f32>` is available for speed.

mod adam;
mod gradcheck;
mod io;
mod ops;
mod sparse;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub use adam::{adam_step, AdamConfig, AdamReport, AdamState, ParamSet};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use io::{read_checkpoint, read_tensor, write_checkpoint, write_tensor, CHECKPOINT_MAGIC, TENSOR_MAGIC};
pub use sparse::CsrPattern;

use ops::Op;

/// Scalar type a tensor can hold.
pub trait Element:
    num_traits::Float + Default + fmt::Debug + fmt::Display + Send + Sync + std::iter::Sum + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: non-finite input value (strict mode)")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("tensor format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

thread_local! {
    static STRICT: Cell<bool> = const { Cell::new(false) };
}

/// Enables or disables strict mode on the current thread. In strict mode,
/// every forward op rejects inputs holding NaN or infinities.
pub fn set_strict_mode(on: bool) {
    STRICT.with(|s| s.set(on));
}

pub fn strict_mode() -> bool {
    STRICT.with(|s| s.get())
}

/// Restores the previous strict-mode flag when dropped.
pub struct StrictGuard(bool);

impl StrictGuard {
    pub fn enable() -> Self {
        let prev = strict_mode();
        set_strict_mode(true);
        StrictGuard(prev)
    }
}

impl Drop for StrictGuard {
    fn drop(&mut self) {
        set_strict_mode(self.0);
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique tensor identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TensorId(u64);

impl TensorId {
    fn fresh() -> Self {
        TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

struct Inner<T: Element> {
    id: TensorId,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    op: Option<Op<T>>,
}

/// Shared handle to an immutable tensor.
pub struct Tensor<T: Element = f64> {
    inner: Arc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.inner.shape);
        if self.inner.data.len() <= 16 {
            d.field("data", &self.inner.data);
        }
        d.field("requires_grad", &self.inner.requires_grad).finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Option<Op<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: TensorId::fresh(),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                op,
            }),
        }
    }

    /// Constant tensor. Fails when `data.len()` disagrees with the shape.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "new",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that receives gradients.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "parameter",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    /// Rank-0 tensor.
    pub fn scalar(value: T) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Row vector `[n]`.
    pub fn vector(data: Vec<T>) -> Self {
        Self::build(vec![data.len()], data, false, None)
    }

    /// Same values as a constant with no tape history.
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), self.inner.data.clone(), false, None)
    }

    /// Same values as a fresh gradient-receiving leaf.
    pub fn to_parameter(&self) -> Self {
        Self::build(self.inner.shape.clone(), self.inner.data.clone(), true, None)
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.op.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock") = None;
    }

    fn accumulate_grad(&self, g: &[T]) -> Vec<T> {
        let mut slot = self.inner.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a = *a + v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
        slot.clone().unwrap()
    }

    /// Runs reverse-mode differentiation from this scalar root.
    ///
    /// Every parameter reachable through the tape has the gradient of the root
    /// added to its accumulator; the returned map holds the accumulated values.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.len() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            log::warn!("backward on a detached tensor; no gradients produced");
            return Ok(Gradients::default());
        }

        // post-order DFS; every node is visited once
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashSet<TensorId> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.inner.op {
                for p in op.parents() {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut grads: HashMap<TensorId, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        let mut out = Gradients::default();
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            match &node.inner.op {
                Some(op) => {
                    let parents = op.parents();
                    let pgrads = op.vjp(node, &g);
                    for (p, pg) in parents.into_iter().zip(pgrads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        match grads.get_mut(&p.id()) {
                            Some(acc) => {
                                for (a, v) in acc.iter_mut().zip(pg) {
                                    *a = *a + v;
                                }
                            }
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
                None => {
                    let acc = node.accumulate_grad(&g);
                    out.map.insert(node.id(), acc);
                }
            }
        }
        Ok(out)
    }
}

/// Leaf gradients produced by one [`Tensor::backward`] call.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T: Element = f64> {
    map: HashMap<TensorId, Vec<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.map.get(&t.id()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, t: &Tensor<T>, g: Vec<T>) {
        self.map.insert(t.id(), g);
    }
}
