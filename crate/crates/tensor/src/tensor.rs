use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::shape::numel;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Gradients for each parent of a node, `None` where a parent does not need one.
pub type ParentGrads<T> = Vec<Option<Vec<T>>>;

type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> ParentGrads<T> + Send + Sync>;

struct GradFn<T: Element> {
    name: &'static str,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Element> {
    id: usize,
    shape: Vec<usize>,
    data: RwLock<Arc<Vec<T>>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    grad_fn: Option<GradFn<T>>,
}

/// Dense row-major n-dimensional array with optional gradient tracking.
///
/// Cloning is cheap: clones share the same node. Values are immutable once
/// built, with two exceptions: the accumulated gradient of a leaf, and
/// [`Tensor::set_data`] on leaves, which is how optimizers write updates.
pub struct Tensor<T: Element = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<T> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("op", &self.inner.grad_fn.as_ref().map(|g| g.name))
            .field("data", &preview)
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    fn build(
        shape: Vec<usize>,
        data: Arc<Vec<T>>,
        requires_grad: bool,
        grad_fn: Option<GradFn<T>>,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                requires_grad,
                grad: Mutex::new(None),
                grad_fn,
            }),
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::build(shape.to_vec(), Arc::new(data), false, None))
    }

    /// Trainable leaf tensor.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(Self::build(t.inner.shape.clone(), t.data(), true, None))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(shape.to_vec(), Arc::new(vec![value; numel(shape)]), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[], value)
    }

    /// Result of a differentiable operation.
    ///
    /// `backward` receives the gradient of the output and a per-parent flag
    /// saying whether that parent needs a gradient; it returns one entry per
    /// parent. When no parent requires a gradient the closure is dropped and
    /// the result is a plain constant, so inference builds no graph.
    pub fn from_op<F>(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: &[&Tensor<T>],
        backward: F,
    ) -> Self
    where
        F: Fn(&[T], &[bool]) -> ParentGrads<T> + Send + Sync + 'static,
    {
        debug_assert_eq!(numel(&shape), data.len(), "{name}: data/shape mismatch");
        // an op may propagate non-finite inputs, never create them
        debug_assert!(
            data.iter().all(|v| v.is_finite())
                || parents.iter().any(|p| p.data().iter().any(|v| !v.is_finite())),
            "{name}: non-finite output from finite inputs"
        );
        Self::from_op_unchecked(name, shape, Arc::new(data), parents, backward)
    }

    /// Like [`Tensor::from_op`] but shares an existing buffer and skips the
    /// finiteness check (used by masking, which writes `-inf` on purpose).
    pub fn from_op_unchecked<F>(
        name: &'static str,
        shape: Vec<usize>,
        data: Arc<Vec<T>>,
        parents: &[&Tensor<T>],
        backward: F,
    ) -> Self
    where
        F: Fn(&[T], &[bool]) -> ParentGrads<T> + Send + Sync + 'static,
    {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            name,
            parents: parents.iter().map(|&p| p.clone()).collect(),
            backward: Box::new(backward),
        });
        Self::build(shape, data, requires_grad, grad_fn)
    }

    pub fn id(&self) -> usize {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    /// Snapshot of the value buffer.
    pub fn data(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.inner.data.read().expect("tensor data lock poisoned"))
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        Ok(self.data()[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.grad_fn.as_ref().map(|g| g.name)
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), self.data(), false, None)
    }

    /// Overwrite the values of a leaf (optimizer updates, checkpoint loads).
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if !self.is_leaf() {
            return Err(TensorError::Invalid(
                "set_data is only allowed on leaf tensors".into(),
            ));
        }
        if data.len() != self.numel() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: self.shape().to_vec(),
            });
        }
        *self.inner.data.write().expect("tensor data lock poisoned") = Arc::new(data);
        Ok(())
    }

    /// In-place edit of a leaf's values; copies only if a graph still holds
    /// the old buffer.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) -> Result<()> {
        if !self.is_leaf() {
            return Err(TensorError::Invalid(
                "update_data is only allowed on leaf tensors".into(),
            ));
        }
        let mut guard = self.inner.data.write().expect("tensor data lock poisoned");
        f(Arc::make_mut(&mut guard).as_mut_slice());
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.inner.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
    /// across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            let Some(grad_fn) = node.inner.grad_fn.as_ref() else {
                node.accumulate_grad(&g);
                continue;
            };
            let needs: Vec<bool> = grad_fn.parents.iter().map(|p| p.requires_grad()).collect();
            let grads = (grad_fn.backward)(&g, &needs);
            debug_assert_eq!(grads.len(), grad_fn.parents.len(), "{}", grad_fn.name);
            for ((parent, grad), need) in grad_fn.parents.iter().zip(grads).zip(needs) {
                let (true, Some(grad)) = (need, grad) else {
                    continue;
                };
                debug_assert_eq!(grad.len(), parent.numel(), "{}: bad grad size", grad_fn.name);
                match pending.get_mut(&parent.id()) {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &b)| *a += b),
                    None => {
                        pending.insert(parent.id(), grad);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable through gradient-requiring edges, parents first.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(grad_fn) = node.inner.grad_fn.as_ref() {
                for p in grad_fn.parents.iter().rev() {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_length_checked() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(t.numel(), 4);
    }

    #[test]
    fn set_data_rejected_on_op_results() {
        let w = Tensor::<f32>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let y = w.scale(2.0);
        assert!(y.set_data(vec![0.0, 0.0]).is_err());
        assert!(w.set_data(vec![0.0, 0.0]).is_ok());
    }

    #[test]
    fn constants_build_no_graph() {
        let a = Tensor::<f32>::ones(&[3]);
        let b = a.scale(3.0);
        assert!(!b.requires_grad());
        assert!(b.is_leaf());
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let w = Tensor::<f32>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(w.backward(), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn diamond_graph_accumulates() {
        // loss = sum(w*w + w) -> d/dw = 2w + 1
        let w = Tensor::<f64>::parameter(&[2], vec![1.0, -3.0]).unwrap();
        let loss = w.mul(&w).unwrap().add(&w).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![3.0, -5.0]);
    }

    #[test]
    fn update_data_copies_on_write() {
        let w = Tensor::<f32>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let snapshot = w.data();
        w.update_data(|d| d[0] = 5.0).unwrap();
        assert_eq!(snapshot[0], 1.0);
        assert_eq!(w.data()[0], 5.0);
    }
}
