use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::shape::{check_axis, numel, strides};
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    /// Same buffer, new shape. Row-major element order is preserved.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(TensorError::InvalidReshape {
                from: self.shape().to_vec(),
                to: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op_unchecked(
            "reshape",
            shape.to_vec(),
            self.data(),
            &[self],
            |g, needs| vec![needs[0].then(|| g.to_vec())],
        ))
    }

    /// Reorder dimensions: output dim `i` is input dim `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(TensorError::Invalid(format!(
                "permutation {perm:?} does not match rank {rank}"
            )));
        }
        for &p in perm {
            check_axis(p, rank)?;
            if std::mem::replace(&mut seen[p], true) {
                return Err(TensorError::Invalid(format!("repeated axis in {perm:?}")));
            }
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let s_in = strides(&in_shape);
        // input offset for each output index
        let gather: Vec<usize> = {
            let mut idx = Vec::with_capacity(self.numel());
            let s_perm: Vec<usize> = perm.iter().map(|&p| s_in[p]).collect();
            let mut counter = vec![0usize; rank];
            let mut off = 0usize;
            for _ in 0..self.numel() {
                idx.push(off);
                for d in (0..rank).rev() {
                    counter[d] += 1;
                    off += s_perm[d];
                    if counter[d] < out_shape[d] {
                        break;
                    }
                    off -= s_perm[d] * out_shape[d];
                    counter[d] = 0;
                }
            }
            idx
        };
        let xd = self.data();
        let data: Vec<T> = gather.iter().map(|&i| xd[i]).collect();
        let n = self.numel();
        Ok(Tensor::from_op("permute", out_shape, data, &[self], move |g, needs| {
            vec![needs[0].then(|| {
                let mut gx = vec![T::zero(); n];
                for (o, &i) in gather.iter().enumerate() {
                    gx[i] = g[o];
                }
                gx
            })]
        }))
    }

    /// Contiguous range `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        check_axis(axis, self.rank())?;
        let shape = self.shape().to_vec();
        if start + len > shape[axis] {
            return Err(TensorError::Invalid(format!(
                "narrow {start}..{} out of range for dim {} of size {}",
                start + len,
                axis,
                shape[axis]
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let xd = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let n = self.numel();
        Ok(Tensor::from_op("narrow", out_shape, data, &[self], move |g, needs| {
            vec![needs[0].then(|| {
                let mut gx = vec![T::zero(); n];
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                gx
            })]
        }))
    }

    /// Join tensors along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        check_axis(axis, first.rank())?;
        let base_shape = first.shape().to_vec();
        for p in parts {
            let ok = p.rank() == base_shape.len()
                && p.shape()
                    .iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base_shape.clone(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let outer: usize = base_shape[..axis].iter().product();
        let inner: usize = base_shape[axis + 1..].iter().product();
        let dims: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = dims.iter().sum();
        let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (d, pd) in dims.iter().zip(&datas) {
                data.extend_from_slice(&pd[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut out_shape = base_shape;
        out_shape[axis] = total;
        Ok(Tensor::from_op("concat", out_shape, data, parts, move |g, needs| {
            let mut grads: Vec<Option<Vec<T>>> = needs
                .iter()
                .zip(&dims)
                .map(|(&n, &d)| n.then(|| Vec::with_capacity(outer * d * inner)))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gp, &d) in grads.iter_mut().zip(&dims) {
                    if let Some(gp) = gp.as_mut() {
                        gp.extend_from_slice(&g[off..off + d * inner]);
                    }
                    off += d * inner;
                }
            }
            grads
        }))
    }
}
