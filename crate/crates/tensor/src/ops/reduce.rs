use crate::element::Element;
use crate::error::Result;
use crate::shape::{broadcast_strides, check_axis, for_each_broadcast, numel, strides};
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Reduce {
    Sum,
    Mean,
    Max,
}

fn reduce<T: Element>(x: &Tensor<T>, kind: Reduce, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
    let in_shape = x.shape().to_vec();
    for &a in axes {
        check_axis(a, in_shape.len())?;
    }
    let kept: Vec<usize> = in_shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect();
    let out_shape: Vec<usize> = if keepdim {
        kept.clone()
    } else {
        in_shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect()
    };
    let n_out = numel(&kept);
    let count = numel(&in_shape) / n_out.max(1);
    let s_in = strides(&in_shape);
    let s_out = broadcast_strides(&kept, &in_shape);
    let xd = x.data();

    let mut out = vec![
        if kind == Reduce::Max {
            T::neg_infinity()
        } else {
            T::zero()
        };
        n_out
    ];
    let mut argmax = vec![0usize; if kind == Reduce::Max { n_out } else { 0 }];
    // sequential over the flattened input: fixed accumulation order
    for_each_broadcast(&in_shape, &s_in, &s_out, |i, _, o| match kind {
        Reduce::Sum | Reduce::Mean => out[o] += xd[i],
        Reduce::Max => {
            if xd[i] > out[o] {
                out[o] = xd[i];
                argmax[o] = i;
            }
        }
    });
    if kind == Reduce::Mean {
        let inv = T::from_f64(1.0 / count as f64);
        out.iter_mut().for_each(|v| *v = *v * inv);
    }

    let n_in = numel(&in_shape);
    let name = match kind {
        Reduce::Sum => "sum",
        Reduce::Mean => "mean",
        Reduce::Max => "max",
    };
    Ok(Tensor::from_op(name, out_shape, out, &[x], move |g, needs| {
        if !needs[0] {
            return vec![None];
        }
        let mut gx = vec![T::zero(); n_in];
        match kind {
            Reduce::Sum | Reduce::Mean => {
                let scale = if kind == Reduce::Mean {
                    T::from_f64(1.0 / count as f64)
                } else {
                    T::one()
                };
                for_each_broadcast(&in_shape, &s_in, &s_out, |i, _, o| gx[i] = g[o] * scale);
            }
            Reduce::Max => {
                for (o, &i) in argmax.iter().enumerate() {
                    gx[i] += g[o];
                }
            }
        }
        vec![Some(gx)]
    }))
}

impl<T: Element> Tensor<T> {
    pub fn sum(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        reduce(self, Reduce::Sum, axes, keepdim)
    }

    pub fn mean(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        reduce(self, Reduce::Mean, axes, keepdim)
    }

    /// Maximum over `axes`; the gradient goes to the first maximal entry.
    pub fn max(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        reduce(self, Reduce::Max, axes, keepdim)
    }

    /// Sum of every element as a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let xd = self.data();
        let total = xd.iter().fold(T::zero(), |acc, &v| acc + v);
        let n = self.numel();
        Tensor::from_op("sum_all", vec![], vec![total], &[self], move |g, needs| {
            vec![needs[0].then(|| vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        self.sum_all().scale(1.0 / self.numel().max(1) as f64)
    }
}
