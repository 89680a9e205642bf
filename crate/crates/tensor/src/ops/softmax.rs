use crate::element::Element;
use crate::error::Result;
use crate::shape::check_axis;
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    /// Softmax along `axis`, max-subtracted.
    ///
    /// `-inf` entries map to exactly 0, and a slice that is entirely `-inf`
    /// maps to all zeros instead of NaN.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis(axis, self.rank())?;
        let shape = self.shape().to_vec();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let xd = self.data();
        let mut y = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mut max = T::neg_infinity();
                for j in 0..len {
                    max = max.max(xd[at(j)]);
                }
                if max == T::neg_infinity() {
                    continue;
                }
                let mut total = T::zero();
                for j in 0..len {
                    let e = (xd[at(j)] - max).exp();
                    y[at(j)] = e;
                    total += e;
                }
                let inv = T::one() / total;
                for j in 0..len {
                    y[at(j)] *= inv;
                }
            }
        }
        let yd = std::sync::Arc::new(y);
        let ys = std::sync::Arc::clone(&yd);
        Ok(Tensor::from_op_unchecked("softmax", shape, yd, &[self], move |g, needs| {
            if !needs[0] {
                return vec![None];
            }
            let mut gx = vec![T::zero(); ys.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let mut dot = T::zero();
                    for j in 0..len {
                        dot += g[at(j)] * ys[at(j)];
                    }
                    for j in 0..len {
                        gx[at(j)] = ys[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair() {
        let x = Tensor::<f64>::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        assert_eq!(x.softmax(0).unwrap().to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn neg_inf_maps_to_zero() {
        let x = Tensor::<f64>::from_vec(&[2], vec![0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(x.softmax(0).unwrap().to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn all_neg_inf_row_is_zero() {
        let ninf = f32::NEG_INFINITY;
        let x = Tensor::<f32>::from_vec(&[2, 2], vec![ninf, ninf, 1.0, 1.0]).unwrap();
        assert_eq!(x.softmax(1).unwrap().to_vec(), vec![0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn first_axis_of_matrix() {
        let x = Tensor::<f64>::from_vec(&[2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        assert_eq!(y, vec![0.5, 0.5, 0.5, 0.5]);
    }
}
