use crate::element::Element;
use crate::tensor::Tensor;

/// Negative slope used by every leaky ReLU in the model.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

impl<T: Element> Tensor<T> {
    fn map_unary(
        &self,
        name: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let x = self.data();
        let data: Vec<T> = x.iter().map(|&v| f(v)).collect();
        Tensor::from_op(name, self.shape().to_vec(), data, &[self], move |g, needs| {
            vec![needs[0].then(|| g.iter().zip(x.iter()).map(|(&gi, &xi)| df(gi, xi)).collect())]
        })
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        let s = T::from_f64(s);
        self.map_unary("scale", move |v| v * s, move |g, _| g * s)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64(c);
        self.map_unary("add_scalar", move |v| v + c, |g, _| g)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.map_unary("neg", |v| -v, |g, _| -g)
    }

    pub fn square(&self) -> Tensor<T> {
        let two = T::from_f64(2.0);
        self.map_unary("square", |v| v * v, move |g, x| two * x * g)
    }

    /// `x` for `x >= 0`, `slope * x` otherwise.
    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = T::from_f64(slope);
        self.map_unary(
            "leaky_relu",
            move |v| if v >= T::zero() { v } else { v * s },
            move |g, x| if x >= T::zero() { g } else { g * s },
        )
    }

    /// Replace entries where `mask` is true by `value` (which may be `-inf`).
    /// No gradient flows through replaced entries.
    pub fn masked_fill(&self, mask: &[bool], value: T) -> crate::Result<Tensor<T>> {
        if mask.len() != self.numel() {
            return Err(crate::TensorError::DataLength {
                len: mask.len(),
                shape: self.shape().to_vec(),
            });
        }
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let mask = mask.to_vec();
        Ok(Tensor::from_op_unchecked(
            "masked_fill",
            self.shape().to_vec(),
            std::sync::Arc::new(data),
            &[self],
            move |g, needs| {
                vec![needs[0].then(|| {
                    g.iter()
                        .zip(&mask)
                        .map(|(&gi, &m)| if m { T::zero() } else { gi })
                        .collect()
                })]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_negative_slope() {
        let x = Tensor::<f32>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = x.leaky_relu(LEAKY_RELU_SLOPE).to_vec();
        assert!((y[0] + 0.01).abs() < 1e-7);
        assert_eq!(&y[1..], &[0.0, 2.0]);
    }

    #[test]
    fn square_gradient() {
        // loss = sum(w^2), w = [1, 2] -> grad = [2, 4]
        let w = Tensor::<f64>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        w.square().sum_all().backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn masked_fill_blocks_gradient() {
        let w = Tensor::<f64>::parameter(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = w.masked_fill(&[false, true, false], 0.0).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 0.0, 3.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 0.0, 1.0]);
    }
}
