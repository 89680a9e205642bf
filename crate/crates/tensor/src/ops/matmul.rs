use crate::element::{gemm, Element};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    /// Matrix product of `[m, k] x [k, n]`, or batched `[b, m, k] x [b, k, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        let (batch, m, k, n) = match (self.shape(), other.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (None, m, k, n),
            (&[b, m, k], &[b2, k2, n]) if k == k2 && b == b2 => (Some(b), m, k, n),
            _ => return Err(mismatch()),
        };
        let nb = batch.unwrap_or(1);
        let (ad, bd) = (self.data(), other.data());
        let mut out = vec![T::zero(); nb * m * n];
        for i in 0..nb {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..],
                false,
                &bd[i * k * n..],
                false,
                &mut out[i * m * n..],
                false,
            );
        }
        let shape = match batch {
            Some(b) => vec![b, m, n],
            None => vec![m, n],
        };
        Ok(Tensor::from_op("matmul", shape, out, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| {
                let mut ga = vec![T::zero(); nb * m * k];
                for i in 0..nb {
                    // dA = G * B^T
                    gemm(m, n, k, &g[i * m * n..], false, &bd[i * k * n..], true, &mut ga[i * m * k..], false);
                }
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![T::zero(); nb * k * n];
                for i in 0..nb {
                    // dB = A^T * G
                    gemm(k, m, n, &ad[i * m * k..], true, &g[i * m * n..], false, &mut gb[i * k * n..], false);
                }
                gb
            });
            vec![ga, gb]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_x() {
        let eye = Tensor::<f64>::from_vec(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(eye.matmul(&x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn small_product() {
        let a = Tensor::<f32>::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 1], vec![1., 1.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.to_vec(), vec![3., 7.]);
    }

    #[test]
    fn inner_dim_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn batched() {
        let a = Tensor::<f32>::from_vec(&[2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2, 1], vec![1., 1., 2., 0.]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![3., 6.]);
    }
}
