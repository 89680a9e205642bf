use crate::element::Element;
use crate::error::Result;
use crate::shape::{broadcast_shape, broadcast_strides, for_each_broadcast, numel};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Element>(self, x: T, y: T) -> T {
        match self {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => x / y,
        }
    }
}

fn binary<T: Element>(op: BinOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(op.name(), a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let same = a.shape() == b.shape();
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);

    let data: Vec<T> = if same {
        ad.iter().zip(bd.iter()).map(|(&x, &y)| op.apply(x, y)).collect()
    } else {
        let mut out = vec![T::zero(); numel(&out_shape)];
        for_each_broadcast(&out_shape, &sa, &sb, |i, ia, ib| {
            out[i] = op.apply(ad[ia], bd[ib]);
        });
        out
    };

    let (na, nb) = (a.numel(), b.numel());
    let shape = out_shape.clone();
    Ok(Tensor::from_op(op.name(), out_shape, data, &[a, b], move |g, needs| {
        let mut ga = needs[0].then(|| vec![T::zero(); na]);
        let mut gb = needs[1].then(|| vec![T::zero(); nb]);
        for_each_broadcast(&shape, &sa, &sb, |i, ia, ib| {
            let gi = g[i];
            match op {
                BinOp::Add => {
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += gi;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += gi;
                    }
                }
                BinOp::Sub => {
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += gi;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] -= gi;
                    }
                }
                BinOp::Mul => {
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += gi * bd[ib];
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += gi * ad[ia];
                    }
                }
                BinOp::Div => {
                    let y = bd[ib];
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += gi / y;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] -= gi * ad[ia] / (y * y);
                    }
                }
            }
        });
        vec![ga, gb]
    }))
}

impl<T: Element> Tensor<T> {
    /// Elementwise sum with trailing-dimension broadcasting.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinOp::Sub, self, other)
    }

    /// Elementwise (broadcasting) product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinOp::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinOp::Div, self, other)
    }
}
