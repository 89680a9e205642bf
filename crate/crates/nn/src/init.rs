use plasm_tensor::{Element, Rng, Tensor};

/// Which side of a weight tensor sets the Kaiming scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FanMode {
    FanIn,
    FanOut,
}

/// `(fan_in, fan_out)` of a `[dim0, dim1, k...]` weight: `dim1 * receptive`
/// and `dim0 * receptive`.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    let receptive: usize = shape.iter().skip(2).product();
    let d0 = shape.first().copied().unwrap_or(1);
    let d1 = shape.get(1).copied().unwrap_or(1);
    (d1 * receptive, d0 * receptive)
}

/// Trainable tensor drawn from `N(0, 2/fan)`.
pub fn kaiming_normal<T: Element>(shape: &[usize], mode: FanMode, rng: &mut Rng) -> Tensor<T> {
    let (fan_in, fan_out) = fans(shape);
    let fan = match mode {
        FanMode::FanIn => fan_in,
        FanMode::FanOut => fan_out,
    }
    .max(1);
    let std = (2.0 / fan as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.normal() * std)).collect();
    Tensor::parameter(shape, data).expect("sized")
}

/// Trainable zero tensor (biases).
pub fn zeros_param<T: Element>(shape: &[usize]) -> Tensor<T> {
    Tensor::parameter(shape, vec![T::zero(); shape.iter().product()]).expect("sized")
}

/// Trainable tensor filled with ones (norm scales).
pub fn ones_param<T: Element>(shape: &[usize]) -> Tensor<T> {
    Tensor::parameter(shape, vec![T::one(); shape.iter().product()]).expect("sized")
}
