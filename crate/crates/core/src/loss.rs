use plasm_tensor::{Element, Tensor};

use crate::error::{Error, Result};

/// Squared error summed over each frame's pixels, averaged over batch and
/// frames. Inputs are `[B, T, C, H, W]`.
pub fn frame_mse<T: Element>(target: &Tensor<T>, pred: &Tensor<T>) -> Result<Tensor<T>> {
    if target.shape() != pred.shape() || target.rank() != 5 {
        return Err(Error::Config(format!(
            "loss inputs differ or are not [B, T, C, H, W]: {:?} vs {:?}",
            target.shape(),
            pred.shape()
        )));
    }
    let frames = (target.shape()[0] * target.shape()[1]) as f64;
    Ok(pred.sub(target)?.square().sum_all().scale(1.0 / frames))
}

/// Reconstruction loss over all observed frames.
pub fn loss_reconstruction<T: Element>(x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<Tensor<T>> {
    frame_mse(x, x_hat)
}

/// Prediction loss over the future frames.
pub fn loss_prediction<T: Element>(y: &Tensor<T>, y_hat: &Tensor<T>) -> Result<Tensor<T>> {
    frame_mse(y, y_hat)
}
