//! Spatial visibility masks and sparse convolution.
//!
//! A mask marks which pixels of each sample carry information. Sparse
//! convolution never lets an invisible pixel influence the result and
//! forces invisible output positions to exactly zero, so a masked feature
//! map stays masked through a whole stack of layers.

use std::sync::Arc;

use plasm_tensor::{Element, Tensor};

use crate::error::{LayerError, Result};
use crate::layers::ConvParams;

/// Per-sample boolean visibility over an `H x W` grid, shape `[B, 1, H, W]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    batch: usize,
    height: usize,
    width: usize,
    /// Number of stride-2 downsamplings applied since the input resolution.
    level: usize,
    data: Arc<Vec<bool>>,
}

impl VisibilityMask {
    pub fn new(batch: usize, height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != batch * height * width {
            return Err(LayerError::MaskShape {
                mask: vec![data.len()],
                features: vec![batch, 1, height, width],
            });
        }
        Ok(Self {
            batch,
            height,
            width,
            level: 0,
            data: Arc::new(data),
        })
    }

    pub fn all_visible(batch: usize, height: usize, width: usize) -> Self {
        Self::new(batch, height, width, vec![true; batch * height * width]).expect("sized")
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, 1, self.height, self.width]
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn is_visible(&self, b: usize, y: usize, x: usize) -> bool {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn count_visible(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Mask for a `stride`-subsampled grid: output pixel `(y, x)` takes the
    /// visibility of input pixel `(y*stride, x*stride)`.
    pub fn downsample(&self, stride: usize) -> Self {
        if stride == 1 {
            return self.clone();
        }
        let h = self.height.div_ceil(stride);
        let w = self.width.div_ceil(stride);
        let mut data = Vec::with_capacity(self.batch * h * w);
        for b in 0..self.batch {
            for y in 0..h {
                for x in 0..w {
                    data.push(self.is_visible(b, y * stride, x * stride));
                }
            }
        }
        Self {
            batch: self.batch,
            height: h,
            width: w,
            level: self.level + 1,
            data: Arc::new(data),
        }
    }

    fn check(&self, x: &[usize]) -> Result<()> {
        if x.len() != 4 || x[0] != self.batch || x[2] != self.height || x[3] != self.width {
            return Err(LayerError::MaskShape {
                mask: self.shape().to_vec(),
                features: x.to_vec(),
            });
        }
        Ok(())
    }
}

/// Zero every channel of `x: [B, C, H, W]` at invisible positions.
/// Gradients are blocked there as well.
pub fn apply_mask<T: Element>(x: &Tensor<T>, mask: &VisibilityMask) -> Result<Tensor<T>> {
    mask.check(x.shape())?;
    let [batch, ch, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let plane = h * w;
    let mut hidden = Vec::with_capacity(batch * ch * plane);
    for b in 0..batch {
        let m = &mask.data[b * plane..(b + 1) * plane];
        for _ in 0..ch {
            hidden.extend(m.iter().map(|&v| !v));
        }
    }
    Ok(x.masked_fill(&hidden, T::zero())?)
}

/// Convolution that reads only visible inputs and writes only visible outputs.
///
/// Returns the output together with the mask at the output resolution. With
/// an all-visible mask the result equals the dense convolution bit for bit.
pub fn sparse_conv2d<T: Element>(
    x: &Tensor<T>,
    conv: &ConvParams<T>,
    mask: &VisibilityMask,
) -> Result<(Tensor<T>, VisibilityMask)> {
    let masked = apply_mask(x, mask)?;
    let y = conv.forward(&masked)?;
    let out_mask = mask.downsample(conv.geometry().stride);
    let y = apply_mask(&y, &out_mask)?;
    Ok((y, out_mask))
}
