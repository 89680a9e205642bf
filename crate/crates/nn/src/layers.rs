use plasm_tensor::{Element, Rng, Tensor, LEAKY_RELU_SLOPE};

use crate::conv::{conv2d, conv_transpose2d, ConvGeometry};
use crate::error::{LayerError, Result};
use crate::init::{kaiming_normal, ones_param, zeros_param, FanMode};
use crate::mask::{sparse_conv2d, VisibilityMask};
use crate::norm::{group_count, group_norm, GROUP_NORM_EPS};

/// Anything holding trainable tensors under stable dotted names.
pub trait Module<T: Element> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>));

    fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn parameters(&self) -> Vec<Tensor<T>> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }
}

/// `prefix.name`, or just `name` at the root.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn check_odd(k: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(LayerError::Config(format!("kernel size {k} must be odd")));
    }
    Ok(())
}

fn check_groups(in_ch: usize, out_ch: usize, groups: usize) -> Result<()> {
    if groups == 0 {
        return Err(LayerError::Config("groups must be positive".into()));
    }
    for (what, value) in [("input channels", in_ch), ("output channels", out_ch)] {
        if value % groups != 0 {
            return Err(LayerError::NotDivisible {
                what,
                value,
                divisor: groups,
            });
        }
    }
    Ok(())
}

/// Same-padded convolution with bias: weight `[out, in/groups, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvParams<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    geom: ConvGeometry,
}

impl<T: Element> ConvParams<T> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        check_odd(kernel)?;
        check_groups(in_ch, out_ch, groups)?;
        if stride == 0 {
            return Err(LayerError::Config("stride must be positive".into()));
        }
        Ok(Self {
            weight: kaiming_normal(&[out_ch, in_ch / groups, kernel, kernel], FanMode::FanIn, rng),
            bias: zeros_param(&[out_ch]),
            geom: ConvGeometry::new(stride, kernel / 2, groups),
        })
    }

    /// Per-channel (depthwise) convolution.
    pub fn depthwise(ch: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        Self::new(ch, ch, kernel, 1, ch, rng)
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geom
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.geom.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, Some(&self.bias), self.geom)
    }

    pub fn forward_sparse(&self, x: &Tensor<T>, mask: &VisibilityMask) -> Result<(Tensor<T>, VisibilityMask)> {
        sparse_conv2d(x, self, mask)
    }
}

impl<T: Element> Module<T> for ConvParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
}

/// Transposed convolution with weight `[in, out/groups, k, k]`; stride 2
/// exactly doubles the spatial size.
#[derive(Debug, Clone)]
pub struct TransposedConvParams<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    geom: ConvGeometry,
}

impl<T: Element> TransposedConvParams<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Result<Self> {
        check_odd(kernel)?;
        if !(1..=2).contains(&stride) {
            return Err(LayerError::Config(format!("transposed stride {stride} not in 1..=2")));
        }
        Ok(Self {
            weight: kaiming_normal(&[in_ch, out_ch, kernel, kernel], FanMode::FanIn, rng),
            bias: zeros_param(&[out_ch]),
            geom: ConvGeometry::new(stride, kernel / 2, 1),
        })
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geom
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv_transpose2d(x, &self.weight, Some(&self.bias), self.geom, self.geom.stride - 1)
    }
}

impl<T: Element> Module<T> for TransposedConvParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct GroupNormParams<T: Element = f32> {
    pub num_groups: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Element> GroupNormParams<T> {
    /// Identity-initialised norm using [`group_count`] groups.
    pub fn new(ch: usize) -> Self {
        Self::with_groups(ch, group_count(ch)).expect("group_count divides ch")
    }

    pub fn with_groups(ch: usize, num_groups: usize) -> Result<Self> {
        if num_groups == 0 || ch % num_groups != 0 {
            return Err(LayerError::NotDivisible {
                what: "group_norm channels",
                value: ch,
                divisor: num_groups,
            });
        }
        Ok(Self {
            num_groups,
            gamma: ones_param(&[ch]),
            beta: zeros_param(&[ch]),
            eps: GROUP_NORM_EPS,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        group_norm(x, self.num_groups, &self.gamma, &self.beta, self.eps)
    }
}

impl<T: Element> Module<T> for GroupNormParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }
}

/// `z + pw2(lrelu(pw1(gn(dw7x7(z)))))` with a 4x channel expansion.
#[derive(Debug, Clone)]
pub struct ConvNeXtBlock<T: Element = f32> {
    pub dw: ConvParams<T>,
    pub norm: GroupNormParams<T>,
    pub pw1: ConvParams<T>,
    pub pw2: ConvParams<T>,
}

impl<T: Element> ConvNeXtBlock<T> {
    pub const KERNEL: usize = 7;
    pub const EXPANSION: usize = 4;

    pub fn new(ch: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            dw: ConvParams::depthwise(ch, Self::KERNEL, rng)?,
            norm: GroupNormParams::new(ch),
            pw1: ConvParams::new(ch, Self::EXPANSION * ch, 1, 1, 1, rng)?,
            pw2: ConvParams::new(Self::EXPANSION * ch, ch, 1, 1, 1, rng)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.dw.out_channels()
    }

    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let got = z.shape().get(1).copied().unwrap_or(0);
        if got != self.channels() {
            return Err(LayerError::ChannelMismatch {
                layer: "convnext_block",
                expected: self.channels(),
                got,
            });
        }
        let h = self.dw.forward(z)?;
        let h = self.norm.forward(&h)?;
        let h = self.pw1.forward(&h)?.leaky_relu(LEAKY_RELU_SLOPE);
        let h = self.pw2.forward(&h)?;
        Ok(z.add(&h)?)
    }
}

impl<T: Element> Module<T> for ConvNeXtBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.dw.visit(&join(prefix, "dw"), f);
        self.norm.visit(&join(prefix, "norm"), f);
        self.pw1.visit(&join(prefix, "pw1"), f);
        self.pw2.visit(&join(prefix, "pw2"), f);
    }
}

/// Plain residual block `z + lrelu(gn(conv3x3(z)))`, the non-ConvNeXt
/// alternative for translator ablations.
#[derive(Debug, Clone)]
pub struct PlainConvBlock<T: Element = f32> {
    pub conv: ConvParams<T>,
    pub norm: GroupNormParams<T>,
}

impl<T: Element> PlainConvBlock<T> {
    pub fn new(ch: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv: ConvParams::new(ch, ch, 3, 1, 1, rng)?,
            norm: GroupNormParams::new(ch),
        })
    }

    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.norm.forward(&self.conv.forward(z)?)?;
        Ok(z.add(&h.leaky_relu(LEAKY_RELU_SLOPE))?)
    }
}

impl<T: Element> Module<T> for PlainConvBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
}

/// conv3x3 -> GN -> LReLU, optionally sparse. The unit of the encoder.
#[derive(Debug, Clone)]
pub struct ConvNormAct<T: Element = f32> {
    pub conv: ConvParams<T>,
    pub norm: GroupNormParams<T>,
}

impl<T: Element> ConvNormAct<T> {
    pub fn new(in_ch: usize, out_ch: usize, stride: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv: ConvParams::new(in_ch, out_ch, 3, stride, 1, rng)?,
            norm: GroupNormParams::new(out_ch),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.norm.forward(&self.conv.forward(x)?)?;
        Ok(h.leaky_relu(LEAKY_RELU_SLOPE))
    }

    /// Sparse variant; the returned mask describes the output grid.
    pub fn forward_sparse(&self, x: &Tensor<T>, mask: &VisibilityMask) -> Result<(Tensor<T>, VisibilityMask)> {
        let (h, m) = self.conv.forward_sparse(x, mask)?;
        let h = self.norm.forward(&h)?;
        Ok((h.leaky_relu(LEAKY_RELU_SLOPE), m))
    }
}

impl<T: Element> Module<T> for ConvNormAct<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convnext_zero_branch_is_identity() {
        let mut rng = Rng::new(1, 0);
        let block = ConvNeXtBlock::<f32>::new(4, &mut rng).unwrap();
        block.pw2.weight.update_data(|w| w.fill(0.0)).unwrap();
        let z = Tensor::from_vec(&[1, 4, 5, 5], (0..100).map(|v| v as f32 * 0.1).collect()).unwrap();
        assert_eq!(block.forward(&z).unwrap().to_vec(), z.to_vec());
    }

    #[test]
    fn names_are_hierarchical() {
        let mut rng = Rng::new(1, 0);
        let block = ConvNeXtBlock::<f32>::new(2, &mut rng).unwrap();
        let names: Vec<String> = block.named_parameters().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "dw.weight");
        assert_eq!(names[2], "norm.gamma");
        assert_eq!(names.len(), 8);
    }

    #[test]
    fn rejects_even_kernel_and_bad_groups() {
        let mut rng = Rng::new(1, 0);
        assert!(ConvParams::<f32>::new(4, 4, 2, 1, 1, &mut rng).is_err());
        assert!(ConvParams::<f32>::new(3, 4, 3, 1, 2, &mut rng).is_err());
    }

    #[test]
    fn convnext_channel_mismatch() {
        let mut rng = Rng::new(1, 0);
        let block = ConvNeXtBlock::<f32>::new(4, &mut rng).unwrap();
        let z = Tensor::zeros(&[1, 3, 4, 4]);
        assert!(matches!(block.forward(&z), Err(LayerError::ChannelMismatch { .. })));
    }
}
