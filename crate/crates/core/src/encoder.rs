use plasm_nn::{join, ConvNormAct, ConvParams, GroupNormParams, Module, TransposedConvParams, VisibilityMask};
use plasm_tensor::{Element, Rng, Tensor, LEAKY_RELU_SLOPE};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

fn dims5(t: &Tensor<impl Element>) -> Result<[usize; 5]> {
    t.shape()
        .try_into()
        .map_err(|_| Error::Config(format!("expected [B, T, C, H, W] frames, got {:?}", t.shape())))
}

/// Per-frame convolutional encoder producing `[B, T*C~, H', W']`.
#[derive(Debug, Clone)]
pub struct Encoder<T: Element = f32> {
    pub blocks: Vec<ConvNormAct<T>>,
    channels: usize,
    width: usize,
}

impl<T: Element> Encoder<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let blocks = (1..=cfg.enc_depth)
            .map(|i| {
                let cin = if i == 1 { cfg.channels } else { cfg.enc_channels };
                ConvNormAct::new(cin, cfg.enc_channels, cfg.encoder_stride(i), rng)
            })
            .collect::<plasm_nn::Result<_>>()?;
        Ok(Self {
            blocks,
            channels: cfg.channels,
            width: cfg.enc_channels,
        })
    }

    /// Encodes `[B, T, C, H, W]` frames. With a mask (batch `B*T`) every
    /// convolution is sparse.
    pub fn forward(&self, frames: &Tensor<T>, mask: Option<&VisibilityMask>) -> Result<Tensor<T>> {
        let [b, t, c, h, w] = dims5(frames)?;
        if c != self.channels {
            return Err(Error::Config(format!("expected {} channels, got {c}", self.channels)));
        }
        let mut x = frames.reshape(&[b * t, c, h, w])?;
        match mask {
            Some(m) => {
                let mut m = m.clone();
                for block in &self.blocks {
                    let (y, next) = block.forward_sparse(&x, &m)?;
                    x = y;
                    m = next;
                }
            }
            None => {
                for block in &self.blocks {
                    x = block.forward(&x)?;
                }
            }
        }
        let (hp, wp) = (x.shape()[2], x.shape()[3]);
        Ok(x.reshape(&[b, t * self.width, hp, wp])?)
    }
}

impl<T: Element> Module<T> for Encoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
    }
}

/// Upsampling unit: transposed conv3x3 -> GN -> LReLU.
#[derive(Debug, Clone)]
pub struct UpBlock<T: Element = f32> {
    pub conv: TransposedConvParams<T>,
    pub norm: GroupNormParams<T>,
}

impl<T: Element> UpBlock<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.norm.forward(&self.conv.forward(x)?)?;
        Ok(h.leaky_relu(LEAKY_RELU_SLOPE))
    }
}

impl<T: Element> Module<T> for UpBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
}

/// Mirror of [`Encoder`] followed by a linear 1x1 projection to pixels.
#[derive(Debug, Clone)]
pub struct Decoder<T: Element = f32> {
    pub blocks: Vec<UpBlock<T>>,
    pub out: ConvParams<T>,
    width: usize,
}

impl<T: Element> Decoder<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let c = cfg.enc_channels;
        let blocks = (1..=cfg.enc_depth)
            .map(|j| {
                Ok(UpBlock {
                    conv: TransposedConvParams::new(c, c, 3, cfg.decoder_stride(j), rng)?,
                    norm: GroupNormParams::new(c),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            out: ConvParams::new(c, cfg.channels, 1, 1, 1, rng)?,
            width: c,
        })
    }

    /// Decodes `[B, frames*C~, H', W']` into `[B, frames, C, H, W]`.
    pub fn forward(&self, feat: &Tensor<T>, frames: usize) -> Result<Tensor<T>> {
        let s = feat.shape();
        if s.len() != 4 || s[1] != frames * self.width {
            return Err(Error::Config(format!(
                "decoder expects [B, {}, H', W'], got {s:?}",
                frames * self.width
            )));
        }
        let b = s[0];
        let mut x = feat.reshape(&[b * frames, self.width, s[2], s[3]])?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        let y = self.out.forward(&x)?;
        let ys = y.shape().to_vec();
        Ok(y.reshape(&[b, frames, ys[1], ys[2], ys[3]])?)
    }
}

impl<T: Element> Module<T> for Decoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }
}
