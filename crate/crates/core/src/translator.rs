use plasm_nn::{global_avg_pool, join, ConvNeXtBlock, ConvParams, Module, PlainConvBlock};
use plasm_tensor::{Element, Rng, Tensor};

use crate::config::{BlockKind, ModelConfig};
use crate::error::{Error, Result};

/// Residual block variant used in the translator stack.
#[derive(Debug, Clone)]
pub enum ResBlock<T: Element = f32> {
    ConvNeXt(ConvNeXtBlock<T>),
    Plain(PlainConvBlock<T>),
}

impl<T: Element> ResBlock<T> {
    pub fn new(kind: BlockKind, ch: usize, rng: &mut Rng) -> Result<Self> {
        Ok(match kind {
            BlockKind::ConvNeXt => ResBlock::ConvNeXt(ConvNeXtBlock::new(ch, rng)?),
            BlockKind::Plain => ResBlock::Plain(PlainConvBlock::new(ch, rng)?),
        })
    }

    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(match self {
            ResBlock::ConvNeXt(b) => b.forward(z)?,
            ResBlock::Plain(b) => b.forward(z)?,
        })
    }
}

impl<T: Element> Module<T> for ResBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        match self {
            ResBlock::ConvNeXt(b) => b.visit(prefix, f),
            ResBlock::Plain(b) => b.visit(prefix, f),
        }
    }
}

/// Intermediate values of one attention block, exposed for inspection.
#[derive(Debug, Clone)]
pub struct AttentionInternals<T: Element = f32> {
    /// `[B, C^, 1]`
    pub q: Tensor<T>,
    /// `[B, C^, 1]`
    pub k: Tensor<T>,
    /// `[B, C^, H', W']`
    pub v: Tensor<T>,
    /// Raw per-head scores `[B, heads]`.
    pub head_scores: Tensor<T>,
    /// Rescaled weights `[B, heads]`, averaging to one per sample.
    pub head_weights: Tensor<T>,
}

/// Softmax over the head axis of `[B, heads]` scores, scaled by `heads`.
pub fn head_weights<T: Element>(scores: &Tensor<T>) -> Result<Tensor<T>> {
    let heads = scores.shape()[1];
    Ok(scores.softmax(1)?.scale(heads as f64))
}

/// Pair-wise layer attention: gates a value map derived from the previous
/// attention output by a per-head score between a low-level feature and
/// that output.
#[derive(Debug, Clone)]
pub struct PlaBlock<T: Element = f32> {
    pub query: ConvParams<T>,
    pub key: ConvParams<T>,
    pub value_block: ResBlock<T>,
    pub value_dw: ConvParams<T>,
    pub heads: usize,
}

impl<T: Element> PlaBlock<T> {
    pub fn new(ch: usize, heads: usize, kind: BlockKind, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || ch % heads != 0 {
            return Err(Error::Config(format!("channels {ch} not divisible by heads {heads}")));
        }
        Ok(Self {
            query: ConvParams::new(ch, ch, 1, 1, 1, rng)?,
            key: ConvParams::new(ch, ch, 1, 1, 1, rng)?,
            value_block: ResBlock::new(kind, ch, rng)?,
            value_dw: ConvParams::depthwise(ch, 3, rng)?,
            heads,
        })
    }

    pub fn forward(&self, z_conv: &Tensor<T>, z_prev: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with_internals(z_conv, z_prev)?.0)
    }

    pub fn forward_with_internals(
        &self,
        z_conv: &Tensor<T>,
        z_prev: &Tensor<T>,
    ) -> Result<(Tensor<T>, AttentionInternals<T>)> {
        if z_conv.shape() != z_prev.shape() || z_conv.rank() != 4 {
            return Err(Error::Config(format!(
                "attention inputs differ: {:?} vs {:?}",
                z_conv.shape(),
                z_prev.shape()
            )));
        }
        let [b, c, h, w] = [z_conv.shape()[0], z_conv.shape()[1], z_conv.shape()[2], z_conv.shape()[3]];
        let d = c / self.heads;
        let q = self.query.forward(&global_avg_pool(z_conv)?)?.reshape(&[b, c, 1])?;
        let k = self.key.forward(&global_avg_pool(z_prev)?)?.reshape(&[b, c, 1])?;
        let v = self.value_dw.forward(&self.value_block.forward(z_prev)?)?;

        let scores = q
            .reshape(&[b, self.heads, d])?
            .mul(&k.reshape(&[b, self.heads, d])?)?
            .sum(&[2], false)?
            .scale(1.0 / (d as f64).sqrt());
        let weights = head_weights(&scores)?;
        let out = v
            .reshape(&[b, self.heads, d, h, w])?
            .mul(&weights.reshape(&[b, self.heads, 1, 1, 1])?)?
            .reshape(&[b, c, h, w])?;
        Ok((
            out,
            AttentionInternals {
                q,
                k,
                v,
                head_scores: scores,
                head_weights: weights,
            },
        ))
    }
}

impl<T: Element> Module<T> for PlaBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value_block.visit(&join(prefix, "value_block"), f);
        self.value_dw.visit(&join(prefix, "value_dw"), f);
    }
}

/// U-shaped translator: a bottom-up residual stack whose outputs are
/// consumed top-down by attention blocks, between 1x1 entry/exit projections.
#[derive(Debug, Clone)]
pub struct Translator<T: Element = f32> {
    pub entry: ConvParams<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub pla: Vec<PlaBlock<T>>,
    pub exit: ConvParams<T>,
}

impl<T: Element> Translator<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let ch = cfg.hid_channels;
        let entry = ConvParams::new(cfg.t_in * cfg.enc_channels, ch, 1, 1, 1, rng)?;
        let blocks = (0..cfg.trans_depth)
            .map(|_| ResBlock::new(cfg.block, ch, rng))
            .collect::<Result<_>>()?;
        let pla = if cfg.use_pla {
            (0..cfg.trans_depth)
                .map(|_| PlaBlock::new(ch, cfg.heads, cfg.block, rng))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let exit = ConvParams::new(ch, cfg.t_out * cfg.enc_channels, 1, 1, 1, rng)?;
        Ok(Self {
            entry,
            blocks,
            pla,
            exit,
        })
    }

    pub fn forward(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        let mut zs = vec![self.entry.forward(s)?];
        for block in &self.blocks {
            let next = block.forward(zs.last().expect("non-empty"))?;
            zs.push(next);
        }
        let n = self.blocks.len();
        let mut z_bar = zs[n].clone();
        for (j, pla) in self.pla.iter().enumerate() {
            // block j+1 pairs with Z_{N-j}
            z_bar = pla.forward(&zs[n - j], &z_bar)?;
        }
        Ok(self.exit.forward(&z_bar)?)
    }
}

impl<T: Element> Module<T> for Translator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.entry.visit(&join(prefix, "entry"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        for (i, b) in self.pla.iter().enumerate() {
            b.visit(&join(prefix, &format!("pla.{i}")), f);
        }
        self.exit.visit(&join(prefix, "exit"), f);
    }
}
