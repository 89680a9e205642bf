//! Pretraining-only masking: random pixel dropout on input frames and the
//! attention module that hides the strongest channel-pair scores.

use std::cmp::Ordering;

use plasm_nn::{global_avg_pool, join, ConvParams, Module, VisibilityMask};
use plasm_tensor::{Element, Rng, Tensor};

use crate::error::{Error, Result};

/// `floor(ratio * n)`, robust to the ratio being a rounded decimal.
pub fn masked_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Positions of the `count` largest entries of `scores`; ties are broken by
/// lower index first.
pub fn top_positions<T: Element>(scores: &[T], count: usize) -> Vec<bool> {
    let mut mask = vec![false; scores.len()];
    if count == 0 {
        return mask;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let order = |&a: &usize, &b: &usize| -> Ordering {
        scores[b]
            .as_f64()
            .total_cmp(&scores[a].as_f64())
            .then(a.cmp(&b))
    };
    if count < idx.len() {
        idx.select_nth_unstable_by(count - 1, order);
    }
    for &i in &idx[..count.min(scores.len())] {
        mask[i] = true;
    }
    mask
}

/// Zero exactly `floor(ratio*H*W)` pixel positions of every frame, shared
/// across channels. Frame `(b, t)` draws from its own stream so the result
/// does not depend on iteration order.
pub fn mask_input_frames<T: Element>(
    frames: &Tensor<T>,
    ratio: f64,
    rng: &Rng,
) -> Result<(Tensor<T>, VisibilityMask)> {
    let [b, t, c, h, w]: [usize; 5] = frames
        .shape()
        .try_into()
        .map_err(|_| Error::Config(format!("expected [B, T, C, H, W], got {:?}", frames.shape())))?;
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let plane = h * w;
    let count = masked_count(ratio, plane);
    let mut visible = vec![true; b * t * plane];
    for (f, vis) in visible.chunks_mut(plane).enumerate() {
        let mut frame_rng = rng.split(f as u64);
        let mut order: Vec<usize> = (0..plane).collect();
        frame_rng.shuffle(&mut order);
        for &p in &order[..count] {
            vis[p] = false;
        }
    }
    let mask = VisibilityMask::new(b * t, h, w, visible)?;
    let hidden: Vec<bool> = mask
        .as_slice()
        .chunks(plane)
        .flat_map(|m| (0..c).flat_map(move |_| m.iter().map(|&v| !v)))
        .collect();
    Ok((frames.masked_fill(&hidden, T::zero())?, mask))
}

/// Channel attention over per-frame features with the top `floor(r*C~^2)`
/// scores of each frame replaced by `-inf` before the row softmax.
#[derive(Debug, Clone)]
pub struct SpatialMasking<T: Element = f32> {
    pub query: ConvParams<T>,
    pub key: ConvParams<T>,
    pub value_dw: ConvParams<T>,
}

/// Raw and masked scores of one forward pass.
#[derive(Debug, Clone)]
pub struct MaskedAttention<T: Element = f32> {
    /// `[frames, C~, C~]`
    pub scores: Tensor<T>,
    /// Row-softmax of the masked scores, `[frames, C~, C~]`.
    pub probs: Tensor<T>,
    /// Per-frame masked positions, row-major.
    pub masked: Vec<bool>,
    pub masked_count: usize,
}

impl<T: Element> SpatialMasking<T> {
    pub fn new(ch: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            query: ConvParams::new(ch, ch, 1, 1, 1, rng)?,
            key: ConvParams::new(ch, ch, 1, 1, 1, rng)?,
            value_dw: ConvParams::depthwise(ch, 3, rng)?,
        })
    }

    /// `s: [frames, C~, H', W']` to the same shape.
    pub fn forward(&self, s: &Tensor<T>, ratio: f64) -> Result<Tensor<T>> {
        Ok(self.forward_with_attention(s, ratio)?.0)
    }

    pub fn forward_with_attention(&self, s: &Tensor<T>, ratio: f64) -> Result<(Tensor<T>, MaskedAttention<T>)> {
        if s.rank() != 4 {
            return Err(Error::Config(format!("expected [N, C, H, W], got {:?}", s.shape())));
        }
        let [n, c, h, w] = [s.shape()[0], s.shape()[1], s.shape()[2], s.shape()[3]];
        let pooled = global_avg_pool(s)?;
        let q = self.query.forward(&pooled)?.reshape(&[n, c, 1])?;
        let k = self.key.forward(&pooled)?.reshape(&[n, 1, c])?;
        let scores = q.matmul(&k)?.scale(1.0 / (c as f64).sqrt());

        let count = masked_count(ratio, c * c);
        let data = scores.data();
        let masked: Vec<bool> = data.chunks(c * c).flat_map(|a| top_positions(a, count)).collect();
        let probs = scores.masked_fill(&masked, T::neg_infinity())?.softmax(2)?;

        let v = self.value_dw.forward(s)?.reshape(&[n, c, h * w])?;
        let out = probs.matmul(&v)?.reshape(&[n, c, h, w])?;
        Ok((
            out,
            MaskedAttention {
                scores,
                probs,
                masked,
                masked_count: count,
            },
        ))
    }
}

impl<T: Element> Module<T> for SpatialMasking<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value_dw.visit(&join(prefix, "value_dw"), f);
    }
}
