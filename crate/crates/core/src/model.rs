use std::collections::HashMap;

use plasm_nn::{join, Module};
use plasm_tensor::{Element, Rng, Tensor};

use crate::config::ModelConfig;
use crate::encoder::{Decoder, Encoder};
use crate::error::{Error, FormatError, Result};
use crate::masking::{mask_input_frames, SpatialMasking};
use crate::translator::Translator;

/// Top-level name prefixes of the four parameter groups.
pub const ENCODER: &str = "encoder";
pub const TRANSLATOR: &str = "translator";
pub const DECODER: &str = "decoder";
pub const MASKING: &str = "sm";

/// Encoder, translator, decoder and the pretraining attention module.
#[derive(Debug, Clone)]
pub struct Model<T: Element = f32> {
    pub cfg: ModelConfig,
    pub encoder: Encoder<T>,
    pub translator: Translator<T>,
    pub decoder: Decoder<T>,
    pub masking: SpatialMasking<T>,
}

impl<T: Element> Model<T> {
    /// Kaiming-initialised model. Each group draws from its own stream so
    /// ablation switches in one group leave the others' weights unchanged.
    pub fn new(cfg: &ModelConfig, rng: &Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder: Encoder::new(cfg, &mut rng.split(1))?,
            translator: Translator::new(cfg, &mut rng.split(2))?,
            decoder: Decoder::new(cfg, &mut rng.split(3))?,
            masking: SpatialMasking::new(cfg.enc_channels, &mut rng.split(4))?,
        })
    }

    fn check_frames(&self, frames: &Tensor<T>, t: usize) -> Result<()> {
        let c = &self.cfg;
        let want = [c.height, c.width, c.channels];
        let s = frames.shape();
        if s.len() != 5 || s[1] != t || [s[3], s[4], s[2]] != want {
            return Err(Error::Config(format!(
                "frames {s:?} do not match [B, {t}, {}, {}, {}]",
                c.channels, c.height, c.width
            )));
        }
        Ok(())
    }

    /// `[B, T, C, H, W]` observed frames to `[B, T', C, H, W]` predictions.
    pub fn predict(&self, frames: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_frames(frames, self.cfg.t_in)?;
        let s = self.encoder.forward(frames, None)?;
        self.predict_from_features(&s)
    }

    /// Translator and decoder on precomputed encoder features.
    pub fn predict_from_features(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        let z = self.translator.forward(s)?;
        self.decoder.forward(&z, self.cfg.t_out)
    }

    /// Masked reconstruction used for pretraining: pixel-masks the input,
    /// encodes sparsely, applies the masked attention module and decodes
    /// all `T` frames.
    pub fn reconstruct(&self, frames: &Tensor<T>, rng: &Rng) -> Result<Tensor<T>> {
        self.check_frames(frames, frames.shape().get(1).copied().unwrap_or(0))?;
        let (masked, vis) = mask_input_frames(frames, self.cfg.input_mask_ratio, rng)?;
        let s = self.encoder.forward(&masked, Some(&vis))?;
        let [b, tc, h, w] = [s.shape()[0], s.shape()[1], s.shape()[2], s.shape()[3]];
        let t = frames.shape()[1];
        let s = if self.cfg.use_sm {
            let per_frame = s.reshape(&[b * t, tc / t, h, w])?;
            self.masking
                .forward(&per_frame, self.cfg.attn_mask_ratio)?
                .reshape(&[b, tc, h, w])?
        } else {
            s
        };
        self.decoder.forward(&s, t)
    }

    /// Parameters of one group, named with the group prefix.
    pub fn group(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        let mut push = |name: String, t: &Tensor<T>| out.push((name, t.clone()));
        match prefix {
            ENCODER => self.encoder.visit(ENCODER, &mut push),
            TRANSLATOR => self.translator.visit(TRANSLATOR, &mut push),
            DECODER => self.decoder.visit(DECODER, &mut push),
            MASKING => self.masking.visit(MASKING, &mut push),
            _ => {}
        }
        out
    }

    /// Overwrite parameters from `(name, shape, data)` records. Names
    /// absent from `source` keep their values; every tensor in `groups`
    /// must be present.
    pub fn load_groups(
        &self,
        source: &HashMap<&str, (&[usize], &[f32])>,
        groups: &[&str],
    ) -> Result<()> {
        for &g in groups {
            for (name, t) in self.group(g) {
                let (shape, data) = source
                    .get(name.as_str())
                    .ok_or_else(|| FormatError::MissingTensor(name.clone()))?;
                if *shape != t.shape() {
                    return Err(FormatError::ShapeMismatch {
                        name,
                        shape: shape.to_vec(),
                        expected: t.shape().to_vec(),
                    }
                    .into());
                }
                t.set_data(data.iter().map(|&v| T::from_f64(v as f64)).collect())?;
            }
        }
        Ok(())
    }
}

impl<T: Element> Module<T> for Model<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.encoder.visit(&join(prefix, ENCODER), f);
        self.translator.visit(&join(prefix, TRANSLATOR), f);
        self.decoder.visit(&join(prefix, DECODER), f);
        self.masking.visit(&join(prefix, MASKING), f);
    }
}
