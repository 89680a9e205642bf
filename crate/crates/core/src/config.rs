use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Residual block used inside the translator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    ConvNeXt,
    Plain,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::ConvNeXt => "convnext",
            BlockKind::Plain => "plain",
        })
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convnext" => Ok(BlockKind::ConvNeXt),
            "plain" | "conv" => Ok(BlockKind::Plain),
            _ => Err(Error::Config(format!("unknown block kind {s:?}"))),
        }
    }
}

/// Architecture and masking hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Observed frames T.
    pub t_in: usize,
    /// Predicted frames T'.
    pub t_out: usize,
    /// Encoder width C~.
    pub enc_channels: usize,
    /// Translator width C^.
    pub hid_channels: usize,
    /// Encoder/decoder depth M.
    pub enc_depth: usize,
    /// Translator depth N.
    pub trans_depth: usize,
    pub heads: usize,
    /// Input pixel mask ratio r0.
    pub input_mask_ratio: f64,
    /// Attention mask ratio r.
    pub attn_mask_ratio: f64,
    pub epochs: usize,
    pub use_pla: bool,
    /// Pretraining routes features through the masked attention module;
    /// when false they pass straight to the decoder.
    pub use_sm: bool,
    pub block: BlockKind,
}

impl ModelConfig {
    /// Spatial downsampling factor of the encoder, `2^floor(M/2)`.
    pub fn downsample(&self) -> usize {
        1 << (self.enc_depth / 2)
    }

    /// Spatial size `(H', W')` of encoder features.
    pub fn latent_hw(&self) -> (usize, usize) {
        (self.height / self.downsample(), self.width / self.downsample())
    }

    /// Whether encoder block `i` (1-based) halves resolution.
    pub fn encoder_stride(&self, i: usize) -> usize {
        if i % 2 == 0 {
            2
        } else {
            1
        }
    }

    /// Stride of decoder block `j` (1-based), mirroring encoder block `M - j + 1`.
    pub fn decoder_stride(&self, j: usize) -> usize {
        self.encoder_stride(self.enc_depth + 1 - j)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("t_in", self.t_in),
            ("t_out", self.t_out),
            ("enc_channels", self.enc_channels),
            ("hid_channels", self.hid_channels),
            ("enc_depth", self.enc_depth),
            ("trans_depth", self.trans_depth),
            ("heads", self.heads),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        let d = self.downsample();
        if self.height % d != 0 || self.width % d != 0 {
            return err(format!(
                "frame size {}x{} not divisible by 2^floor(M/2) = {d}",
                self.height, self.width
            ));
        }
        if self.hid_channels % self.heads != 0 {
            return err(format!(
                "hid_channels {} not divisible by heads {}",
                self.hid_channels, self.heads
            ));
        }
        if self.hid_channels % 2 != 0 {
            return err(format!("hid_channels {} must be even", self.hid_channels));
        }
        for (name, r) in [("r0", self.input_mask_ratio), ("r", self.attn_mask_ratio)] {
            if !(0.0..=1.0).contains(&r) {
                return err(format!("{name} = {r} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Learning-rate schedule family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    Cosine,
    OneCycle,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
            Schedule::OneCycle => "one-cycle",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            "one-cycle" | "onecycle" | "one_cycle" => Ok(Schedule::OneCycle),
            _ => Err(Error::Config(format!("unknown schedule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: Schedule,
}

impl OptimizerConfig {
    pub fn adam(lr: f64, schedule: Schedule) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("beta {b} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Named hyperparameter presets, one per benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    MovingMnist,
    TaxiBj,
    Human36m,
    Kitti,
    Kth,
    Kth40,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::MovingMnist,
        Preset::TaxiBj,
        Preset::Human36m,
        Preset::Kitti,
        Preset::Kth,
        Preset::Kth40,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::MovingMnist => "mmnist",
            Preset::TaxiBj => "taxibj",
            Preset::Human36m => "human36m",
            Preset::Kitti => "kitti",
            Preset::Kth => "kth",
            Preset::Kth40 => "kth40",
        }
    }

    pub fn model(self) -> ModelConfig {
        // (H, W, C, T, T', r0, C~, C^, M, N, epochs, heads)
        let (h, w, c, t, tp, r0, ce, ch, m, n, epochs, heads) = match self {
            Preset::MovingMnist => (64, 64, 1, 10, 10, 0.96, 64, 512, 4, 4, 2000, 2),
            Preset::TaxiBj => (32, 32, 2, 4, 4, 0.97, 32, 256, 2, 4, 50, 8),
            Preset::Human36m => (128, 128, 3, 4, 4, 0.95, 64, 128, 2, 3, 50, 2),
            Preset::Kitti => (128, 160, 3, 10, 1, 0.95, 64, 256, 2, 3, 50, 8),
            Preset::Kth => (128, 128, 1, 10, 20, 0.90, 32, 128, 3, 3, 100, 2),
            Preset::Kth40 => (128, 128, 1, 10, 40, 0.90, 32, 128, 3, 3, 100, 2),
        };
        ModelConfig {
            height: h,
            width: w,
            channels: c,
            t_in: t,
            t_out: tp,
            enc_channels: ce,
            hid_channels: ch,
            enc_depth: m,
            trans_depth: n,
            heads,
            input_mask_ratio: r0,
            attn_mask_ratio: 0.1,
            epochs,
            use_pla: true,
            use_sm: true,
            block: BlockKind::ConvNeXt,
        }
    }

    pub fn optimizer(self) -> OptimizerConfig {
        match self {
            Preset::MovingMnist => OptimizerConfig::adam(0.01, Schedule::OneCycle),
            Preset::TaxiBj => OptimizerConfig::adam(0.001, Schedule::Cosine),
            _ => OptimizerConfig::adam(0.001, Schedule::OneCycle),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_schedule_mirrors() {
        let cfg = Preset::MovingMnist.model();
        let enc: Vec<_> = (1..=4).map(|i| cfg.encoder_stride(i)).collect();
        let dec: Vec<_> = (1..=4).map(|j| cfg.decoder_stride(j)).collect();
        assert_eq!(enc, [1, 2, 1, 2]);
        assert_eq!(dec, [2, 1, 2, 1]);
        assert_eq!(cfg.latent_hw(), (16, 16));
    }

    #[test]
    fn presets_validate() {
        for p in Preset::ALL {
            p.model().validate().unwrap();
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn odd_depth_accepted_when_divisible() {
        let mut cfg = Preset::MovingMnist.model();
        cfg.enc_depth = 3;
        cfg.validate().unwrap();
        assert_eq!(cfg.latent_hw(), (32, 32));
    }

    #[test]
    fn rejects_bad_heads_and_ratio() {
        let mut cfg = Preset::MovingMnist.model();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = Preset::MovingMnist.model();
        cfg.input_mask_ratio = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = Preset::MovingMnist.model();
        cfg.height = 62;
        assert!(cfg.validate().is_err());
    }
}
