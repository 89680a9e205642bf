//! Synthetic bouncing-sprite clips, the VSEQ container and batching.

use std::path::Path;

use plasm_tensor::{Rng, Tensor};

use crate::error::{Error, FormatError, Result};
use crate::format::{Reader, Writer};

pub const VSEQ_MAGIC: [u8; 4] = *b"VSEQ";
pub const VSEQ_VERSION: u8 = 1;
pub const SPRITE: usize = 12;
pub const MIN_FRAME: usize = 24;

/// Pixel storage of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Pixels {
    /// `[0, 255]`
    U8(Vec<u8>),
    /// `[0, 1]`
    F32(Vec<f32>),
}

impl Pixels {
    fn len(&self) -> usize {
        match self {
            Pixels::U8(v) => v.len(),
            Pixels::F32(v) => v.len(),
        }
    }

    fn dtype_tag(&self) -> u8 {
        match self {
            Pixels::U8(_) => 0,
            Pixels::F32(_) => 1,
        }
    }
}

/// `n_clips x t_total x C x H x W` frames, clip-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoDataset {
    pub n_clips: usize,
    pub t_total: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Pixels,
}

impl VideoDataset {
    pub fn new(dims: [usize; 5], pixels: Pixels) -> Result<Self> {
        let [n_clips, t_total, channels, height, width] = dims;
        let expected = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if expected != Some(pixels.len()) {
            return Err(Error::Data(format!(
                "{} pixels do not fill dims {dims:?}",
                pixels.len()
            )));
        }
        Ok(Self {
            n_clips,
            t_total,
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.n_clips, self.t_total, self.channels, self.height, self.width]
    }

    fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Frames `start..start+len` of `clip`, scaled to `[0, 1]`.
    pub fn clip_frames(&self, clip: usize, start: usize, len: usize) -> Vec<f32> {
        let fl = self.frame_len();
        let lo = (clip * self.t_total + start) * fl;
        let hi = lo + len * fl;
        match &self.pixels {
            Pixels::U8(v) => v[lo..hi].iter().map(|&p| p as f32 / 255.0).collect(),
            Pixels::F32(v) => v[lo..hi].to_vec(),
        }
    }

    /// All pixels scaled to `[0, 1]` as a `[N, T, C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.clip_frames(0, 0, self.n_clips * self.t_total);
        Tensor::from_vec(&self.dims(), data).expect("dims match")
    }

    /// Dataset of `[N, T, C, H, W]` `f32` frames in `[0, 1]`.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let dims: [usize; 5] = t
            .shape()
            .try_into()
            .map_err(|_| Error::Data(format!("expected a rank-5 tensor, got {:?}", t.shape())))?;
        Self::new(dims, Pixels::F32(t.to_vec()))
    }

    /// `(input, target)` of clips `idx`: the first `t_in` frames and the
    /// following `t_out`.
    pub fn batch(&self, idx: &[usize], t_in: usize, t_out: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        self.check_split(t_in, t_out)?;
        let mut x = Vec::with_capacity(idx.len() * t_in * self.frame_len());
        let mut y = Vec::with_capacity(idx.len() * t_out * self.frame_len());
        for &i in idx {
            if i >= self.n_clips {
                return Err(Error::Data(format!("clip {i} out of range ({})", self.n_clips)));
            }
            x.extend(self.clip_frames(i, 0, t_in));
            y.extend(self.clip_frames(i, t_in, t_out));
        }
        let shape = |t| [idx.len(), t, self.channels, self.height, self.width];
        Ok((Tensor::from_vec(&shape(t_in), x)?, Tensor::from_vec(&shape(t_out), y)?))
    }

    pub fn check_split(&self, t_in: usize, t_out: usize) -> Result<()> {
        if t_in + t_out > self.t_total {
            return Err(Error::Data(format!(
                "clips have {} frames, need {t_in} + {t_out}",
                self.t_total
            )));
        }
        Ok(())
    }

    /// Clip indices of each batch of `epoch`: a seeded permutation cut into
    /// full batches, remainder dropped.
    pub fn epoch_batches(&self, batch_size: usize, epoch: usize, rng: &Rng) -> Result<Vec<Vec<usize>>> {
        if batch_size == 0 {
            return Err(Error::Data("batch size must be positive".into()));
        }
        if batch_size > self.n_clips {
            return Err(Error::Data(format!(
                "batch size {batch_size} exceeds {} clips",
                self.n_clips
            )));
        }
        let mut order: Vec<usize> = (0..self.n_clips).collect();
        rng.split(epoch as u64).shuffle(&mut order);
        Ok(order
            .chunks_exact(batch_size)
            .map(<[usize]>::to_vec)
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&VSEQ_MAGIC);
        w.u8(VSEQ_VERSION);
        w.u8(self.pixels.dtype_tag());
        w.bytes(&[0, 0]);
        for d in self.dims() {
            w.u32(d as u32);
        }
        match &self.pixels {
            Pixels::U8(v) => w.bytes(v),
            Pixels::F32(v) => v.iter().for_each(|&x| w.f32(x)),
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(VSEQ_MAGIC)?;
        let version = r.u8()?;
        if version != VSEQ_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let dtype = r.u8()?;
        let elem = match dtype {
            0 => 1,
            1 => 4,
            t => return Err(FormatError::UnknownDtype(t)),
        };
        r.take(2)?;
        let mut raw = [0u64; 5];
        for d in raw.iter_mut() {
            *d = r.u32()? as u64;
        }
        let count = raw
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(elem))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| FormatError::DimOverflow(raw.to_vec()))?;
        if r.remaining() != count {
            return Err(if r.remaining() < count {
                FormatError::Truncated {
                    offset: r.offset(),
                    needed: count - r.remaining(),
                }
            } else {
                FormatError::LengthMismatch {
                    expected: r.offset() + count,
                    actual: bytes.len(),
                }
            });
        }
        let payload = r.take(count)?;
        let pixels = match dtype {
            0 => Pixels::U8(payload.to_vec()),
            _ => Pixels::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
        };
        let dims = raw.map(|d| d as usize);
        Ok(Self::new(dims, pixels).expect("length checked"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

/// One moving sprite: a stamp, a position in `[0, max]^2` and a constant
/// velocity that flips sign on each wall bounce.
#[derive(Debug, Clone, PartialEq)]
pub struct SpriteState {
    pub stamp: [[u8; SPRITE]; SPRITE],
    pub pos: (f64, f64),
    pub vel: (f64, f64),
}

/// Advance one coordinate by `v`, reflecting off `0` and `max`.
pub fn reflect(pos: f64, v: f64, max: f64) -> (f64, f64) {
    let p = pos + v;
    if p > max {
        (2.0 * max - p, -v)
    } else if p < 0.0 {
        (-p, -v)
    } else {
        (p, v)
    }
}

impl SpriteState {
    pub fn step(&mut self, max_x: f64, max_y: f64) {
        let (x, vx) = reflect(self.pos.0, self.vel.0, max_x);
        let (y, vy) = reflect(self.pos.1, self.vel.1, max_y);
        self.pos = (x, y);
        self.vel = (vx, vy);
    }

    pub fn speed(&self) -> f64 {
        self.vel.0.hypot(self.vel.1)
    }
}

/// Procedural 12x12 glyph. Shapes: box, ring, plus, cross, triangle,
/// diamond, bars, and a hook resembling a digit stroke.
pub fn glyph(kind: usize) -> [[u8; SPRITE]; SPRITE] {
    let mut g = [[0u8; SPRITE]; SPRITE];
    let c = (SPRITE as f64 - 1.0) / 2.0;
    for (y, row) in g.iter_mut().enumerate() {
        for (x, px) in row.iter_mut().enumerate() {
            let (fx, fy) = (x as f64 - c, y as f64 - c);
            let r = fx.hypot(fy);
            let on = match kind % 8 {
                0 => fx.abs().max(fy.abs()) > 3.5,
                1 => (3.0..=5.5).contains(&r),
                2 => fx.abs() < 1.6 || fy.abs() < 1.6,
                3 => (fx - fy).abs() < 1.6 || (fx + fy).abs() < 1.6,
                4 => fy > -5.0 && fx.abs() * 2.0 < fy + 5.5,
                5 => fx.abs() + fy.abs() < 5.6,
                6 => y % 4 < 2,
                _ => (x >= 7 && x <= 9) || (y <= 2 && x >= 2) || (y >= 9 && x >= 2 && x <= 9),
            };
            *px = if on { 255 } else { 0 };
        }
    }
    g
}

/// Clips of `n_sprites` bouncing glyphs on a black `H x W` canvas, `u8`,
/// one channel.
pub fn gen_moving_shapes(
    n_clips: usize,
    t_total: usize,
    height: usize,
    width: usize,
    n_sprites: usize,
    rng: &Rng,
) -> Result<VideoDataset> {
    if height < MIN_FRAME || width < MIN_FRAME {
        return Err(Error::Data(format!(
            "frames must be at least {MIN_FRAME}x{MIN_FRAME}, got {height}x{width}"
        )));
    }
    let max_x = (width - SPRITE) as f64;
    let max_y = (height - SPRITE) as f64;
    let plane = height * width;
    let mut data = vec![0u8; n_clips * t_total * plane];
    for clip in 0..n_clips {
        let mut r = rng.split(clip as u64);
        let mut sprites: Vec<SpriteState> = (0..n_sprites)
            .map(|_| {
                let stamp = glyph(r.below(8));
                let pos = (r.uniform_range(0.0, max_x), r.uniform_range(0.0, max_y));
                let speed = r.uniform_range(1.0, 4.0);
                let angle = r.uniform_range(0.0, std::f64::consts::TAU);
                SpriteState {
                    stamp,
                    pos,
                    vel: (speed * angle.cos(), speed * angle.sin()),
                }
            })
            .collect();
        for t in 0..t_total {
            let frame = &mut data[(clip * t_total + t) * plane..][..plane];
            for s in &sprites {
                let (ox, oy) = (s.pos.0.round() as usize, s.pos.1.round() as usize);
                for (dy, row) in s.stamp.iter().enumerate() {
                    for (dx, &v) in row.iter().enumerate() {
                        let p = &mut frame[(oy + dy) * width + ox + dx];
                        *p = (*p).max(v).min(255);
                    }
                }
            }
            for s in &mut sprites {
                s.step(max_x, max_y);
            }
        }
    }
    VideoDataset::new([n_clips, t_total, 1, height, width], Pixels::U8(data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_rule() {
        assert_eq!(reflect(50.0, 3.0, 52.0), (51.0, -3.0));
        assert_eq!(reflect(1.0, -3.0, 52.0), (2.0, 3.0));
        assert_eq!(reflect(10.0, 2.0, 52.0), (12.0, 2.0));
    }

    #[test]
    fn generator_shapes_and_determinism() {
        let a = gen_moving_shapes(3, 5, 32, 40, 2, &Rng::new(7, 0)).unwrap();
        let b = gen_moving_shapes(3, 5, 32, 40, 2, &Rng::new(7, 0)).unwrap();
        assert_eq!(a.dims(), [3, 5, 1, 32, 40]);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(gen_moving_shapes(1, 1, 16, 32, 2, &Rng::new(0, 0)).is_err());
    }

    #[test]
    fn batches_drop_last() {
        let ds = gen_moving_shapes(5, 4, 24, 24, 1, &Rng::new(1, 0)).unwrap();
        let rng = Rng::new(3, 0);
        let b = ds.epoch_batches(2, 0, &rng).unwrap();
        assert_eq!(b.len(), 2);
        let mut seen: Vec<usize> = b.concat();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 4);
        assert_eq!(b, ds.epoch_batches(2, 0, &rng).unwrap());
    }
}
