//! Frame-quality metrics on `[B, T, C, H, W]` sequences with pixels in `[0, 1]`.
//!
//! MSE and MAE sum over each frame's `C x H x W` pixels and average over
//! frames; PSNR is computed per frame from the per-pixel MSE and averaged.

use std::fmt;

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Borrowed `[B, T, C, H, W]` pixels.
#[derive(Debug, Clone, Copy)]
pub struct Frames<'a> {
    pub data: &'a [f64],
    pub shape: [usize; 5],
}

impl<'a> Frames<'a> {
    pub fn new(data: &'a [f64], shape: [usize; 5]) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Data(format!("{} values do not fill {shape:?}", data.len())));
        }
        Ok(Self { data, shape })
    }

    pub fn frame_count(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn frame_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn frames(&self) -> impl Iterator<Item = &'a [f64]> {
        self.data.chunks(self.frame_len().max(1))
    }
}

fn check(a: &Frames, b: &Frames) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Data(format!("shape mismatch {:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

fn per_frame(a: &Frames, b: &Frames, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    check(a, b)?;
    Ok(a.frames()
        .zip(b.frames())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| f(p - q)).sum())
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Summed squared error per frame, averaged over frames.
pub fn mse(y: &Frames, y_hat: &Frames) -> Result<f64> {
    Ok(mean(&per_frame(y, y_hat, |d| d * d)?))
}

/// Summed absolute error per frame, averaged over frames.
pub fn mae(y: &Frames, y_hat: &Frames) -> Result<f64> {
    Ok(mean(&per_frame(y, y_hat, f64::abs)?))
}

/// `10 log10(1 / mse)` for per-pixel MSE; `+inf` on exact match.
pub fn psnr_from_mse(mse_per_pixel: f64) -> f64 {
    if mse_per_pixel == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse_per_pixel).log10()
    }
}

/// Per-frame PSNR averaged over frames.
pub fn psnr(y: &Frames, y_hat: &Frames) -> Result<f64> {
    let n = y.frame_len() as f64;
    let v: Vec<f64> = per_frame(y, y_hat, |d| d * d)?
        .into_iter()
        .map(|s| psnr_from_mse(s / n))
        .collect();
    Ok(mean(&v))
}

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Valid-mode separable Gaussian filter of an `h x w` plane.
fn blur(src: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one `h x w` plane pair over all valid window positions.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Data(format!(
            "{h}x{w} frame smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let taps = gaussian_taps();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, mu_b) = (blur(a, h, w, &taps), blur(b, h, w, &taps));
    let (e_aa, e_bb, e_ab) = (blur(&sq(a), h, w, &taps), blur(&sq(b), h, w, &taps), blur(&ab, h, w, &taps));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let vals: Vec<f64> = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect();
    Ok(mean(&vals))
}

/// SSIM of one `[C, H, W]` frame pair: mean over channels.
pub fn ssim_frame(a: &[f64], b: &[f64], [c, h, w]: [usize; 3]) -> Result<f64> {
    let plane = h * w;
    let v = (0..c)
        .map(|k| ssim_plane(&a[k * plane..(k + 1) * plane], &b[k * plane..(k + 1) * plane], h, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&v))
}

/// Frame SSIM averaged over batch and time.
pub fn ssim(y: &Frames, y_hat: &Frames) -> Result<f64> {
    check(y, y_hat)?;
    let dims = [y.shape[2], y.shape[3], y.shape[4]];
    let v = y
        .frames()
        .zip(y_hat.frames())
        .map(|(a, b)| ssim_frame(a, b, dims))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    pub ssim: f64,
    pub psnr_db: f64,
    /// Per predicted time step: `(mse, mae)` averaged over the batch.
    pub per_frame: Option<Vec<(f64, f64)>>,
}

impl MetricReport {
    pub fn compute(y: &Frames, y_hat: &Frames, per_step: bool) -> Result<Self> {
        let per_frame = per_step
            .then(|| -> Result<Vec<(f64, f64)>> {
                let se = per_frame(y, y_hat, |d| d * d)?;
                let ae = per_frame(y, y_hat, f64::abs)?;
                let (b, t) = (y.shape[0], y.shape[1]);
                Ok((0..t)
                    .map(|k| {
                        let pick = |v: &[f64]| (0..b).map(|i| v[i * t + k]).sum::<f64>() / b as f64;
                        (pick(&se), pick(&ae))
                    })
                    .collect())
            })
            .transpose()?;
        Ok(Self {
            mse: mse(y, y_hat)?,
            mae: mae(y, y_hat)?,
            ssim: ssim(y, y_hat)?,
            psnr_db: psnr(y, y_hat)?,
            per_frame,
        })
    }
}

impl fmt::Display for MetricReport {
    /// `metric<TAB>value` lines after a comment stating the conventions.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# mse/mae: summed over C*H*W per frame, mean over frames; psnr: L=1, per-pixel mse, mean over frames"
        )?;
        writeln!(f, "mse\t{}", self.mse)?;
        writeln!(f, "mae\t{}", self.mae)?;
        writeln!(f, "ssim\t{}", self.ssim)?;
        writeln!(f, "psnr_db\t{}", self.psnr_db)?;
        if let Some(steps) = &self.per_frame {
            for (t, (m, a)) in steps.iter().enumerate() {
                writeln!(f, "mse[{t}]\t{m}")?;
                writeln!(f, "mae[{t}]\t{a}")?;
            }
        }
        Ok(())
    }
}
