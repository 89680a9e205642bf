use plasm_tensor::{Element, Tensor};

use crate::error::{LayerError, Result};

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Group count used throughout the network: two groups when the channel
/// count is even, one otherwise.
pub fn group_count(channels: usize) -> usize {
    if channels % 2 == 0 {
        2
    } else {
        1
    }
}

/// Group normalization over `[B, C, ...]` with per-channel affine `gamma`, `beta`.
///
/// Statistics are the biased mean and variance over each (sample, group)
/// slab, accumulated in `f64` in a fixed order.
pub fn group_norm<T: Element>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let shape = x.shape().to_vec();
    if shape.len() < 2 {
        return Err(LayerError::BadRank {
            layer: "group_norm",
            expected: 4,
            shape,
        });
    }
    let (batch, ch) = (shape[0], shape[1]);
    if groups == 0 || ch % groups != 0 {
        return Err(LayerError::NotDivisible {
            what: "group_norm channels",
            value: ch,
            divisor: groups,
        });
    }
    for p in [gamma, beta] {
        if p.shape() != [ch] {
            return Err(LayerError::ChannelMismatch {
                layer: "group_norm affine",
                expected: ch,
                got: p.numel(),
            });
        }
    }
    let plane: usize = shape[2..].iter().product();
    let cg = ch / groups;
    let slab = cg * plane;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();

    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    let mut inv_std = vec![T::zero(); batch * groups];
    for n in 0..batch * groups {
        let s = &xd[n * slab..(n + 1) * slab];
        let mean = lane_sum(s.iter().map(|v| v.as_f64())) / slab as f64;
        let var = lane_sum(s.iter().map(|v| (v.as_f64() - mean).powi(2))) / slab as f64;
        let is = T::from_f64(1.0 / (var + eps).sqrt());
        let mean = T::from_f64(mean);
        inv_std[n] = is;
        for c in 0..cg {
            let off = n * slab + c * plane;
            let ci = (n % groups) * cg + c;
            let (gm, bt) = (gd[ci], bd[ci]);
            for i in off..off + plane {
                let h = (xd[i] - mean) * is;
                xhat[i] = h;
                out[i] = h * gm + bt;
            }
        }
    }

    Ok(Tensor::from_op(
        "group_norm",
        shape,
        out,
        &[x, gamma, beta],
        move |g, needs| {
            let mut ggamma = vec![0.0f64; ch];
            let mut gbeta = vec![0.0f64; ch];
            let mut gx = needs[0].then(|| vec![T::zero(); g.len()]);
            for n in 0..batch * groups {
                let gi = n % groups;
                // per-channel sums of g and g*xhat
                let mut sums = Vec::with_capacity(cg);
                for c in 0..cg {
                    let off = n * slab + c * plane;
                    let gs = &g[off..off + plane];
                    let hs = &xhat[off..off + plane];
                    let sg = lane_sum(gs.iter().map(|v| v.as_f64()));
                    let sgh = lane_sum(gs.iter().zip(hs).map(|(a, b)| a.as_f64() * b.as_f64()));
                    ggamma[gi * cg + c] += sgh;
                    gbeta[gi * cg + c] += sg;
                    sums.push((sg, sgh));
                }
                let Some(gx) = gx.as_mut() else { continue };
                // mean of dxhat and of dxhat*xhat over the slab, dxhat = g*gamma
                let (mut m1, mut m2) = (0.0, 0.0);
                for (c, (sg, sgh)) in sums.iter().enumerate() {
                    let gm = gd[gi * cg + c].as_f64();
                    m1 += gm * sg;
                    m2 += gm * sgh;
                }
                let is = inv_std[n];
                let m1 = T::from_f64(m1 / slab as f64);
                let m2 = T::from_f64(m2 / slab as f64);
                for c in 0..cg {
                    let off = n * slab + c * plane;
                    let gm = gd[gi * cg + c];
                    for i in off..off + plane {
                        gx[i] = is * (g[i] * gm - m1 - xhat[i] * m2);
                    }
                }
            }
            let cast = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect::<Vec<T>>();
            vec![gx, needs[1].then(|| cast(ggamma)), needs[2].then(|| cast(gbeta))]
        },
    ))
}

/// Sum with eight interleaved accumulators: vectorizable, and the
/// association order depends only on the length.
fn lane_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut acc = [0.0f64; 8];
    for (i, v) in values.enumerate() {
        acc[i & 7] += v;
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))
}

/// Mean over the spatial axes of `[B, C, H, W]`, keeping them as size 1.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(LayerError::BadRank {
            layer: "global_avg_pool",
            expected: 4,
            shape: x.shape().to_vec(),
        });
    }
    Ok(x.mean(&[2, 3], true)?)
}
