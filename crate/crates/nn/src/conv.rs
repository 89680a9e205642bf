//! 2D convolution kernels with their backward passes.
//!
//! General convolutions lower to im2col + GEMM per (sample, group). Depthwise
//! convolutions (one input and one output channel per group) use a direct
//! loop, which is far cheaper than building columns for a single channel.
//! Transposed convolution is the exact adjoint of [`conv2d`] and reuses the
//! same column machinery in the other direction.

use plasm_tensor::{gemm, gemm_ld, Element, Tensor};

use crate::error::{LayerError, Result};

/// Stride, padding and grouping of a 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }

    /// Output extent of a convolution over `size` input pixels.
    pub fn conv_out(&self, size: usize, k: usize) -> Result<usize> {
        let padded = size + 2 * self.padding;
        if padded < k || self.stride == 0 {
            return Err(LayerError::Config(format!(
                "kernel {k} does not fit input {size} with padding {}",
                self.padding
            )));
        }
        Ok((padded - k) / self.stride + 1)
    }

    /// Output extent of a transposed convolution.
    pub fn transposed_out(&self, size: usize, k: usize, output_padding: usize) -> Result<usize> {
        let full = (size - 1) * self.stride + k + output_padding;
        full.checked_sub(2 * self.padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| LayerError::Config(format!("transposed conv of {size} collapses")))
    }
}

fn dims4(layer: &'static str, t: &[usize]) -> Result<[usize; 4]> {
    match t {
        &[a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(LayerError::BadRank {
            layer,
            expected: 4,
            shape: t.to_vec(),
        }),
    }
}

#[derive(Clone, Copy)]
struct Window {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Valid output range `lo..hi` along one axis for kernel offset `k`,
    /// `None` when no output position reads inside the input.
    #[inline]
    fn span(&self, k: usize, size: usize, out: usize) -> Option<(usize, usize)> {
        // need 0 <= o*stride + k - pad < size
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        if size + self.pad <= k {
            return None;
        }
        let hi = ((size + self.pad - k - 1) / self.stride + 1).min(out);
        (lo < hi).then_some((lo, hi))
    }
}

/// Output rows per im2col tile: keeps a tile of columns cache-resident.
const TILE_ELEMS: usize = 1 << 16;

impl Window {
    fn tile_rows(&self) -> usize {
        (TILE_ELEMS / (self.rows() * self.ow).max(1)).clamp(1, self.oh.max(1))
    }

    /// Output row tiles `(oy0, oy1)` covering `0..oh`.
    fn tiles(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.tile_rows();
        let oh = self.oh;
        (0..oh).step_by(step).map(move |r| (r, (r + step).min(oh)))
    }
}

/// `src` is `[c, h, w]`; writes the `[c*kh*kw, (oy1-oy0)*ow]` columns of
/// output rows `oy0..oy1` into `cols`.
fn im2col<T: Element>(src: &[T], g: &Window, (oy0, oy1): (usize, usize), cols: &mut [T]) {
    let n = (oy1 - oy0) * g.ow;
    cols[..g.rows() * n].fill(T::zero());
    for c in 0..g.c {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let Some((ylo, yhi)) = g.span(ky, g.h, g.oh) else { continue };
            let (ylo, yhi) = (ylo.max(oy0), yhi.min(oy1));
            for kx in 0..g.kw {
                let Some((xlo, xhi)) = g.span(kx, g.w, g.ow) else { continue };
                let row = &mut cols[((c * g.kh + ky) * g.kw + kx) * n..][..n];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut row[(oy - oy0) * g.ow..(oy - oy0 + 1) * g.ow];
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        let ix0 = xlo + kx - g.pad;
                        dst[xlo..xhi].copy_from_slice(&src_row[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            dst[ox] = src_row[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a tile of columns into `[c, h, w]`.
fn col2im<T: Element>(cols: &[T], g: &Window, (oy0, oy1): (usize, usize), dst: &mut [T]) {
    let n = (oy1 - oy0) * g.ow;
    for c in 0..g.c {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let Some((ylo, yhi)) = g.span(ky, g.h, g.oh) else { continue };
            let (ylo, yhi) = (ylo.max(oy0), yhi.min(oy1));
            for kx in 0..g.kw {
                let Some((xlo, xhi)) = g.span(kx, g.w, g.ow) else { continue };
                let row = &cols[((c * g.kh + ky) * g.kw + kx) * n..][..n];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &row[(oy - oy0) * g.ow..(oy - oy0 + 1) * g.ow];
                    let out_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        let ix0 = xlo + kx - g.pad;
                        for (d, &s) in out_row[ix0..ix0 + (xhi - xlo)].iter_mut().zip(&src[xlo..xhi]) {
                            *d += s;
                        }
                    } else {
                        for ox in xlo..xhi {
                            out_row[ox * g.stride + kx - g.pad] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], batch: usize, plane: usize) {
    let ch = bias.len();
    for b in 0..batch {
        for (c, &bv) in bias.iter().enumerate() {
            out[(b * ch + c) * plane..][..plane].iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Element>(g: &[T], batch: usize, ch: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); ch];
    for b in 0..batch {
        for (c, acc) in gb.iter_mut().enumerate() {
            for &v in &g[(b * ch + c) * plane..][..plane] {
                *acc += v;
            }
        }
    }
    gb
}

fn check_bias<T: Element>(bias: Option<&Tensor<T>>, ch: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [ch] => Err(LayerError::ChannelMismatch {
            layer: "bias",
            expected: ch,
            got: b.numel(),
        }),
        _ => Ok(()),
    }
}

/// Cross-correlation of `x: [B, Cin, H, W]` with `weight: [Cout, Cin/groups, kh, kw]`.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let [batch, cin, h, w] = dims4("conv2d", x.shape())?;
    let [cout, cin_g, kh, kw] = dims4("conv2d weight", weight.shape())?;
    let groups = geom.groups.max(1);
    if cin % groups != 0 {
        return Err(LayerError::NotDivisible {
            what: "input channels",
            value: cin,
            divisor: groups,
        });
    }
    if cout % groups != 0 {
        return Err(LayerError::NotDivisible {
            what: "output channels",
            value: cout,
            divisor: groups,
        });
    }
    if cin / groups != cin_g {
        return Err(LayerError::ChannelMismatch {
            layer: "conv2d",
            expected: cin_g * groups,
            got: cin,
        });
    }
    check_bias(bias, cout)?;
    let oh = geom.conv_out(h, kh)?;
    let ow = geom.conv_out(w, kw)?;
    let cout_g = cout / groups;
    let win = Window {
        c: cin_g,
        h,
        w,
        kh,
        kw,
        stride: geom.stride,
        pad: geom.padding,
        oh,
        ow,
    };
    if cin_g == 1 && cout_g == 1 {
        return depthwise(x, weight, bias, win, batch, cin);
    }

    let xd = x.data();
    let wd = weight.data();
    let k_rows = win.rows();
    let plane_in = cin_g * h * w;
    let plane_out = oh * ow;
    let tile_cap = k_rows * win.tile_rows() * ow;
    let mut out = vec![T::zero(); batch * cout * plane_out];
    let mut cols = vec![T::zero(); if win.is_pointwise() { 0 } else { tile_cap }];
    for b in 0..batch {
        for g in 0..groups {
            let src = &xd[(b * cin + g * cin_g) * h * w..][..plane_in];
            let wg = &wd[g * cout_g * k_rows..];
            let dst = &mut out[(b * cout + g * cout_g) * plane_out..];
            if win.is_pointwise() {
                gemm(cout_g, k_rows, plane_out, wg, false, src, false, dst, false);
                continue;
            }
            for tile in win.tiles() {
                let n = (tile.1 - tile.0) * ow;
                im2col(src, &win, tile, &mut cols);
                gemm_ld(cout_g, k_rows, n, wg, k_rows, false, &cols, n, false, &mut dst[tile.0 * ow..], plane_out, false);
            }
        }
    }
    if let Some(bias) = bias {
        add_bias(&mut out, &bias.data(), batch, plane_out);
    }

    let parents: Vec<&Tensor<T>> = match bias {
        Some(bias) => vec![x, weight, bias],
        None => vec![x, weight],
    };
    Ok(Tensor::from_op(
        "conv2d",
        vec![batch, cout, oh, ow],
        out,
        &parents,
        move |gout, needs| {
            let mut gx = needs[0].then(|| vec![T::zero(); xd.len()]);
            let mut gw = needs[1].then(|| vec![T::zero(); wd.len()]);
            let scratch = if win.is_pointwise() { 0 } else { tile_cap };
            let (mut cols, mut dcols) = (vec![T::zero(); scratch], vec![T::zero(); scratch]);
            for b in 0..batch {
                for g in 0..groups {
                    let go = &gout[(b * cout + g * cout_g) * plane_out..][..cout_g * plane_out];
                    let src = &xd[(b * cin + g * cin_g) * h * w..][..plane_in];
                    let wg = &wd[g * cout_g * k_rows..];
                    if win.is_pointwise() {
                        if let Some(gw) = gw.as_mut() {
                            gemm(cout_g, plane_out, k_rows, go, false, src, true, &mut gw[g * cout_g * k_rows..], true);
                        }
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx[(b * cin + g * cin_g) * h * w..][..plane_in];
                            gemm(k_rows, cout_g, plane_out, wg, true, go, false, dst, true);
                        }
                        continue;
                    }
                    for tile in win.tiles() {
                        let n = (tile.1 - tile.0) * ow;
                        let go_t = &go[tile.0 * ow..];
                        if let Some(gw) = gw.as_mut() {
                            // dW += dY * cols^T
                            im2col(src, &win, tile, &mut cols);
                            gemm_ld(cout_g, n, k_rows, go_t, plane_out, false, &cols, n, true, &mut gw[g * cout_g * k_rows..], k_rows, true);
                        }
                        if let Some(gx) = gx.as_mut() {
                            // dcols = W^T * dY, then scatter
                            gemm_ld(k_rows, cout_g, n, wg, k_rows, true, go_t, plane_out, false, &mut dcols, n, false);
                            col2im(&dcols, &win, tile, &mut gx[(b * cin + g * cin_g) * h * w..][..plane_in]);
                        }
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| bias_grad(gout, batch, cout, plane_out)));
            }
            grads
        },
    ))
}

fn depthwise<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    win: Window,
    batch: usize,
    ch: usize,
) -> Result<Tensor<T>> {
    let xd = x.data();
    let wd = weight.data();
    let Window {
        h,
        w,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
        ..
    } = win;
    let mut out = vec![T::zero(); batch * ch * oh * ow];
    for b in 0..batch {
        for c in 0..ch {
            let src = &xd[(b * ch + c) * h * w..][..h * w];
            let dst = &mut out[(b * ch + c) * oh * ow..][..oh * ow];
            let kern = &wd[c * kh * kw..][..kh * kw];
            for ky in 0..kh {
                let Some((ylo, yhi)) = win.span(ky, h, oh) else { continue };
                for kx in 0..kw {
                    let Some((xlo, xhi)) = win.span(kx, w, ow) else { continue };
                    let k = kern[ky * kw + kx];
                    for oy in ylo..yhi {
                        let iy = oy * stride + ky - pad;
                        let srow = &src[iy * w..(iy + 1) * w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let ix0 = xlo + kx - pad;
                            for (d, &s) in drow[xlo..xhi].iter_mut().zip(&srow[ix0..ix0 + (xhi - xlo)]) {
                                *d += k * s;
                            }
                        } else {
                            for ox in xlo..xhi {
                                drow[ox] += k * srow[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(bias) = bias {
        add_bias(&mut out, &bias.data(), batch, oh * ow);
    }
    let parents: Vec<&Tensor<T>> = match bias {
        Some(bias) => vec![x, weight, bias],
        None => vec![x, weight],
    };
    Ok(Tensor::from_op(
        "dwconv2d",
        vec![batch, ch, oh, ow],
        out,
        &parents,
        move |gout, needs| {
            let mut gx = needs[0].then(|| vec![T::zero(); xd.len()]);
            let mut gw = needs[1].then(|| vec![T::zero(); wd.len()]);
            for b in 0..batch {
                for c in 0..ch {
                    let src = &xd[(b * ch + c) * h * w..][..h * w];
                    let go = &gout[(b * ch + c) * oh * ow..][..oh * ow];
                    for ky in 0..kh {
                        let Some((ylo, yhi)) = win.span(ky, h, oh) else { continue };
                        for kx in 0..kw {
                            let Some((xlo, xhi)) = win.span(kx, w, ow) else { continue };
                            let ki = c * kh * kw + ky * kw + kx;
                            let k = wd[ki];
                            let mut acc = T::zero();
                            for oy in ylo..yhi {
                                let iy = oy * stride + ky - pad;
                                for ox in xlo..xhi {
                                    let ix = ox * stride + kx - pad;
                                    let gv = go[oy * ow + ox];
                                    acc += gv * src[iy * w + ix];
                                    if let Some(gx) = gx.as_mut() {
                                        gx[(b * ch + c) * h * w + iy * w + ix] += gv * k;
                                    }
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                gw[ki] += acc;
                            }
                        }
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| bias_grad(gout, batch, ch, oh * ow)));
            }
            grads
        },
    ))
}

/// Transposed convolution of `x: [B, Cin, H, W]` with
/// `weight: [Cin, Cout/groups, kh, kw]`, the adjoint of [`conv2d`] with the
/// same weight tensor.
pub fn conv_transpose2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
    output_padding: usize,
) -> Result<Tensor<T>> {
    let [batch, cin, h, w] = dims4("conv_transpose2d", x.shape())?;
    let [wcin, cout_g, kh, kw] = dims4("conv_transpose2d weight", weight.shape())?;
    let groups = geom.groups.max(1);
    if wcin != cin {
        return Err(LayerError::ChannelMismatch {
            layer: "conv_transpose2d",
            expected: wcin,
            got: cin,
        });
    }
    if cin % groups != 0 {
        return Err(LayerError::NotDivisible {
            what: "input channels",
            value: cin,
            divisor: groups,
        });
    }
    let cout = cout_g * groups;
    check_bias(bias, cout)?;
    let oh = geom.transposed_out(h, kh, output_padding)?;
    let ow = geom.transposed_out(w, kw, output_padding)?;
    let cin_g = cin / groups;
    // the forward conv this is the adjoint of maps [cout_g, oh, ow] -> [cin_g, h, w]
    let win = Window {
        c: cout_g,
        h: oh,
        w: ow,
        kh,
        kw,
        stride: geom.stride,
        pad: geom.padding,
        oh: h,
        ow: w,
    };
    if geom.conv_out(oh, kh)? != h || geom.conv_out(ow, kw)? != w {
        return Err(LayerError::Config(format!(
            "output_padding {output_padding} inconsistent with stride {}",
            geom.stride
        )));
    }
    let k_rows = win.rows();
    let plane_in = h * w;
    let plane_out = oh * ow;
    let tile_cap = k_rows * win.tile_rows() * w;
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![T::zero(); batch * cout * plane_out];
    let mut cols = vec![T::zero(); tile_cap];
    for b in 0..batch {
        for g in 0..groups {
            let src = &xd[(b * cin + g * cin_g) * plane_in..][..cin_g * plane_in];
            let wg = &wd[g * cin_g * k_rows..];
            let dst = &mut out[(b * cout + g * cout_g) * plane_out..][..cout_g * plane_out];
            for tile in win.tiles() {
                let n = (tile.1 - tile.0) * w;
                // cols = W_g^T * x_tile
                gemm_ld(k_rows, cin_g, n, wg, k_rows, true, &src[tile.0 * w..], plane_in, false, &mut cols, n, false);
                col2im(&cols, &win, tile, dst);
            }
        }
    }
    if let Some(bias) = bias {
        add_bias(&mut out, &bias.data(), batch, plane_out);
    }
    let parents: Vec<&Tensor<T>> = match bias {
        Some(bias) => vec![x, weight, bias],
        None => vec![x, weight],
    };
    Ok(Tensor::from_op(
        "conv_transpose2d",
        vec![batch, cout, oh, ow],
        out,
        &parents,
        move |gout, needs| {
            let mut gx = needs[0].then(|| vec![T::zero(); xd.len()]);
            let mut gw = needs[1].then(|| vec![T::zero(); wd.len()]);
            let mut cols = vec![T::zero(); tile_cap];
            for b in 0..batch {
                for g in 0..groups {
                    let go = &gout[(b * cout + g * cout_g) * plane_out..][..cout_g * plane_out];
                    let wg = &wd[g * cin_g * k_rows..];
                    let base = (b * cin + g * cin_g) * plane_in;
                    for tile in win.tiles() {
                        let n = (tile.1 - tile.0) * w;
                        im2col(go, &win, tile, &mut cols);
                        if let Some(gx) = gx.as_mut() {
                            gemm_ld(cin_g, k_rows, n, wg, k_rows, false, &cols, n, false, &mut gx[base + tile.0 * w..], plane_in, true);
                        }
                        if let Some(gw) = gw.as_mut() {
                            let src = &xd[base + tile.0 * w..];
                            gemm_ld(cin_g, n, k_rows, src, plane_in, false, &cols, n, true, &mut gw[g * cin_g * k_rows..], k_rows, true);
                        }
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| bias_grad(gout, batch, cout, plane_out)));
            }
            grads
        },
    ))
}
