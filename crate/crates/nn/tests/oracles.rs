use plasm_nn::*;
use plasm_tensor::gradcheck::uniform;
use plasm_tensor::{Rng, Tensor};

/// Direct six-loop grouped cross-correlation.
fn brute_conv(
    x: &[f64],
    [b, cin, h, w]: [usize; 4],
    k: &[f64],
    [cout, cin_g, kh, kw]: [usize; 4],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let groups = cin / cin_g;
    let cout_g = cout / groups;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * cout * oh * ow];
    for n in 0..b {
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cin_g {
                        let c = g * cin_g + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((n * cin + c) * h + iy as usize) * w + ix as usize]
                                    * k[((co * cin_g + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((n * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, [b, cout, oh, ow])
}

fn dims(t: &Tensor<f64>) -> [usize; 4] {
    t.shape().try_into().unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_matches_brute_force_across_geometries() {
    let mut rng = Rng::new(11, 0);
    for &(cin, cout, k, stride, groups, hw) in &[
        (3, 4, 3, 1, 1, 7),
        (3, 4, 3, 2, 1, 8),
        (4, 6, 3, 2, 2, 5),
        (4, 8, 1, 1, 1, 6),
        (2, 2, 7, 1, 1, 9),
        (2, 3, 7, 1, 1, 2),
        (3, 2, 7, 2, 1, 1),
        (8, 4, 3, 1, 1, 64),
        (8, 4, 3, 2, 2, 63),
    ] {
        let x = uniform(&[2, cin, hw, hw], &mut rng, false);
        let w = uniform(&[cout, cin / groups, k, k], &mut rng, false);
        let y = conv2d(&x, &w, None, ConvGeometry::new(stride, k / 2, groups)).unwrap();
        let (want, shape) = brute_conv(&x.to_vec(), dims(&x), &w.to_vec(), dims(&w), stride, k / 2);
        assert_eq!(y.shape(), shape);
        assert!(max_diff(&y.to_vec(), &want) < 1e-12);
    }
}

#[test]
fn depthwise_matches_grouped_brute_force() {
    let mut rng = Rng::new(12, 0);
    let x = uniform(&[2, 4, 5, 5], &mut rng, false);
    let w = uniform(&[4, 1, 3, 3], &mut rng, false);
    let y = conv2d(&x, &w, None, ConvGeometry::new(1, 1, 4)).unwrap();
    let (want, _) = brute_conv(&x.to_vec(), dims(&x), &w.to_vec(), dims(&w), 1, 1);
    assert!(max_diff(&y.to_vec(), &want) < 1e-6);
}

#[test]
fn depthwise_delta_is_identity() {
    let mut rng = Rng::new(13, 0);
    let x = uniform(&[1, 3, 6, 6], &mut rng, false);
    let mut k = vec![0.0; 3 * 49];
    for c in 0..3 {
        k[c * 49 + 24] = 1.0;
    }
    let w = Tensor::from_vec(&[3, 1, 7, 7], k).unwrap();
    let y = conv2d(&x, &w, None, ConvGeometry::new(1, 3, 3)).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    let mut rng = Rng::new(14, 0);
    for &(cin, cout, stride, hw) in &[(3, 5, 1, 6), (4, 2, 2, 8), (2, 6, 2, 16), (8, 8, 1, 48), (8, 8, 2, 64)] {
        let geom = ConvGeometry::new(stride, 1, 1);
        let w = uniform(&[cout, cin, 3, 3], &mut rng, false);
        let x = uniform(&[2, cin, hw, hw], &mut rng, false);
        let cx = conv2d(&x, &w, None, geom).unwrap();
        let y = uniform(cx.shape(), &mut rng, false);
        let ty = conv_transpose2d(&y, &w, None, geom, stride - 1).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let lhs = dot(&cx.to_vec(), &y.to_vec());
        let rhs = dot(&x.to_vec(), &ty.to_vec());
        assert!((lhs - rhs).abs() < 1e-5, "{lhs} vs {rhs}");
    }
}

#[test]
fn transposed_layer_doubles() {
    let mut rng = Rng::new(15, 0);
    let layer = TransposedConvParams::<f32>::new(8, 4, 3, 2, &mut rng).unwrap();
    let y = layer.forward(&Tensor::zeros(&[2, 8, 16, 16])).unwrap();
    assert_eq!(y.shape(), &[2, 4, 32, 32]);
}

#[test]
fn group_norm_statistics_oracle() {
    let mut rng = Rng::new(16, 0);
    let x = uniform(&[3, 6, 5, 4], &mut rng, false).scale(7.0).add_scalar(3.0);
    let y = group_norm(&x, 2, &Tensor::ones(&[6]), &Tensor::zeros(&[6]), GROUP_NORM_EPS)
        .unwrap()
        .to_vec();
    for slab in y.chunks(3 * 20) {
        let n = slab.len() as f64;
        let mean = slab.iter().sum::<f64>() / n;
        let var = slab.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5);
        // eps shrinks the variance slightly below one
        assert!((var - 1.0).abs() < 1e-4, "{var}");
    }
}

#[test]
fn group_norm_constant_and_affine() {
    let x = Tensor::<f64>::full(&[2, 4, 3, 3], 2.5);
    let y = group_norm(&x, 2, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), GROUP_NORM_EPS).unwrap();
    assert!(y.to_vec().iter().all(|&v| v == 0.0));
    let mut rng = Rng::new(17, 0);
    let x = uniform(&[2, 4, 3, 3], &mut rng, false);
    let y = group_norm(&x, 2, &Tensor::zeros(&[4]), &Tensor::full(&[4], 5.0), GROUP_NORM_EPS).unwrap();
    assert!(y.to_vec().iter().all(|&v| v == 5.0));
}

#[test]
fn gap_examples() {
    let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1., 3., 5., 7.]).unwrap();
    assert_eq!(global_avg_pool(&x).unwrap().to_vec(), vec![4.0]);
    let c = Tensor::<f64>::full(&[2, 3, 4, 4], -1.5);
    assert!(global_avg_pool(&c).unwrap().to_vec().iter().all(|&v| v == -1.5));
    let mut rng = Rng::new(18, 0);
    let x = uniform(&[2, 3, 4, 5], &mut rng, false);
    let a = global_avg_pool(&x.scale(2.0)).unwrap().to_vec();
    let b = global_avg_pool(&x).unwrap().to_vec();
    assert!(a.iter().zip(&b).all(|(p, q)| (p - 2.0 * q).abs() < 1e-12));
}

fn random_mask(rng: &mut Rng, b: usize, h: usize, w: usize, p: f64) -> VisibilityMask {
    let data = (0..b * h * w).map(|_| rng.uniform() >= p).collect();
    VisibilityMask::new(b, h, w, data).unwrap()
}

#[test]
fn sparse_conv_all_visible_is_dense_bit_exact() {
    let mut rng = Rng::new(19, 0);
    for stride in [1, 2] {
        let conv = ConvParams::<f32>::new(3, 5, 3, stride, 1, &mut rng).unwrap();
        conv.bias.set_data((0..5).map(|v| v as f32 * 0.1).collect()).unwrap();
        let x = Tensor::<f32>::from_vec(&[2, 3, 8, 8], (0..384).map(|_| rng.normal() as f32).collect()).unwrap();
        let dense = conv.forward(&x).unwrap();
        let (sparse, m) = sparse_conv2d(&x, &conv, &VisibilityMask::all_visible(2, 8, 8)).unwrap();
        assert_eq!(dense.to_vec(), sparse.to_vec());
        assert_eq!(m.count_visible(), dense.numel() / 5);
    }
}

#[test]
fn sparse_conv_all_masked_is_zero() {
    let mut rng = Rng::new(20, 0);
    let conv = ConvParams::<f32>::new(2, 4, 3, 2, 1, &mut rng).unwrap();
    conv.bias.set_data(vec![1.0; 4]).unwrap();
    let x = Tensor::<f32>::ones(&[1, 2, 6, 6]);
    let mask = VisibilityMask::new(1, 6, 6, vec![false; 36]).unwrap();
    let (y, m) = sparse_conv2d(&x, &conv, &mask).unwrap();
    assert!(y.to_vec().iter().all(|&v| v == 0.0));
    assert_eq!(m.count_visible(), 0);
    assert_eq!(m.shape(), [1, 1, 3, 3]);
}

#[test]
fn sparse_conv_ignores_masked_pixels() {
    let mut rng = Rng::new(21, 0);
    let conv = ConvParams::<f32>::new(2, 3, 3, 1, 1, &mut rng).unwrap();
    conv.bias.set_data(vec![0.3, -0.2, 0.1]).unwrap();
    let mask = random_mask(&mut rng, 2, 7, 7, 0.6);
    let base: Vec<f32> = (0..2 * 2 * 49).map(|_| rng.normal() as f32).collect();
    let mut perturbed = base.clone();
    for b in 0..2 {
        for c in 0..2 {
            for y in 0..7 {
                for x in 0..7 {
                    if !mask.is_visible(b, y, x) {
                        perturbed[((b * 2 + c) * 7 + y) * 7 + x] += 100.0 * rng.normal() as f32;
                    }
                }
            }
        }
    }
    let run = |d: Vec<f32>| sparse_conv2d(&Tensor::from_vec(&[2, 2, 7, 7], d).unwrap(), &conv, &mask).unwrap().0.to_vec();
    let (a, b) = (run(base), run(perturbed));
    assert_eq!(a, b);
    for bi in 0..2 {
        for c in 0..3 {
            for y in 0..7 {
                for x in 0..7 {
                    if !mask.is_visible(bi, y, x) {
                        assert_eq!(a[((bi * 3 + c) * 7 + y) * 7 + x], 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn convnext_preserves_large_shape() {
    let mut rng = Rng::new(22, 0);
    let block = ConvNeXtBlock::<f32>::new(512, &mut rng).unwrap();
    let z = Tensor::zeros(&[2, 512, 16, 16]);
    assert_eq!(block.forward(&z).unwrap().shape(), &[2, 512, 16, 16]);
}

#[test]
fn kaiming_variance_and_determinism() {
    let shape = [100, 40, 5, 5];
    let (fan_in, _) = fans(&shape);
    let w = kaiming_normal::<f64>(&shape, FanMode::FanIn, &mut Rng::new(23, 0)).to_vec();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let want = 2.0 / fan_in as f64;
    assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");

    let again = kaiming_normal::<f64>(&shape, FanMode::FanIn, &mut Rng::new(23, 0)).to_vec();
    assert_eq!(w, again);

    let conv = ConvParams::<f32>::new(4, 4, 3, 1, 1, &mut Rng::new(1, 0)).unwrap();
    assert!(conv.bias.to_vec().iter().all(|&v| v == 0.0));
}
