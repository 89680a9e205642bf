use plasm_core::masking::{mask_input_frames, masked_count, top_positions, SpatialMasking};
use plasm_tensor::gradcheck::uniform;
use plasm_tensor::{Rng, Tensor};

fn module(ch: usize, seed: u64) -> SpatialMasking<f64> {
    SpatialMasking::new(ch, &mut Rng::new(seed, 0)).unwrap()
}

#[test]
fn masked_counts_match_floor() {
    for (r, c, want) in [(0.1, 64, 409), (0.1, 32, 102), (0.05, 16, 12)] {
        let sm = module(c, 1);
        let s = uniform(&[2, c, 4, 4], &mut Rng::new(2, 0), false);
        let (_, att) = sm.forward_with_attention(&s, r).unwrap();
        assert_eq!(att.masked_count, want);
        for frame in att.masked.chunks(c * c) {
            assert_eq!(frame.iter().filter(|&&m| m).count(), want);
        }
    }
}

#[test]
fn masked_entries_are_zero_and_rows_normalised() {
    let c = 16;
    let sm = module(c, 3);
    let s = uniform(&[3, c, 4, 4], &mut Rng::new(4, 0), false);
    let (_, att) = sm.forward_with_attention(&s, 0.1).unwrap();
    let probs = att.probs.to_vec();
    for (p, &m) in probs.iter().zip(&att.masked) {
        if m {
            assert_eq!(*p, 0.0);
        }
    }
    for (row, mask) in probs.chunks(c).zip(att.masked.chunks(c)) {
        let sum: f64 = row.iter().sum();
        if mask.iter().all(|&m| m) {
            assert_eq!(sum, 0.0);
        } else {
            assert!((sum - 1.0).abs() < 1e-6, "{sum}");
        }
    }
}

#[test]
fn masked_positions_are_the_largest_scores() {
    let c = 8;
    let sm = module(c, 5);
    let s = uniform(&[2, c, 3, 3], &mut Rng::new(6, 0), false);
    let (_, att) = sm.forward_with_attention(&s, 0.25).unwrap();
    let scores = att.scores.to_vec();
    for (a, m) in scores.chunks(c * c).zip(att.masked.chunks(c * c)) {
        let lowest_masked = a.iter().zip(m).filter(|(_, &m)| m).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
        let highest_kept = a.iter().zip(m).filter(|(_, &m)| !m).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
        assert!(lowest_masked >= highest_kept);
    }
}

#[test]
fn zero_query_key_masks_row_major_prefix() {
    let c = 64;
    let sm = module(c, 7);
    for conv in [&sm.query, &sm.key] {
        conv.weight.set_data(vec![0.0; conv.weight.numel()]).unwrap();
        conv.bias.set_data(vec![0.0; c]).unwrap();
    }
    let s = uniform(&[1, c, 2, 2], &mut Rng::new(8, 0), false);
    let (_, att) = sm.forward_with_attention(&s, 0.1).unwrap();
    let expect: Vec<bool> = (0..c * c).map(|i| i < 409).collect();
    assert_eq!(att.masked, expect);
    let probs = att.probs.to_vec();
    for (row, mask) in probs.chunks(c).zip(expect.chunks(c)) {
        let open = mask.iter().filter(|&&m| !m).count();
        for (&p, &m) in row.iter().zip(mask) {
            let want = if m { 0.0 } else { 1.0 / open as f64 };
            assert!((p - want).abs() < 1e-12, "{p} vs {want}");
        }
    }
    // rows 0..5 fully masked, row 6 keeps 64*7-409 = 39 entries
    assert!(probs[..6 * c].iter().all(|&p| p == 0.0));
    assert!((probs[6 * c + 63] - 1.0 / 39.0).abs() < 1e-12);
}

#[test]
fn fully_masked_rows_output_zero() {
    let c = 4;
    let sm = module(c, 9);
    let s = uniform(&[2, c, 3, 3], &mut Rng::new(10, 0), false);
    let (out, att) = sm.forward_with_attention(&s, 1.0).unwrap();
    assert_eq!(att.masked_count, 16);
    assert!(att.probs.to_vec().iter().all(|&p| p == 0.0));
    assert!(out.to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn unmasked_attention_is_convex_mix_of_values() {
    let c = 4;
    let sm = module(c, 11);
    let s = uniform(&[1, c, 2, 2], &mut Rng::new(12, 0), false);
    let (out, att) = sm.forward_with_attention(&s, 0.0).unwrap();
    assert!(att.masked.iter().all(|&m| !m));
    let v = sm.value_dw.forward(&s).unwrap().to_vec();
    let p = att.probs.to_vec();
    let out = out.to_vec();
    for i in 0..c {
        for x in 0..4 {
            let want: f64 = (0..c).map(|j| p[i * c + j] * v[j * 4 + x]).sum();
            assert!((out[i * 4 + x] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn top_positions_shift_invariant() {
    let mut rng = Rng::new(13, 0);
    for _ in 0..20 {
        let a: Vec<f64> = (0..100).map(|_| (rng.below(7) as f64) * 0.5).collect();
        let shifted: Vec<f64> = a.iter().map(|v| v + 3.25).collect();
        for count in [0, 1, 10, 37, 100] {
            assert_eq!(top_positions(&a, count), top_positions(&shifted, count));
        }
    }
}

#[test]
fn count_floor_cases() {
    assert_eq!(masked_count(0.3, 10), 3);
    assert_eq!(masked_count(0.25, 16), 4);
    assert_eq!(masked_count(0.33, 10), 3);
    assert_eq!(masked_count(0.0, 4096), 0);
    assert_eq!(masked_count(1.0, 4096), 4096);
}

#[test]
fn input_masking_counts_per_frame() {
    let x = Tensor::<f32>::ones(&[1, 2, 1, 64, 64]);
    let (y, vis) = mask_input_frames(&x, 0.96, &Rng::new(14, 0)).unwrap();
    let y = y.to_vec();
    for f in 0..2 {
        let zeros = y[f * 4096..(f + 1) * 4096].iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 3932);
    }
    assert_eq!(vis.count_visible(), 2 * (4096 - 3932));
}

#[test]
fn input_masking_shares_positions_across_channels() {
    let x = uniform(&[2, 2, 3, 5, 5], &mut Rng::new(15, 0), false).add_scalar(2.0);
    let (y, vis) = mask_input_frames(&x, 0.4, &Rng::new(16, 0)).unwrap();
    let (xv, yv) = (x.to_vec(), y.to_vec());
    for f in 0..4 {
        for ch in 0..3 {
            for p in 0..25 {
                let i = (f * 3 + ch) * 25 + p;
                let visible = vis.as_slice()[f * 25 + p];
                assert_eq!(yv[i], if visible { xv[i] } else { 0.0 });
            }
        }
    }
}

#[test]
fn input_masking_extremes() {
    let x = uniform(&[1, 2, 1, 6, 6], &mut Rng::new(17, 0), false);
    let (y, vis) = mask_input_frames(&x, 0.0, &Rng::new(18, 0)).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
    assert_eq!(vis.count_visible(), 72);
    let (y, vis) = mask_input_frames(&x, 1.0, &Rng::new(18, 0)).unwrap();
    assert!(y.to_vec().iter().all(|&v| v == 0.0));
    assert_eq!(vis.count_visible(), 0);
    assert!(mask_input_frames(&x, 1.5, &Rng::new(18, 0)).is_err());
}

#[test]
fn input_masking_is_seeded_and_frame_local() {
    let x = Tensor::<f32>::ones(&[2, 3, 1, 8, 8]);
    let a = mask_input_frames(&x, 0.5, &Rng::new(19, 0)).unwrap().1;
    let b = mask_input_frames(&x, 0.5, &Rng::new(19, 0)).unwrap().1;
    assert_eq!(a.as_slice(), b.as_slice());
    let c = mask_input_frames(&x, 0.5, &Rng::new(20, 0)).unwrap().1;
    assert_ne!(a.as_slice(), c.as_slice());
    // frames differ from each other
    assert_ne!(&a.as_slice()[..64], &a.as_slice()[64..128]);
    // a one-clip batch reproduces the first clip's masks
    let first = mask_input_frames(&Tensor::<f32>::ones(&[1, 3, 1, 8, 8]), 0.5, &Rng::new(19, 0)).unwrap().1;
    assert_eq!(first.as_slice(), &a.as_slice()[..192]);
}
