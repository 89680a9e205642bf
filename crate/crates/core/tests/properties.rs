use plasm_core::dataio::reflect;
use plasm_core::masking::{mask_input_frames, masked_count, top_positions};
use plasm_core::metrics::{mse, psnr, psnr_from_mse, ssim_plane, Frames};
use plasm_core::translator::head_weights;
use plasm_core::{lr_at, Checkpoint, Phase, Pixels, Preset, RunConfig, Schedule, VideoDataset};
use plasm_tensor::{Rng, Tensor};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_count_is_floor(num in 0usize..=1000, c in 1usize..80) {
        let r = num as f64 / 1000.0;
        let n = c * c;
        let got = masked_count(r, n);
        // exact rational floor of num * n / 1000
        prop_assert_eq!(got, num * n / 1000);
    }

    #[test]
    fn top_positions_selects_count_largest(scores in prop::collection::vec(-4i32..4, 1..60), frac in 0.0f64..=1.0, shift in -10.0f64..10.0) {
        let a: Vec<f64> = scores.iter().map(|&v| v as f64 * 0.25).collect();
        let count = ((a.len() as f64) * frac) as usize;
        let m = top_positions(&a, count);
        prop_assert_eq!(m.iter().filter(|&&x| x).count(), count);
        let shifted: Vec<f64> = a.iter().map(|v| v + shift).collect();
        prop_assert_eq!(&top_positions(&shifted, count), &m);
        for i in 0..a.len() {
            for j in 0..a.len() {
                if m[i] && !m[j] {
                    prop_assert!(a[i] > a[j] || (a[i] == a[j] && i < j));
                }
            }
        }
    }

    #[test]
    fn input_masking_exact_per_frame(b in 1usize..3, t in 1usize..3, c in 1usize..3, h in 2usize..9, w in 2usize..9, r in 0.0f64..=1.0, seed in any::<u64>()) {
        let x = Tensor::<f32>::ones(&[b, t, c, h, w]);
        let (y, vis) = mask_input_frames(&x, r, &Rng::new(seed, 0)).unwrap();
        let want = masked_count(r, h * w);
        let yv = y.to_vec();
        for f in 0..b * t {
            let hidden = vis.as_slice()[f * h * w..(f + 1) * h * w].iter().filter(|&&v| !v).count();
            prop_assert_eq!(hidden, want);
            let zeros = yv[f * c * h * w..(f + 1) * c * h * w].iter().filter(|&&v| v == 0.0).count();
            prop_assert_eq!(zeros, want * c);
        }
    }

    #[test]
    fn head_weights_normalised(scores in prop::collection::vec(-20.0f64..20.0, 1..9)) {
        let h = scores.len();
        let s = Tensor::<f64>::from_vec(&[1, h], scores).unwrap();
        let w = head_weights(&s).unwrap().to_vec();
        let sum: f64 = w.iter().sum();
        prop_assert!((sum / h as f64 - 1.0).abs() < 1e-6);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ssim_symmetric_and_bounded(seed in any::<u64>(), h in 11usize..16, w in 11usize..16, same in any::<bool>()) {
        let mut rng = Rng::new(seed, 0);
        let a: Vec<f64> = (0..h * w).map(|_| rng.uniform()).collect();
        let b: Vec<f64> = if same { a.clone() } else { (0..h * w).map(|_| rng.uniform()).collect() };
        let ab = ssim_plane(&a, &b, h, w).unwrap();
        let ba = ssim_plane(&b, &a, h, w).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((-1.0..=1.0 + 1e-9).contains(&ab));
        if same {
            prop_assert!((ab - 1.0).abs() < 1e-9);
        } else {
            prop_assert!(ab < 1.0 - 1e-9);
        }
    }

    #[test]
    fn psnr_mse_consistency(seed in any::<u64>(), scale in 0.001f64..0.5) {
        let mut rng = Rng::new(seed, 0);
        let y: Vec<f64> = (0..64).map(|_| rng.uniform()).collect();
        let y_hat: Vec<f64> = y.iter().map(|v| v + scale * (rng.uniform() - 0.5)).collect();
        let shape = [1, 1, 1, 8, 8];
        let (a, b) = (Frames::new(&y, shape).unwrap(), Frames::new(&y_hat, shape).unwrap());
        let m = mse(&a, &b).unwrap();
        prop_assert!(m >= 0.0);
        let p = psnr(&a, &b).unwrap();
        prop_assert!((p - psnr_from_mse(m / 64.0)).abs() < 1e-9);
    }

    #[test]
    fn reflection_keeps_range_and_speed(pos in 0.0f64..=52.0, v in -4.0f64..4.0) {
        let (p, nv) = reflect(pos, v, 52.0);
        prop_assert!((0.0..=52.0).contains(&p));
        prop_assert_eq!(nv.abs(), v.abs());
    }

    #[test]
    fn lr_stays_within_base(step in 0usize..=500, total in 1usize..=500, base in 1e-4f64..1.0) {
        let step = step.min(total);
        for s in [Schedule::Constant, Schedule::Cosine, Schedule::OneCycle] {
            let lr = lr_at(s, step, total, base).unwrap();
            prop_assert!(lr >= 0.0 && lr <= base * (1.0 + 1e-12));
        }
    }

    #[test]
    fn vseq_round_trip(dims in (1usize..3, 1usize..4, 1usize..3, 1usize..5, 1usize..5), seed in any::<u64>(), float in any::<bool>()) {
        let (n, t, c, h, w) = dims;
        let len = n * t * c * h * w;
        let mut rng = Rng::new(seed, 0);
        let pixels = if float {
            Pixels::F32((0..len).map(|_| rng.uniform() as f32).collect())
        } else {
            Pixels::U8((0..len).map(|_| rng.below(256) as u8).collect())
        };
        let ds = VideoDataset::new([n, t, c, h, w], pixels).unwrap();
        let bytes = ds.to_bytes();
        let back = VideoDataset::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn plck_round_trip(tensors in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 0..20), 0..6), text in "[ -~]{0,40}") {
        let mut ck = Checkpoint::new(Phase::Pretrained, text);
        for (i, data) in tensors.into_iter().enumerate() {
            ck.push(format!("t{i}.weight"), &[data.len()], data).unwrap();
        }
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, ck);
    }

    #[test]
    fn run_config_text_round_trip(p in 0usize..6, seed in any::<u64>(), steps in prop::option::of(1usize..5000), plain in any::<bool>()) {
        let mut rc = RunConfig::from_preset(Preset::ALL[p]);
        rc.seed = seed;
        rc.max_steps = steps;
        rc.model.use_pla = !plain;
        if plain {
            rc.set("block", "plain").unwrap();
        }
        let text = rc.to_text();
        let back = RunConfig::parse(&text, &[]).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.model, rc.model);
    }
}
