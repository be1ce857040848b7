use derain_core::analysis::rain_band_energy;
use derain_core::denoiser::DenoiserConfig;
use derain_core::guidance::guided_eps;
use derain_core::inversion::{ddpm_invert, reconstruct};
use derain_core::manifest::Manifest;
use derain_core::metrics::psnr;
use derain_core::schedule::{build_schedule, BetaSchedule};
use derain_core::synthetic_rain::{render, streak_positions, Intensity, Precipitation};
use derain_core::{
    AttentionControl, Denoiser, LatentVideo, RainSceneSpec, TensorContainer, TextCondition,
    VideoShape,
};
use proptest::collection::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{entry, manifest};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn container_round_trip_is_bit_exact(entries in vec(entry(), 0..6)) {
        let mut c = TensorContainer::new();
        for (i, (dims, data)) in entries.into_iter().enumerate() {
            c.insert(&format!("t{i}.ü"), &dims, data).unwrap();
        }
        let bytes = c.to_bytes();
        let back = TensorContainer::from_bytes(&bytes).unwrap();
        prop_assert!(back.bit_eq(&c));
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn manifest_round_trip_is_bit_exact(m in manifest()) {
        let text = m.to_json().unwrap();
        let back = Manifest::from_json(&text).unwrap();
        prop_assert_eq!(back.config.lambda.map(f64::to_bits), m.config.lambda.map(f64::to_bits));
        prop_assert_eq!(back.config.train.learning_rate.to_bits(), m.config.train.learning_rate.to_bits());
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_json().unwrap(), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn guided_eps_is_affine_in_lambda(seed in any::<u64>(), l1 in 0.0f64..40.0, l2 in 0.0f64..40.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = VideoShape::new(2, 2, 3, 3);
        let n = LatentVideo::randn(s, &mut rng);
        let c = LatentVideo::randn(s, &mut rng);
        let a = guided_eps(&n, &c, l1).unwrap();
        let b = guided_eps(&n, &c, l2).unwrap();
        let m = guided_eps(&n, &c, 0.5 * (l1 + l2)).unwrap();
        let lhs = a.lin_comb(1.0, &b, 1.0).unwrap();
        prop_assert!(lhs.max_abs_diff(&m.scale(2.0)).unwrap() < 1e-6);
    }

    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = VideoShape::new(2, 1, 4, 4);
        let a = LatentVideo::randn(s, &mut rng);
        let b = LatentVideo::randn(s, &mut rng);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap().to_bits(), psnr(&b, &a, 1.0).unwrap().to_bits());
    }

    #[test]
    fn schedule_cumulative_product(steps in 2usize..300, b0 in 1e-5f64..0.01, span in 0.0f64..0.3) {
        let s = build_schedule(steps, b0, b0 + span, BetaSchedule::Linear).unwrap();
        let mut prod = 1.0;
        for t in 0..steps {
            prod *= 1.0 - s.betas()[t];
            prop_assert!((s.alpha_bars()[t] - prod).abs() <= 1e-12);
            if t > 0 {
                prop_assert!(s.alpha_bars()[t] < s.alpha_bars()[t - 1]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ddpm_round_trip_is_exact_for_any_model(model_seed in any::<u64>(), seed in any::<u64>(), scale in 0.1f64..3.0) {
        let mut m = Denoiser::new(DenoiserConfig::micro(), model_seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.params_mut().outer.out_w.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let s = build_schedule(25, 1e-3, 0.1, BetaSchedule::Linear).unwrap();
        let x0 = LatentVideo::randn(m.config().video_shape(), &mut rng).scale(scale);
        let cond = TextCondition::parse("scene rain", 4).unwrap();
        let rec = ddpm_invert(&x0, &cond, &m, &s, seed).unwrap();
        let out = reconstruct(&rec, &cond, &m, &s, None, &mut AttentionControl::off()).unwrap();
        prop_assert!(out.max_abs_diff(&x0).unwrap() < 1e-4);
    }

    #[test]
    fn rain_touches_only_masked_pixels(seed in any::<u64>(), heavy in any::<bool>()) {
        let class = if heavy { Intensity::Heavy } else { Intensity::Light };
        let spec = RainSceneSpec::sample(class, Precipitation::Rain, VideoShape::new(3, 3, 16, 16), seed);
        let b = render(&spec).unwrap();
        let m = b.rain_mask.array();
        for ((f, c, y, x), &v) in b.rainy.array().indexed_iter() {
            if m[[f, 0, y, x]] == 0.0 {
                prop_assert_eq!(v.to_bits(), b.clean.array()[[f, c, y, x]].to_bits());
            }
        }
        prop_assert!(rain_band_energy(&b.rainy, spec.streak_angle_deg).is_finite());
    }

    #[test]
    fn streaks_translate_by_fall_speed(seed in any::<u64>()) {
        let spec = RainSceneSpec::sample(Intensity::Heavy, Precipitation::Rain, VideoShape::new(3, 3, 16, 16), seed);
        let (h, w) = (16.0, 16.0);
        let a = spec.streak_angle_deg.to_radians();
        let (dy, dx) = (spec.fall_speed * a.cos(), spec.fall_speed * a.sin());
        for f in 0..2 {
            let p0 = streak_positions(&spec, f);
            let p1 = streak_positions(&spec, f + 1);
            for ((y0, x0), (y1, x1)) in p0.iter().zip(&p1) {
                let ey = ((y1 - y0 - dy) % h + h + h / 2.0) % h - h / 2.0;
                let ex = ((x1 - x0 - dx) % w + w + w / 2.0) % w - w / 2.0;
                prop_assert!(ey.abs() < 1e-9 && ex.abs() < 1e-9, "{} {}", ey, ex);
            }
        }
    }
}
