use super::*;

fn quiet(seed: u64) -> SceneConfig {
    SceneConfig { object_count: [1, 1], noise_sigma: 0.0, illumination_gradient: false, seed, ..SceneConfig::default() }
}

#[test]
fn same_seed_and_index_give_identical_samples() {
    let cfg = Regime::ThermalInformative.scene(32, 5);
    for i in 0..5 {
        assert_eq!(generate_sample(&cfg, i).unwrap(), generate_sample(&cfg, i).unwrap());
    }
    assert_ne!(generate_sample(&cfg, 0).unwrap().gt, generate_sample(&cfg, 1).unwrap().gt);
    let other = SceneConfig { seed: 6, ..cfg };
    assert_ne!(
        generate_sample(&other, 0).unwrap().rgb,
        generate_sample(&Regime::ThermalInformative.scene(32, 5), 0).unwrap().rgb
    );
}

#[test]
fn noiseless_gt_is_exactly_the_thermal_difference() {
    for i in 0..20 {
        let s = generate_sample(&SceneConfig { thermal_contrast: 0.3, ..quiet(1) }, i).unwrap();
        let bg_index = s.gt.data().iter().position(|&v| v == 0.0).unwrap();
        let bg = s.thermal.data()[bg_index];
        for (t, g) in s.thermal.data().iter().zip(s.gt.data()) {
            assert_eq!(*t != bg, *g == 1.0);
        }
    }
}

#[test]
fn zero_rgb_contrast_hides_object_in_rgb_only() {
    let cfg = SceneConfig { rgb_contrast: 0.0, thermal_contrast: 1.0, noise_sigma: 0.05, ..quiet(2) };
    let (mut in_rgb, mut out_rgb, mut in_t, mut out_t) = (0.0, 0.0, 0.0, 0.0);
    let (mut n_in, mut n_out) = (0.0, 0.0);
    for i in 0..40 {
        let s = generate_sample(&cfg, i).unwrap();
        // compare against each sample's own background so the random base colour cancels
        let bg_mean = |data: &[f64], c: usize, stride: usize| {
            let (mut acc, mut n) = (0.0, 0.0);
            for (p, &g) in s.gt.data().iter().enumerate() {
                if g == 0.0 {
                    acc += data[p * stride + c];
                    n += 1.0;
                }
            }
            acc / n
        };
        let rgb_bg: Vec<f64> = (0..3).map(|c| bg_mean(s.rgb.data(), c, 3)).collect();
        let t_bg = bg_mean(s.thermal.data(), 0, 1);
        for (p, &g) in s.gt.data().iter().enumerate() {
            let d: f64 = (0..3).map(|c| s.rgb.data()[p * 3 + c] - rgb_bg[c]).sum::<f64>() / 3.0;
            let dt = s.thermal.data()[p] - t_bg;
            if g == 1.0 {
                in_rgb += d;
                in_t += dt;
                n_in += 1.0;
            } else {
                out_rgb += d;
                out_t += dt;
                n_out += 1.0;
            }
        }
    }
    let (in_rgb, out_rgb) = (in_rgb / n_in, out_rgb / n_out);
    assert!((in_rgb - out_rgb).abs() < 0.005, "{in_rgb} vs {out_rgb}");
    assert!(in_t / n_in - out_t / n_out > 0.5);
}

#[test]
fn gt_area_and_binarity_hold_in_both_regimes() {
    for regime in Regime::ALL {
        let cfg = regime.scene(64, 3);
        for i in 0..100 {
            let s = generate_sample(&cfg, i).unwrap();
            let f = s.gt_fraction();
            assert!((MIN_GT_FRACTION..=MAX_GT_FRACTION).contains(&f), "{regime} {i}: {f}");
            assert!(s.gt.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(s.rgb.data().iter().chain(s.thermal.data()).all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn invalid_scenes_are_configuration_errors() {
    for cfg in [
        SceneConfig { object_radius: [0.2, 0.6], ..SceneConfig::default() },
        SceneConfig { object_count: [0, 2], ..SceneConfig::default() },
        SceneConfig { object_count: [3, 2], ..SceneConfig::default() },
        SceneConfig { shapes: vec![], ..SceneConfig::default() },
        SceneConfig { rgb_contrast: -0.1, ..SceneConfig::default() },
        SceneConfig { image_size: 2, ..SceneConfig::default() },
    ] {
        assert!(matches!(generate_sample(&cfg, 0), Err(Error::Config(_))), "{cfg:?}");
    }
    let tiny = SceneConfig { object_radius: [0.01, 0.02], ..SceneConfig::default() };
    assert!(matches!(generate_sample(&tiny, 0), Err(Error::Config(_))));
}

#[test]
fn regime_names_round_trip() {
    for r in Regime::ALL {
        assert_eq!(r.name().parse::<Regime>().unwrap(), r);
    }
    assert!("bogus".parse::<Regime>().is_err());
}

fn marker_sample(n: usize) -> RgbtSample {
    let gt = Tensor::from_fn(&[n, n], |i| if (i / n) < n / 3 && (i % n) < n / 2 { 1.0 } else { 0.0 });
    let rgb =
        Tensor::from_fn(&[n, n, 3], |i| if i % 3 == 0 { gt.data()[i / 3] } else { (i / 3) as f64 / (n * n) as f64 });
    let thermal = gt.reshape(&[n, n, 1]).unwrap();
    RgbtSample::new("m", rgb, thermal, gt).unwrap()
}

#[test]
fn augmentation_is_shared_across_modalities() {
    let s = marker_sample(20);
    for seed in 0..30 {
        let a = augment(&s, &AugmentConfig::default(), seed);
        assert!(a.gt.data().iter().all(|&v| v == 0.0 || v == 1.0));
        for p in 0..400 {
            assert_eq!(a.rgb.data()[p * 3], a.gt.data()[p]);
            assert_eq!(a.thermal.data()[p], a.gt.data()[p]);
        }
    }
    assert_eq!(augment(&s, &AugmentConfig::none(), 4), s);
}

#[test]
fn rotations_and_flips_compose_to_identity() {
    let s = marker_sample(9);
    let turn = Augmentation { crop: None, quarter_turns: 1, flip: false };
    let mut t = s.gt.clone();
    for _ in 0..4 {
        t = turn.apply(&t);
    }
    assert_eq!(t, s.gt);
    assert_ne!(turn.apply(&s.gt), s.gt);
    let flip = Augmentation { crop: None, quarter_turns: 0, flip: true };
    assert_eq!(flip.apply(&flip.apply(&s.rgb)), s.rgb);
    // a full-size crop at the origin is the identity
    let crop = Augmentation { crop: Some((0, 0, 9)), quarter_turns: 0, flip: false };
    assert_eq!(crop.apply(&s.thermal), s.thermal);
}
