use super::*;
use crate::data::{generate_split, Regime};
use crate::model::ModelConfig;

fn tiny_data(n: usize) -> Vec<RgbtSample> {
    generate_split(&Regime::ThermalInformative.scene(16, 4), 0..n).unwrap()
}

fn tiny_model(seed: u64) -> SaliencyModel {
    SaliencyModel::new(ModelConfig::tiny(), seed).unwrap()
}

fn quick_cfg() -> TrainConfig {
    TrainConfig { lr: 1e-2, batch_size: 2, max_epochs: 2, ..TrainConfig::default() }
}

#[test]
fn zero_lr_leaves_parameters_but_counts_the_step() {
    let mut model = tiny_model(1);
    let before = model.store().clone();
    let mut state = TrainState::new(&model);
    let cfg = TrainConfig { lr: 0.0, ..TrainConfig::default() };
    train_step(&mut model, &tiny_data(2), &mut state, &cfg).unwrap();
    assert_eq!(state.step, 1);
    assert_eq!(model.store(), &before);
}

#[test]
fn clipping_below_threshold_is_bit_exact_identity() {
    let data = tiny_data(2);
    let mut a = tiny_model(2);
    let mut b = a.clone();
    let (mut sa, mut sb) = (TrainState::new(&a), TrainState::new(&b));
    let r = train_step(&mut a, &data, &mut sa, &TrainConfig { grad_clip: 1e9, ..quick_cfg() }).unwrap();
    let limit = r.grad_norm * 1.5;
    train_step(&mut b, &data, &mut sb, &TrainConfig { grad_clip: limit, ..quick_cfg() }).unwrap();
    assert_eq!(a.store(), b.store());
}

#[test]
fn clipped_norm_never_exceeds_limit() {
    let mut grads = vec![vec![3.0, -4.0], vec![12.0]];
    let before = clip_gradients(&mut grads, ClipMode::Norm, 0.5);
    assert_eq!(before, 13.0);
    assert!(global_norm(grads.iter().map(|g| g.as_slice())) <= 0.5 + 1e-9);
    let mut grads = vec![vec![3.0, -4.0, 0.1]];
    clip_gradients(&mut grads, ClipMode::Value, 0.5);
    assert_eq!(grads[0], vec![0.5, -0.5, 0.1]);
}

#[test]
fn adamw_converges_on_a_quadratic() {
    // minimise (θ - 3)^2 from θ = 0; minimiser 3 in closed form
    let opt = AdamW { lr: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
    let (mut theta, mut m, mut v) = ([0.0], [0.0], [0.0]);
    for t in 1..=200 {
        let g = [2.0 * (theta[0] - 3.0)];
        opt.update(t, &mut theta, &g, &mut m, &mut v);
    }
    assert!((theta[0] - 3.0).abs() < 1e-3, "{}", theta[0]);
}

#[test]
fn weight_decay_is_decoupled() {
    let opt = AdamW { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.5 };
    let mut p = [2.0, -1.0];
    let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
    for t in 1..=3 {
        let before = p;
        opt.update(t, &mut p, &[0.0, 0.0], &mut m, &mut v);
        for i in 0..2 {
            assert_eq!(p[i], before[i] * (1.0 - 0.1 * 0.5));
        }
    }
}

#[test]
fn cosine_schedule_decays_to_zero() {
    assert_eq!(Schedule::Constant.lr(0.1, 50, 100), 0.1);
    assert_eq!(Schedule::Cosine.lr(0.1, 0, 100), 0.1);
    assert!((Schedule::Cosine.lr(0.1, 50, 100) - 0.05).abs() < 1e-15);
    assert!(Schedule::Cosine.lr(0.1, 100, 100).abs() < 1e-15);
}

#[test]
fn ten_steps_touch_only_the_tunable_partition() {
    let mut model = tiny_model(3);
    let before = model.store().clone();
    let mut state = TrainState::new(&model);
    let tunable = model.store().ids_in(Partition::Tunable);
    assert_eq!(state.moments.iter().map(|m| m.id).collect::<Vec<_>>(), tunable);
    let data = tiny_data(8);
    let cfg = TrainConfig { lr: 1e-3, ..TrainConfig::default() };
    for k in 0..10 {
        let batch = &data[(k % 4) * 2..(k % 4) * 2 + 2];
        train_step(&mut model, batch, &mut state, &cfg).unwrap();
    }
    for (id, p) in model.store().iter() {
        let old = before.value(id);
        let same = old.data().iter().zip(p.value.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        match p.partition {
            Partition::Frozen => assert!(same, "{} moved", p.name),
            Partition::Tunable => assert!(!same, "{} did not move", p.name),
        }
    }
}

#[test]
fn non_finite_input_aborts_with_batch_ids() {
    let mut model = tiny_model(5);
    let mut state = TrainState::new(&model);
    let mut data = tiny_data(2);
    data[1].rgb.data_mut()[7] = f64::NAN;
    let err = train_step(&mut model, &data, &mut state, &quick_cfg()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Numerical(_)), "{msg}");
    assert!(msg.contains(&data[0].id) && msg.contains(&data[1].id), "{msg}");
}

#[test]
fn log_rows_and_determinism() {
    let data = tiny_data(5);
    let eval = tiny_data(2);
    let run = || {
        let mut model = tiny_model(6);
        let r = fit(&mut model, &data, &eval, &quick_cfg(), |_| {}).unwrap();
        (r.log, model)
    };
    let (log_a, model_a) = run();
    let (log_b, model_b) = run();
    assert_eq!(log_a.len(), 2 * 3 + 2);
    assert_eq!(log_a.iter().filter(|r| r.kind == "epoch").count(), 2);
    assert_eq!(model_a, model_b);
    let strip = |rows: &[LogRow]| rows.iter().map(|r| LogRow { wall_ms: 0, ..r.clone() }.to_json()).collect::<Vec<_>>();
    assert_eq!(strip(&log_a), strip(&log_b));
    let first = log_a[0].to_json();
    assert!(first.starts_with("{\"kind\":\"step\",\"epoch\":0,\"step\":1,"), "{first}");
    assert!(first.ends_with(&format!("\"wall_ms\":{}}}", log_a[0].wall_ms)));
}

#[test]
fn fit_rejects_empty_sets_and_bad_config() {
    let mut model = tiny_model(7);
    let data = tiny_data(2);
    assert!(fit(&mut model, &[], &data, &quick_cfg(), |_| {}).is_err());
    assert!(fit(&mut model, &data, &[], &quick_cfg(), |_| {}).is_err());
    for bad in [
        TrainConfig { lr: 0.0, ..quick_cfg() },
        TrainConfig { grad_clip: 0.0, ..quick_cfg() },
        TrainConfig { batch_size: 0, ..quick_cfg() },
    ] {
        assert!(matches!(fit(&mut model, &data, &data, &bad, |_| {}), Err(Error::Config(_))));
    }
}

#[test]
fn mask_and_augment_seeds_vary_by_epoch_and_id() {
    assert_ne!(mask_seed(1, "a", 0), mask_seed(1, "a", 1));
    assert_ne!(mask_seed(1, "a", 0), mask_seed(1, "b", 0));
    assert_ne!(mask_seed(1, "a", 0), augment_seed(1, "a", 0));
}

#[test]
fn variants_toggle_adapters_and_masking() {
    let (m, t) = Variant::Base.apply(&ModelConfig::tiny(), &TrainConfig::default());
    assert!(!m.use_adapters && !t.mask.enabled);
    let model = SaliencyModel::new(m, 1).unwrap();
    assert_eq!(model.store().scalar_count_prefixed("adapter"), 0);
    let (m, t) = Variant::Full.apply(&ModelConfig::tiny(), &TrainConfig::default());
    assert!(m.use_adapters && t.mask.enabled);
    assert_eq!("mask-only".parse::<Variant>().unwrap(), Variant::MaskOnly);
    assert!("bogus".parse::<Variant>().is_err());
}

#[test]
fn ablation_report_shape() {
    let data = tiny_data(4);
    let cfg = AblationConfig {
        model: ModelConfig::tiny(),
        train: TrainConfig { lr: 1e-2, batch_size: 2, max_epochs: 1, ..TrainConfig::default() },
        seeds: vec![1],
        variants: Variant::ALL.to_vec(),
    };
    let report = ablation_suite(&data, &data[..2], &cfg).unwrap();
    assert_eq!(report.rows.len(), 4);
    let base = report.rows_for(Variant::Base).next().unwrap();
    assert_eq!(base.adapter_params, 0);
    let table = report.table();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().all(|l| l.split_whitespace().count() == 7));
}
