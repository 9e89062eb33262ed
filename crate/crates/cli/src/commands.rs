use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use kansam::data::{load_manifest, read_pgm, read_ppm, write_dataset, write_ppm, AugmentConfig, Manifest, RgbtSample};
use kansam::diagnostics;
use kansam::masking::{sample_mask, MaskLabel};
use kansam::metrics::{evaluate, MetricsReport, ThresholdMode};
use kansam::model::{load_checkpoint, save_checkpoint, SaliencyModel};
use kansam::train::{ablation_suite, fit, AblationConfig};
use kansam::Tensor;

use crate::{
    AblateArgs, Cli, CliConfig, CliError, Command, CountParamsArgs, EvalArgs, GenDataArgs, GradcheckArgs,
    MaskPreviewArgs, ModelOverrides, PredictArgs, TrainArgs, TrainOverrides,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    if threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a, threads),
        Command::Eval(a) => eval(a, threads),
        Command::Predict(a) => predict(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::CountParams(a) => count_params(a),
        Command::MaskPreview(a) => mask_preview(a),
        Command::Ablate(a) => ablate(a, threads),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(kansam::Error::Io { path: path.to_path_buf(), source: e })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn apply_model(cfg: &mut CliConfig, o: &ModelOverrides) {
    let m = &mut cfg.model;
    if let Some(v) = o.input_size {
        m.input_size = v;
    }
    if let Some(v) = o.patch_size {
        m.patch_size = v;
    }
    if let Some(v) = o.decoder_upsample {
        m.decoder_upsample = v;
    }
    if let Some(v) = o.adapter_reduction {
        m.adapter_reduction = v;
    }
    if let Some(v) = o.spline_intervals {
        m.spline.intervals = v;
    }
    if let Some(v) = o.spline_degree {
        m.spline.degree = v;
    }
    if let Some(v) = o.precision {
        m.precision = v;
    }
}

fn apply_train(cfg: &mut CliConfig, o: &TrainOverrides, seed: Option<u64>, threads: Option<usize>) {
    let t = &mut cfg.train;
    if let Some(v) = o.lr {
        t.lr = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = o.weight_decay {
        t.weight_decay = v;
    }
    if let Some(v) = o.beta1 {
        t.beta1 = v;
    }
    if let Some(v) = o.beta2 {
        t.beta2 = v;
    }
    if let Some(v) = o.grad_clip {
        t.grad_clip = v;
    }
    if let Some(v) = o.clip_mode {
        t.clip_mode = v;
    }
    if let Some(v) = o.schedule {
        t.schedule = v;
    }
    if o.no_augment {
        t.augment = AugmentConfig::none();
    }
    if let Some(v) = o.p_mask {
        t.mask.p_mask = v;
    }
    if let Some(v) = o.mask_mode {
        t.mask.mode = v;
    }
    if let Some(v) = seed {
        t.seed = v;
    }
    if let Some(v) = threads {
        t.threads = v;
    }
}

fn load_samples(path: &Path, input_size: usize) -> Result<Vec<RgbtSample>> {
    let manifest: Manifest = load_manifest(path)?;
    let samples = manifest.load_samples()?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("{}: manifest lists no samples", path.display())));
    }
    if let Some(s) = samples.iter().find(|s| s.size() != (input_size, input_size)) {
        let (h, w) = s.size();
        return Err(CliError::Usage(format!(
            "{}: sample {} is {h}x{w} but the model expects {input_size}x{input_size}",
            path.display(),
            s.id
        )));
    }
    Ok(samples)
}

pub fn metrics_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}", "sample");
    for f in MetricsReport::FIELDS {
        out.push_str(&format!(" {f:>8}"));
    }
    out.push('\n');
    for (label, m) in rows {
        out.push_str(&format!("{label:<width$}"));
        for v in m.values() {
            out.push_str(&format!(" {v:>8.4}"));
        }
        out.push('\n');
    }
    out
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = CliConfig::load(a.config.config.as_deref())?;
    let scene = &mut cfg.scene;
    if let Some(r) = a.regime {
        let preset = r.scene(scene.image_size, scene.seed);
        scene.rgb_contrast = preset.rgb_contrast;
        scene.thermal_contrast = preset.thermal_contrast;
        scene.clutter_rgb_contrast = preset.clutter_rgb_contrast;
        scene.clutter_thermal_contrast = preset.clutter_thermal_contrast;
    }
    if let Some(v) = a.seed {
        scene.seed = v;
    }
    if let Some(v) = a.image_size {
        scene.image_size = v;
    }
    if let Some(v) = a.noise_sigma {
        scene.noise_sigma = v;
    }
    cfg.scene.validate()?;
    let (train, test) = write_dataset(&a.out, &cfg.scene, a.regime, a.n_train, a.n_test)?;
    let regime = a.regime.map_or("custom".to_string(), |r| r.name().to_string());
    println!(
        "wrote {} ({regime}, {}x{}, seed {})",
        a.out.display(),
        cfg.scene.image_size,
        cfg.scene.image_size,
        cfg.scene.seed
    );
    println!("{:<6} {:>6} {:>10} {:>10} {:>10}", "split", "count", "gt_min", "gt_mean", "gt_max");
    for (name, m) in [("train", &train), ("test", &test)] {
        let fractions: Vec<f64> = m.load_samples()?.iter().map(RgbtSample::gt_fraction).collect();
        let (lo, hi, mean) = if fractions.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (
                fractions.iter().copied().fold(f64::INFINITY, f64::min),
                fractions.iter().copied().fold(0.0, f64::max),
                fractions.iter().sum::<f64>() / fractions.len() as f64,
            )
        };
        println!("{name:<6} {:>6} {lo:>10.4} {mean:>10.4} {hi:>10.4}", m.len());
    }
    Ok(())
}

fn train(a: TrainArgs, threads: Option<usize>) -> Result<()> {
    let mut cfg = CliConfig::load(a.config.config.as_deref())?;
    apply_model(&mut cfg, &a.model);
    apply_train(&mut cfg, &a.train, a.seed, threads);
    let (model_cfg, train_cfg) = a.variant.apply(&cfg.model, &cfg.train);
    cfg.model = model_cfg;
    cfg.train = train_cfg;
    cfg.validate()?;

    let train_set = load_samples(&a.data, cfg.model.input_size)?;
    let eval_set = match &a.eval_data {
        Some(p) => load_samples(p, cfg.model.input_size)?,
        None => train_set.clone(),
    };
    create_dir(&a.out)?;
    write_file(&a.out.join("config.toml"), cfg.to_toml().as_bytes())?;

    let log_path = a.out.join("train.log");
    let file = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut log_error = None;
    let mut model = SaliencyModel::new(cfg.model.clone(), cfg.train.seed)?;
    let result = fit(&mut model, &train_set, &eval_set, &cfg.train, |row| {
        if log_error.is_none() {
            if let Err(e) = writeln!(log, "{}", row.to_json()) {
                log_error = Some(e);
            }
        }
        if let Some(m) = &row.eval {
            println!(
                "epoch {:>4} step {:>6} train_loss {:.4} mae {:.4} f_max {:.4}",
                row.epoch,
                row.step,
                row.train_loss.unwrap_or(f64::NAN),
                m.mae,
                m.f_max
            );
        }
    });
    let flushed = log.flush();
    if let Some(e) = log_error {
        return Err(io_err(&log_path, e));
    }
    flushed.map_err(|e| io_err(&log_path, e))?;
    let result = result?;

    save_checkpoint(&model, &a.out.join("model.ckpt"))?;
    save_checkpoint(&result.best, &a.out.join("best.ckpt"))?;
    let report = evaluate(&model, &eval_set, ThresholdMode::Sweep, cfg.train.threads)?;
    let json = serde_json::to_string_pretty(&report).expect("reports always serialize");
    write_file(&a.out.join("report.json"), json.as_bytes())?;
    let best = result.state.best.expect("at least one epoch ran");
    println!("variant {} steps {} best epoch {} (mae {:.4})", a.variant, result.state.step, best.epoch, best.mae);
    print!("{}", metrics_table(&[("final".into(), report.mean)]));
    Ok(())
}

fn eval(a: EvalArgs, threads: Option<usize>) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let samples = load_samples(&a.data, model.config().input_size)?;
    let report = evaluate(&model, &samples, a.threshold_mode, threads.unwrap_or(1).max(1))?;
    let json = serde_json::to_string_pretty(&report).expect("reports always serialize");
    if let Some(out) = &a.out {
        write_file(out, json.as_bytes())?;
    }
    if a.json {
        println!("{json}");
    } else {
        let mut rows: Vec<(String, MetricsReport)> =
            report.per_sample.iter().map(|s| (s.id.clone(), s.metrics)).collect();
        rows.push(("mean".into(), report.mean));
        print!("{}", metrics_table(&rows));
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let rgb = read_ppm(&a.rgb)?;
    let thermal = read_pgm(&a.thermal)?;
    let (h, w) = (rgb.shape()[0], rgb.shape()[1]);
    if thermal.shape() != [h, w] {
        return Err(CliError::Usage(format!("thermal image {:?} does not match rgb image {h}x{w}", thermal.shape())));
    }
    let s = model.config().input_size;
    if (h, w) != (s, s) {
        return Err(CliError::Usage(format!("input is {h}x{w} but the checkpoint expects {s}x{s}")));
    }
    let thermal = thermal.reshape(&[h, w, 1])?;
    let map = model.predict(&rgb, &thermal)?;
    kansam::data::write_pgm(&a.out, &map.values)?;
    println!("wrote {} ({h}x{w})", a.out.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let results = diagnostics::run(a.scale, a.seed)?;
    let tol = a.scale.tolerance();
    let width = results.iter().map(|r| r.target.len()).max().unwrap_or(6).max(6);
    println!("{:<width$} {:>8} {:>12}  status", "target", "coords", "worst_rel");
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for r in &results {
        let e = r.report.max_rel_err;
        let ok = e < tol;
        println!("{:<width$} {:>8} {e:>12.3e}  {}", r.target, r.report.checked, if ok { "ok" } else { "FAIL" });
        worst = worst.max(e);
        if !ok {
            failed.push(r.target.clone());
        }
    }
    println!("scale {} worst {worst:.3e} tolerance {tol:.0e}", a.scale);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!("gradient check above {tol:.0e}: {}", failed.join(", "))))
    }
}

fn count_params(a: CountParamsArgs) -> Result<()> {
    let mut cfg = CliConfig::load(a.config.config.as_deref())?;
    apply_model(&mut cfg, &a.model);
    cfg.model.validate()?;
    let report = crate::report::ParamReport::build(&cfg.model)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("reports always serialize"));
    } else {
        print!("{}", report.render());
    }
    Ok(())
}

pub const UNMASKED_COLOR: [f64; 3] = [0.5, 0.5, 0.5];
pub const RGB_MASKED_COLOR: [f64; 3] = [1.0, 0.0, 0.0];
pub const THERMAL_MASKED_COLOR: [f64; 3] = [0.0, 0.0, 1.0];

fn mask_preview(a: MaskPreviewArgs) -> Result<()> {
    let mut cfg = CliConfig::load(a.config.config.as_deref())?;
    if let Some(v) = a.p_mask {
        cfg.train.mask.p_mask = v;
    }
    if let Some(v) = a.mask_mode {
        cfg.train.mask.mode = v;
    }
    cfg.train.mask.validate()?;
    if a.size == 0 {
        return Err(CliError::Usage("--size must be positive".into()));
    }
    let pattern = sample_mask(a.size, a.size, &cfg.train.mask, a.seed);
    let mut data = Vec::with_capacity(a.size * a.size * 3);
    for &label in pattern.labels() {
        data.extend_from_slice(match label {
            MaskLabel::Unmasked => &UNMASKED_COLOR,
            MaskLabel::MaskRgb => &RGB_MASKED_COLOR,
            MaskLabel::MaskThermal => &THERMAL_MASKED_COLOR,
        });
    }
    write_ppm(&a.out, &Tensor::new(&[a.size, a.size, 3], data)?)?;
    let n = (a.size * a.size) as f64;
    println!(
        "wrote {}: unmasked {:.4} rgb-masked {:.4} thermal-masked {:.4}",
        a.out.display(),
        pattern.count(MaskLabel::Unmasked) as f64 / n,
        pattern.count(MaskLabel::MaskRgb) as f64 / n,
        pattern.count(MaskLabel::MaskThermal) as f64 / n
    );
    Ok(())
}

fn ablate(a: AblateArgs, threads: Option<usize>) -> Result<()> {
    let mut cfg = CliConfig::load(a.config.config.as_deref())?;
    apply_model(&mut cfg, &a.model);
    apply_train(&mut cfg, &a.train, None, threads);
    cfg.validate()?;
    if a.seeds.is_empty() || a.variants.is_empty() {
        return Err(CliError::Usage("ablation needs at least one seed and one variant".into()));
    }
    let train_set = load_samples(&a.train_data, cfg.model.input_size)?;
    let test_set = load_samples(&a.test_data, cfg.model.input_size)?;
    let ab = AblationConfig { model: cfg.model, train: cfg.train, seeds: a.seeds, variants: a.variants };
    let report = ablation_suite(&train_set, &test_set, &ab)?;
    if let Some(out) = &a.out {
        let json = serde_json::to_string_pretty(&report).expect("reports always serialize");
        write_file(out, json.as_bytes())?;
    }
    println!("{:<10} {:>6} {:>8} {:>8}", "variant", "seed", "tunable", "mae");
    for r in &report.rows {
        println!("{:<10} {:>6} {:>8} {:>8.4}", r.variant.name(), r.seed, r.tunable_params, r.test.mae);
    }
    println!("\nmedian over seeds");
    print!("{}", report.table());
    Ok(())
}
