use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::json;

use mtdepth::data::{
    read_kitti_png, read_rgb_png, write_kitti_png, write_rgb_png, DatasetManifest, ManifestEntry, Split,
};
use mtdepth::harness::checkpoint;
use mtdepth::harness::{run_ablation, AblationAxis, ExperimentConfig, HarnessError, Trainer, MANUAL_WEIGHTS};
use mtdepth::losses::silog;
use mtdepth::model::ENCODER_STRIDE;
use mtdepth::optim::LrSweepRecord;
use mtdepth::{Model, Tensor, WeightingMode};

use crate::args::{
    AblateArgs, Command, ConfigArgs, EvalArgs, GenDataArgs, LrFindArgs, OutputArgs, PredictArgs, TrainArgs, Weighting,
};
use crate::CliError;

const RESOLVED_CONFIG: &str = "resolved_config.json";

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::LrFind(a) => lr_find(a),
        Command::Train(a) => train(a),
        Command::Ablate(a) => ablate(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
    }
}

impl ConfigArgs {
    fn is_empty(&self) -> bool {
        self.config.is_none()
            && self.seed.is_none()
            && self.iterations.is_none()
            && self.lr.is_none()
            && self.batch_size.is_none()
            && self.crop.is_none()
            && self.n_cls.is_none()
            && !self.no_aux
            && self.weighting.is_none()
            && self.manual_weights.is_none()
            && self.validation_interval.is_none()
            && self.prefetch.is_none()
            && self.data_seed.is_none()
            && self.train_samples.is_none()
            && self.val_samples.is_none()
    }

    /// Config file (or defaults) with the flags applied on top, checked as a
    /// training configuration.
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let cfg = self.merge()?;
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn merge(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.lr {
            cfg.lr.initial = Some(v);
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.crop {
            cfg.augment.crop = (v, v);
        }
        if let Some(v) = self.n_cls {
            cfg.model.n_cls = v;
        }
        if self.no_aux {
            cfg.model.aux_head = false;
        }
        cfg.weighting = match (self.weighting, &self.manual_weights) {
            (Some(w @ (Weighting::Equal | Weighting::Learned)), Some(_)) => {
                let name = if w == Weighting::Equal { "equal" } else { "learned" };
                return Err(CliError::Usage(format!(
                    "--weighting {name} conflicts with --manual-weights"
                )));
            }
            (_, Some(w)) => WeightingMode::Manual {
                w_reg: w[0],
                w_cls: w[1],
            },
            (Some(Weighting::Manual), None) => match cfg.weighting {
                m @ WeightingMode::Manual { .. } => m,
                _ => WeightingMode::Manual {
                    w_reg: MANUAL_WEIGHTS.0,
                    w_cls: MANUAL_WEIGHTS.1,
                },
            },
            (Some(Weighting::Equal), None) => WeightingMode::Equal,
            (Some(Weighting::Learned), None) => WeightingMode::Learned,
            (None, None) => cfg.weighting,
        };
        if let Some(v) = self.validation_interval {
            cfg.validation_interval = v;
        }
        if let Some(v) = self.prefetch {
            cfg.prefetch = v;
        }
        if let Some(v) = self.data_seed {
            cfg.data.seed = v;
        }
        if let Some(v) = self.train_samples {
            cfg.data.train_samples = v;
        }
        if let Some(v) = self.val_samples {
            cfg.data.val_samples = v;
        }
        Ok(cfg)
    }
}

/// Creates the output directory, refusing to write into a non-empty one
/// unless overwriting was requested.
fn prepare_out(out: &OutputArgs) -> Result<PathBuf, CliError> {
    let dir = &out.out;
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
        }
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !out.overwrite {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty; pass --overwrite to reuse it",
                dir.display()
            )));
        }
    } else {
        fs::create_dir_all(dir)?;
    }
    Ok(dir.clone())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_sweep(dir: &Path, record: &LrSweepRecord) -> Result<(), CliError> {
    record.write_csv(BufWriter::new(fs::File::create(dir.join("lr_sweep.csv"))?))?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "selected_alpha": record.selected_alpha,
            "selected_step": record.selected_step,
            "truncated_at": record.truncated_at,
            "measure": record.measure_used,
            "intervals": record.intervals,
            "warnings": record.warnings,
        }),
    )
}

fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let cfg = args.config.merge()?;
    cfg.data.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let scheme = cfg.scheme().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = prepare_out(&args.output)?;
    write_json(&out.join(RESOLVED_CONFIG), &cfg)?;
    let mut files = Vec::new();
    let mut coverage_sum = 0.0;
    for (split, name, count) in [
        (Split::Train, "train", cfg.data.train_samples),
        (Split::Val, "val", cfg.data.val_samples),
    ] {
        fs::create_dir_all(out.join(name).join("image"))?;
        fs::create_dir_all(out.join(name).join("depth"))?;
        for index in 0..count {
            let sample = cfg.data.sample(split, index, &scheme)?;
            let file = format!("{index:05}.png");
            let image = format!("{name}/image/{file}");
            let depth = format!("{name}/depth/{file}");
            write_rgb_png(&sample.rgb, &out.join(&image))?;
            write_kitti_png(&sample.gt, &out.join(&depth))?;
            let coverage = sample.gt.coverage();
            coverage_sum += coverage;
            files.push(ManifestEntry {
                split: name.into(),
                index,
                image,
                depth,
                coverage,
            });
        }
    }
    let manifest = DatasetManifest {
        seed: cfg.data.seed,
        spec: cfg.data.clone(),
        sample_count: files.len(),
        mean_coverage: coverage_sum / files.len().max(1) as f64,
        files,
    };
    log::info!(
        "wrote {} samples, mean coverage {:.4}",
        manifest.sample_count,
        manifest.mean_coverage
    );
    write_json(&out.join("manifest.json"), &manifest)
}

fn lr_find(args: LrFindArgs) -> Result<(), CliError> {
    if args.config.lr.is_some() {
        return Err(CliError::Usage("--lr has no meaning for lr-find".into()));
    }
    let mut cfg = args.config.resolve()?;
    cfg.lr.initial = None;
    if let Some(v) = args.steps {
        cfg.lr.sweep.steps = v;
    }
    if let Some(v) = args.start {
        cfg.lr.sweep.start = v;
    }
    if let Some(v) = args.end {
        cfg.lr.sweep.end = v;
    }
    let out = prepare_out(&args.output)?;
    write_json(&out.join(RESOLVED_CONFIG), &cfg)?;
    let trainer = Trainer::new(&cfg)?;
    let record = trainer.sweep_record().expect("sweep runs without an initial rate");
    for w in &record.warnings {
        log::warn!("{w}");
    }
    write_sweep(&out, record)
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut trainer = match &args.resume {
        Some(path) => {
            let requested = if args.config.is_empty() {
                None
            } else {
                Some(args.config.resolve()?)
            };
            Trainer::restore(path, requested.as_ref()).map_err(|e| match e {
                HarnessError::ConfigConflict { .. } => CliError::Usage(e.to_string()),
                other => other.into(),
            })?
        }
        None => Trainer::new(&args.config.resolve()?)?,
    };
    let out = prepare_out(&args.output)?;
    write_json(&out.join(RESOLVED_CONFIG), trainer.config())?;
    if let Some(record) = trainer.sweep_record() {
        write_sweep(&out, record)?;
    }
    let ckpt = out.join("model.ckpt");
    let chunk = match args.checkpoint_every {
        0 => trainer.config().iterations,
        n => n,
    };
    while !trainer.is_finished() {
        match trainer.run(chunk) {
            Ok(()) => {}
            Err(e @ HarnessError::NonFiniteLoss { .. }) => {
                trainer.checkpoint(&out.join("last_good.ckpt"))?;
                trainer.log().write(&out)?;
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        }
        if !trainer.is_finished() {
            trainer.checkpoint(&ckpt)?;
        }
    }
    trainer.log().write(&out)?;
    trainer.checkpoint(&ckpt)?;
    let w = trainer.weights();
    write_json(
        &out.join("summary.json"),
        &json!({
            "iterations": trainer.iteration(),
            "skipped_batches": trainer.skipped_batches(),
            "alpha0": trainer.config().lr.initial,
            "best_silog_reg": trainer.log().best_silog_reg(),
            "best_silog_cls": trainer.log().best_silog_cls(),
            "s_reg": w.s_reg,
            "s_cls": w.s_cls,
        }),
    )
}

fn ablate(args: AblateArgs) -> Result<(), CliError> {
    let axis: AblationAxis = args.axis.parse().map_err(CliError::Usage)?;
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let mut cfg = args.config.resolve()?;
    let out = prepare_out(&args.output)?;
    if cfg.lr.initial.is_none() {
        let trainer = Trainer::new(&cfg)?;
        if let Some(record) = trainer.sweep_record() {
            write_sweep(&out, record)?;
        }
        cfg.lr.initial = trainer.config().lr.initial;
    }
    write_json(&out.join(RESOLVED_CONFIG), &cfg)?;
    let table = run_ablation(axis, &cfg, args.seeds, args.jobs)?;
    fs::write(out.join("table.csv"), table.to_csv())?;
    fs::write(out.join("table.json"), table.to_json() + "\n")?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    for dir in [&args.pred, &args.gt] {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
        }
    }
    let mut names: Vec<String> = fs::read_dir(&args.pred)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Runtime(format!("no PNG files in {}", args.pred.display())));
    }
    let out = prepare_out(&args.output)?;
    write_json(
        &out.join(RESOLVED_CONFIG),
        &json!({ "command": "eval", "pred": args.pred, "gt": args.gt }),
    )?;
    let mut images = Vec::new();
    let mut total = 0.0;
    let mut scored = 0usize;
    for name in &names {
        let gt_path = args.gt.join(name);
        if !gt_path.is_file() {
            return Err(CliError::Runtime(format!(
                "no ground truth {} for prediction {name}",
                gt_path.display()
            )));
        }
        let pred = read_kitti_png(&args.pred.join(name))?;
        let gt = read_kitti_png(&gt_path)?;
        match silog(&pred, &gt) {
            Ok(score) => {
                total += score.scaled;
                scored += 1;
                images.push(json!({ "name": name, "silog_scaled": score.scaled, "silog_raw": score.raw, "pixels": score.pixels }));
            }
            Err(mtdepth::losses::LossError::EmptyIntersection) => {
                log::warn!("{name}: no pixel valid in both maps, skipped");
                images.push(json!({ "name": name, "silog_scaled": null, "silog_raw": null, "pixels": 0 }));
            }
            Err(e) => return Err(CliError::Runtime(format!("{name}: {e}"))),
        }
    }
    if scored == 0 {
        return Err(CliError::Runtime("no image pair shares a valid pixel".into()));
    }
    write_json(
        &out.join("eval.json"),
        &json!({
            "images": images,
            "scored": scored,
            "mean_silog_scaled": total / scored as f64,
        }),
    )
}

fn predict(args: PredictArgs) -> Result<(), CliError> {
    let ckpt = checkpoint::read(&args.checkpoint)?;
    let cfg = ckpt.meta.config;
    let mut model = Model::build(cfg.model.clone(), cfg.seed)?;
    model.set_flat_params(&ckpt.params)?;
    let rgb = read_rgb_png(&args.image)?;
    if rgb.height % ENCODER_STRIDE != 0 || rgb.width % ENCODER_STRIDE != 0 {
        return Err(CliError::Runtime(format!(
            "image is {}x{}; both sides must be multiples of {ENCODER_STRIDE}",
            rgb.height, rgb.width
        )));
    }
    let out = prepare_out(&args.output)?;
    write_json(
        &out.join(RESOLVED_CONFIG),
        &json!({ "command": "predict", "checkpoint": args.checkpoint, "image": args.image, "config": cfg }),
    )?;
    let input = Tensor::new(vec![1, 3, rgb.height, rgb.width], rgb.values)?;
    let depth = model.predict_depth(&input, &cfg.bounds)?;
    let name = args
        .image
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "depth.png".into());
    write_kitti_png(&depth, &out.join(name))?;
    Ok(())
}
