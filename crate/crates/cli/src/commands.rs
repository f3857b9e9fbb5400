use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use bnslim::ablation::{run_ablation, write_ablation_csv};
use bnslim::augment::{apply_method, read_ppm, write_ppm, AugmentConfig, Augmenter, Method};
use bnslim::eval::{
    box_predictions, classify_accuracy, generate_dataset, mean_average_precision, measure_latency, model_volume,
    read_dataset, read_split, write_dataset, Dataset,
};
use bnslim::model::{
    build_model, count_flops, count_params, load_model, parse_description, reference_cnn, save_model, ModelGraph,
};
use bnslim::prune::{
    apply_prune, collect_scales, compression_ratio, compression_report, finetune as finetune_model, plan_prune,
    plan_to_text, PruneMethod,
};
use bnslim::rng::stream;
use bnslim::train::{train_with, write_metrics_csv, LrSchedule, TrainConfig, DEFAULT_SPARSITY_L1};

use bnslim_cli::config::{augment_config, existing, required, RunConfig, TrainSection};
use bnslim_cli::failure::{invalid, Failure, OrInvalid};

use crate::{AblateArgs, BenchArgs, EvalArgs, FinetuneArgs, GenDataArgs, PreviewArgs, PruneArgs, TrainArgs, TrainFlags};

pub const PRUNE_CSV_HEADER: [&str; 5] = [
    "model",
    "prune_method",
    "prune_ratio",
    "model_volume_bytes",
    "compressing_ratio",
];

pub const BENCH_CSV_HEADER: [&str; 10] = [
    "model",
    "model_volume_bytes",
    "compressing_ratio",
    "params",
    "flops",
    "latency_mean_s",
    "latency_std_s",
    "threads",
    "accuracy",
    "map",
];

pub const EVAL_CSV_HEADER: [&str; 7] = [
    "model",
    "split",
    "accuracy",
    "map",
    "params",
    "flops",
    "model_volume_bytes",
];

/// IoU threshold of the reported box mAP.
const MAP_IOU: f64 = 0.5;

impl TrainFlags {
    fn section(&self) -> Result<TrainSection, Failure> {
        let schedule = match &self.step_decay {
            None => None,
            Some(s) => {
                let (step, gamma) = s
                    .split_once(',')
                    .ok_or_else(|| invalid(format!("--step-decay expects STEP,GAMMA, got `{s}`")))?;
                Some(LrSchedule::StepDecay {
                    step: step.trim().parse().or_invalid("--step-decay step")?,
                    gamma: gamma.trim().parse().or_invalid("--step-decay gamma")?,
                })
            }
        };
        Ok(TrainSection {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            l1_coeff: self.l1,
            seed: self.seed,
            schedule,
        })
    }
}

fn parse_methods(names: Option<&[String]>) -> Result<Vec<Method>, Failure> {
    let Some(names) = names else {
        return Ok(Method::ALL.to_vec());
    };
    let methods = names
        .iter()
        .filter(|n| !n.trim().is_empty())
        .map(|n| Method::parse(n.trim()).ok_or_else(|| invalid(format!("unknown augmentation method `{n}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(invalid("empty augmentation method list"));
    }
    Ok(methods)
}

fn load_input_model(path: &Path) -> Result<ModelGraph, Failure> {
    if !path.exists() {
        return Err(invalid(format!("model file {} does not exist", path.display())));
    }
    load_model(path).or_invalid(&format!("model file {}", path.display()))
}

fn load_description(path: &Path) -> Result<ModelGraph, Failure> {
    let text = fs::read_to_string(path).or_invalid(&format!("model description {}", path.display()))?;
    let desc = parse_description(&text).or_invalid(&format!("model description {}", path.display()))?;
    build_model(&desc).or_invalid(&format!("model description {}", path.display()))
}

fn output_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = required(flag, cfg.output.clone(), "output directory")?;
    if dir.exists() && !dir.is_dir() {
        return Err(invalid(format!("output {} is not a directory", dir.display())));
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_csv_file(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> anyhow::Result<()>) -> Result<(), Failure> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?;
        }
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn percent(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn check_training(cfg: &TrainConfig) -> Result<(), Failure> {
    cfg.validate().or_invalid("training settings")
}

pub fn gen_data(a: GenDataArgs) -> Result<(), Failure> {
    if a.out.exists() && !a.out.is_dir() {
        return Err(invalid(format!("output {} is not a directory", a.out.display())));
    }
    let splits = generate_dataset(a.seed, a.train, a.test, a.size, a.classes).or_invalid("dataset request")?;
    write_dataset(&splits, &a.out)?;
    if let Some(p) = &a.model_out {
        fs::write(p, reference_cnn(a.size, a.classes, a.seed)).with_context(|| format!("writing {}", p.display()))?;
    }
    println!(
        "wrote {} train / {} test images of {}x{} px to {}",
        a.train,
        a.test,
        a.size,
        a.size,
        a.out.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs, cfg: &RunConfig, sparse: bool) -> Result<(), Failure> {
    let desc = existing(a.model, cfg.model.clone(), "model description")?;
    let data = existing(a.data, cfg.data.clone(), "dataset")?;
    let base = TrainConfig {
        l1_coeff: if sparse { DEFAULT_SPARSITY_L1 } else { 0.0 },
        seed: cfg.seed.unwrap_or(0),
        ..TrainConfig::default()
    };
    let tc = cfg.train.resolve(&a.train.section()?, base);
    check_training(&tc)?;
    let model = load_description(&desc)?;
    let mut aug_cfg = augment_config(cfg, Some(model.input.height), tc.seed)?;
    if let Some(names) = &a.augment {
        aug_cfg.enabled = parse_methods(Some(names))?;
    }
    let augmenter = match aug_cfg.enabled.is_empty() {
        true => None,
        false => Some(Augmenter::new(aug_cfg).or_invalid("[augment]")?),
    };
    let out = output_dir(a.out, cfg)?;

    let splits = read_dataset(&data)?;
    let outcome = train_with(&model, &splits.train, &tc, augmenter.as_ref())?;
    let model_path = out.join(format!("{}.slim", a.name));
    save_model(&outcome.model, &model_path)?;
    write_csv_file(&out.join(format!("{}.metrics.csv", a.name)), |buf| {
        Ok(write_metrics_csv(&outcome.epochs, buf)?)
    })?;
    let acc = classify_accuracy(&outcome.model, &splits.test)?;
    println!(
        "wrote {} (l1 {}, {} epochs, test accuracy {})",
        model_path.display(),
        tc.l1_coeff,
        tc.epochs,
        percent(acc)
    );
    Ok(())
}

pub fn prune(a: PruneArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let method: PruneMethod = a
        .method
        .or(cfg.prune.method.clone())
        .unwrap_or_else(|| "normal".into())
        .parse()
        .or_invalid("prune method")?;
    let ratio = required(a.ratio, cfg.prune.ratio, "prune ratio")?;
    if !(0.0..1.0).contains(&ratio) {
        return Err(invalid(format!("prune ratio must lie in [0, 1), got {ratio}")));
    }
    let model = load_input_model(&a.input)?;
    let out = match a.out.or(cfg.output.clone()) {
        Some(d) => output_dir(Some(d), cfg)?,
        None => a.input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = a.name.unwrap_or_else(|| format!("{stem}-{method}-{ratio}"));

    let plan = plan_prune(&collect_scales(&model)?, ratio, method, &model)?;
    let pruned = apply_prune(&model, &plan)?;
    let pruned_path = out.join(format!("{name}.slim"));
    save_model(&pruned, &pruned_path)?;
    let plan_path = out.join(format!("{name}.plan.toml"));
    fs::write(&plan_path, plan_to_text(&plan)).with_context(|| format!("writing {}", plan_path.display()))?;
    let report = compression_report(&model, &a.input, &pruned, &pruned_path)?;

    let file_name = format!("{name}.slim");
    write_csv_file(&out.join(format!("{name}.csv")), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(PRUNE_CSV_HEADER)?;
        w.write_record([
            file_name.clone(),
            method.to_string(),
            ratio.to_string(),
            report.after.bytes.to_string(),
            percent(report.ratio),
        ])?;
        w.flush()?;
        Ok(())
    })?;
    let widths: Vec<String> = report.layers.iter().map(|l| format!("{}->{}", l.before, l.after)).collect();
    println!(
        "wrote {}: removed {}/{} channels [{}], {} -> {} bytes ({}%)",
        pruned_path.display(),
        plan.removed(),
        plan.total(),
        widths.join(" "),
        report.before.bytes,
        report.after.bytes,
        percent(report.ratio)
    );
    Ok(())
}

pub fn finetune(a: FinetuneArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let data = existing(a.data, cfg.data.clone(), "dataset")?;
    let flags = a.train.section()?;
    if flags.l1_coeff.is_some_and(|l| l != 0.0) || cfg.finetune.l1_coeff.is_some_and(|l| l != 0.0) {
        return Err(invalid("fine-tuning always runs without the L1 penalty"));
    }
    let base = TrainConfig {
        epochs: 2,
        lr: 0.005,
        seed: cfg.seed.unwrap_or(0),
        ..TrainConfig::default()
    };
    let tc = cfg.finetune.resolve(&flags, base);
    check_training(&tc)?;
    let model = load_input_model(&a.input)?;
    let out = match a.out.or(cfg.output.clone()) {
        Some(d) => output_dir(Some(d), cfg)?,
        None => a.input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = a.name.unwrap_or_else(|| format!("{stem}-ft"));

    let splits = read_dataset(&data)?;
    let outcome = finetune_model(&model, &splits.train, &tc)?;
    let path = out.join(format!("{name}.slim"));
    save_model(&outcome.model, &path)?;
    write_csv_file(&out.join(format!("{name}.metrics.csv")), |buf| {
        Ok(write_metrics_csv(&outcome.epochs, buf)?)
    })?;
    let acc = classify_accuracy(&outcome.model, &splits.test)?;
    println!("wrote {} ({} epochs, test accuracy {})", path.display(), tc.epochs, percent(acc));
    Ok(())
}

/// Classification accuracy and box mAP at IoU 0.5, both in `[0, 1]`.
fn score(model: &ModelGraph, data: &Dataset) -> Result<(f64, f64), Failure> {
    let acc = classify_accuracy(model, data)?;
    let (preds, gts) = box_predictions(model, data)?;
    Ok((acc, mean_average_precision(&preds, &gts, MAP_IOU).map))
}

pub fn eval(a: EvalArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let data = existing(a.data, cfg.data.clone(), "dataset")?;
    if a.split != "train" && a.split != "test" {
        return Err(invalid(format!("split must be `train` or `test`, got `{}`", a.split)));
    }
    let model = load_input_model(&a.input)?;
    let ds = read_split(data.join(&a.split))?;
    let (acc, map) = score(&model, &ds)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EVAL_CSV_HEADER)?;
    w.write_record([
        a.input.display().to_string(),
        a.split.clone(),
        percent(acc),
        percent(map),
        count_params(&model).to_string(),
        count_flops(&model, model.input)?.to_string(),
        model_volume(&a.input)?.to_string(),
    ])?;
    emit(a.out.as_deref(), &w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
}

pub fn bench(a: BenchArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let baseline = existing(a.baseline, cfg.bench.baseline.clone(), "baseline model")?;
    let extra = if a.models.is_empty() {
        cfg.bench.models.clone()
    } else {
        a.models
    };
    let data = match a.data.or(cfg.data.clone()) {
        Some(d) => Some(existing(Some(d), None, "dataset")?),
        None => None,
    };
    let reps = a.reps.or(cfg.bench.reps).unwrap_or(100);
    let warmup = a.warmup.or(cfg.bench.warmup).unwrap_or(10);
    if reps == 0 {
        return Err(invalid("reps must be at least 1"));
    }
    let paths: Vec<PathBuf> = std::iter::once(baseline).chain(extra).collect();
    let models = paths
        .iter()
        .map(|p| load_input_model(p))
        .collect::<Result<Vec<_>, _>>()?;
    let test = match &data {
        Some(d) => Some(read_split(d.join("test"))?),
        None => None,
    };

    let base_bytes = model_volume(&paths[0])?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BENCH_CSV_HEADER)?;
    // One model at a time so the latencies do not compete for cores.
    for (path, model) in paths.iter().zip(&models) {
        let bytes = model_volume(path)?;
        let lat = measure_latency(model, model.input, reps, warmup)?;
        let (acc, map) = match &test {
            Some(t) => {
                let (acc, map) = score(model, t)?;
                (percent(acc), percent(map))
            }
            None => (String::new(), String::new()),
        };
        w.write_record([
            path.display().to_string(),
            bytes.to_string(),
            percent(compression_ratio(base_bytes as f64, bytes as f64)),
            count_params(model).to_string(),
            count_flops(model, model.input)?.to_string(),
            format!("{:.9}", lat.mean),
            format!("{:.9}", lat.std),
            lat.threads.to_string(),
            acc,
            map,
        ])?;
    }
    emit(a.out.as_deref(), &w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
}

pub fn ablate(a: AblateArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let desc = existing(a.model, cfg.model.clone(), "model description")?;
    let data = existing(a.data, cfg.data.clone(), "dataset")?;
    let methods = parse_methods(a.methods.as_deref())?;
    let base = TrainConfig {
        seed: cfg.seed.unwrap_or(0),
        ..TrainConfig::default()
    };
    let tc = cfg.train.resolve(&a.train.section()?, base);
    check_training(&tc)?;
    let model = load_description(&desc)?;
    let aug = augment_config(cfg, Some(model.input.height), tc.seed)?;
    aug.validate().or_invalid("[augment]")?;

    let splits = read_dataset(&data)?;
    let rows = run_ablation(&model, &splits, &tc, &aug, &methods)?;
    let mut buf = Vec::new();
    write_ablation_csv(&rows, &mut buf)?;
    emit(a.out.as_deref(), &buf)
}

pub fn augment_preview(a: PreviewArgs, cfg: &RunConfig) -> Result<(), Failure> {
    for p in &a.inputs {
        if !p.is_file() {
            return Err(invalid(format!("input image {} does not exist", p.display())));
        }
    }
    let methods = parse_methods(a.methods.as_deref())?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let aug: AugmentConfig = augment_config(cfg, None, seed)?;
    aug.validate().or_invalid("[augment]")?;
    let out = output_dir(a.out, cfg)?;
    let images = a
        .inputs
        .iter()
        .map(|p| read_ppm(p).or_invalid(&format!("input image {}", p.display())))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, (path, img)) in a.inputs.iter().zip(&images).enumerate() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        for &m in &methods {
            let mut rng = stream(aug.seed, &[i as u64, m as u64]);
            let result = apply_method(&aug, m, img, &mut rng)?;
            write_ppm(&result, out.join(format!("{stem}_{}.ppm", m.name())))?;
        }
    }
    println!(
        "wrote {} previews to {}",
        images.len() * methods.len(),
        out.display()
    );
    Ok(())
}
