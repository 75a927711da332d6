use std::path::{Path, PathBuf};

use cdc_core::checkpoint::{read_checkpoint, write_checkpoint};
use cdc_core::data::{generate_scm_dataset, read_dataset, write_dataset};
use cdc_core::experiment::{similarity_summary, sweep as run_sweep, SweepAxis, SweepData};
use cdc_core::report::{RunReport, SweepReport, TemplateRow, FORMAT};
use cdc_core::trainer::{evaluate, train as train_bank, EvalReport};
use cdc_core::{
    AugmentationChannel, ClassifierLoss, EmbeddingDataset, FusionRule, ScmConfig, Split,
    TemplateBank, TrainConfig,
};

use crate::config::{load_config, resolve_seed, LoadedConfig};
use crate::exit::CliError;
use crate::{
    ClassifierArg, EvalArgs, FusionArg, GenArgs, ScmFlags, SweepArgs, TrainArgs, TrainFlags,
};

type CliResult<T = ()> = Result<T, CliError>;

macro_rules! override_fields {
    ($target:expr, $flags:expr, [$($field:ident),* $(,)?]) => {
        $(if let Some(v) = $flags.$field { $target.$field = v; })*
    };
}

fn apply_scm(scm: &mut ScmConfig, f: &ScmFlags) {
    override_fields!(
        scm,
        f,
        [
            dim,
            base_classes,
            new_classes,
            relevant,
            irrelevant,
            noise_sigma,
            irrelevant_scale,
            confound,
            anchor_noise,
            shots,
            test_per_class
        ]
    );
}

fn parse_channels(list: &str) -> CliResult<Vec<AugmentationChannel>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<AugmentationChannel>()
                .map_err(|e| CliError::usage(format!("--channels: {e}")))
        })
        .collect()
}

fn apply_train(cfg: &mut TrainConfig, f: &TrainFlags) -> CliResult {
    override_fields!(
        cfg,
        f,
        [
            templates,
            epochs,
            batch_size,
            learning_rate,
            tau,
            beta,
            gamma,
            clamp,
            params,
            init_scale
        ]
    );
    if let Some(list) = &f.channels {
        cfg.channels = parse_channels(list)?;
    }
    if let Some(c) = f.classifier {
        cfg.classifier = match c {
            ClassifierArg::Tce => ClassifierLoss::TrustedCrossEntropy,
            ClassifierArg::Ce => ClassifierLoss::CrossEntropy,
        };
    }
    if let Some(r) = f.fusion {
        cfg.fusion = match r {
            FusionArg::Evidential => FusionRule::Evidential,
            FusionArg::MeanSoftmax => FusionRule::MeanSoftmax,
        };
    }
    Ok(())
}

fn resolved_train(
    loaded: &LoadedConfig,
    flags: &TrainFlags,
    seed: Option<u64>,
) -> CliResult<TrainConfig> {
    let mut cfg = loaded.file.train.clone();
    apply_train(&mut cfg, flags)?;
    cfg.seed = resolve_seed(seed, cfg.seed, loaded.train_seed_set)?;
    cfg.validate()?;
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| file.clone()).ok_or_else(|| {
        CliError::usage(format!(
            "--{name} is required (or set paths.{name} in the config file)"
        ))
    })
}

fn load_dataset(path: &Path) -> CliResult<EmbeddingDataset> {
    read_dataset(path).map_err(|e| match e {
        cdc_core::Error::Io { .. } => e.into(),
        other => CliError::io(format!("{}: {other}", path.display())),
    })
}

pub fn gen(args: GenArgs) -> CliResult {
    let loaded = load_config(args.config.as_deref())?;
    let mut scm = loaded.file.scm;
    apply_scm(&mut scm, &args.scm);
    scm.seed = resolve_seed(args.seed, scm.seed, loaded.scm_seed_set)?;
    let out = required(args.out, &loaded.file.paths.out, "out")?;
    let ds = generate_scm_dataset(&scm)?;
    write_dataset(&ds, &out)?;
    println!(
        "wrote {}: d={} C={} ({} base, {} new); {} base-train, {} base-test, {} new-test; seed {}",
        out.display(),
        ds.dim,
        ds.classes(),
        ds.base_classes().len(),
        ds.new_classes().len(),
        ds.split(Split::BaseTrain).count(),
        ds.split(Split::BaseTest).count(),
        ds.split(Split::NewTest).count(),
        scm.seed
    );
    Ok(())
}

fn has_test_partitions(ds: &EmbeddingDataset) -> bool {
    ds.split(Split::BaseTest).next().is_some() && ds.split(Split::NewTest).next().is_some()
}

fn print_eval(eval: &EvalReport, config: &TrainConfig, per_template_only: bool) {
    if !per_template_only {
        println!("base {:.2}", eval.base_accuracy);
        println!("new  {:.2}", eval.new_accuracy);
        println!("hm   {:.2}", eval.harmonic_mean);
        println!(
            "mean uncertainty {:.4}, vacuous {}, conflicts {}",
            eval.mean_uncertainty, eval.vacuous_count, eval.conflict_count
        );
    }
    println!(
        "{:>8}  {:<16} {:>7} {:>7} {:>7}",
        "template", "channel", "base", "new", "hm"
    );
    for (m, s) in eval.per_template.iter().enumerate() {
        println!(
            "{m:>8}  {:<16} {:>7.2} {:>7.2} {:>7.2}",
            config.channel(m).to_string(),
            s.base,
            s.new,
            s.harmonic_mean
        );
    }
}

fn attach_similarity(report: &mut RunReport, bank: &TemplateBank, tau: f64) -> CliResult {
    let classes: Vec<usize> = (0..bank.classes()).collect();
    report.similarity = Some(similarity_summary(bank, &classes, tau)?);
    Ok(())
}

pub fn train(args: TrainArgs) -> CliResult {
    let loaded = load_config(args.config.as_deref())?;
    let config = resolved_train(&loaded, &args.train, args.seed)?;
    let paths = &loaded.file.paths;
    let data = required(args.data, &paths.data, "data")?;
    let checkpoint = required(args.checkpoint, &paths.checkpoint, "checkpoint")?;
    let report_path = args
        .report
        .or_else(|| paths.report.clone())
        .unwrap_or_else(|| checkpoint.with_extension("report.toml"));

    let ds = load_dataset(&data)?;
    let mut report = RunReport::new("train", config.clone());
    report.dataset = Some(data.display().to_string());
    report.checkpoint = Some(checkpoint.display().to_string());
    print_resolved(&config)?;
    let upfront = config.warnings();
    for w in &upfront {
        eprintln!("warning: {w}");
    }
    if config.epochs == 0 {
        report
            .notes
            .push("zero epochs: checkpoint equals the initialization".into());
    }

    let (bank, history) = train_bank(&ds, &config)?;
    write_checkpoint(&bank, &checkpoint)?;
    for w in history.warnings.iter().skip(upfront.len()) {
        eprintln!("warning: {w}");
    }
    if let Some(last) = history.epochs.last() {
        let l = &last.loss;
        println!(
            "epoch {}: total {:.6} (t-ce {:.6}, decoupling {:.6}, consistency {:.6})",
            last.epoch, l.total, l.trusted_ce, l.decoupling, l.consistency
        );
    } else {
        println!("zero epochs: checkpoint equals the initialization");
    }
    report.history = history;
    if has_test_partitions(&ds) {
        let eval = evaluate(&ds, &bank, &config)?;
        print_eval(&eval, &config, false);
        report.set_eval(eval);
    } else {
        report
            .notes
            .push("dataset lacks base-test or new-test samples; evaluation skipped".into());
    }
    attach_similarity(&mut report, &bank, config.tau)?;
    report.write(&report_path)?;
    println!("checkpoint {}", checkpoint.display());
    println!("report {}", report_path.display());
    Ok(())
}

/// Echoes the resolved flag/file/default union as a pasteable `[train]` table.
fn print_resolved(config: &TrainConfig) -> CliResult {
    let text =
        toml::to_string(config).map_err(|e| CliError::usage(format!("cannot echo config: {e}")))?;
    println!("[train]\n{}", text.trim_end());
    Ok(())
}

pub fn eval(args: EvalArgs) -> CliResult {
    let loaded = load_config(args.config.as_deref())?;
    let paths = &loaded.file.paths;
    let data = required(args.data, &paths.data, "data")?;
    let checkpoint = required(args.checkpoint, &paths.checkpoint, "checkpoint")?;
    let bank = read_checkpoint(&checkpoint)?;
    let ds = load_dataset(&data)?;
    if bank.dim() != ds.dim {
        return Err(CliError::compatibility(format!(
            "dimension mismatch: checkpoint has d={}, dataset has d={}",
            bank.dim(),
            ds.dim
        )));
    }
    if bank.classes() != ds.classes() {
        return Err(CliError::compatibility(format!(
            "class count mismatch: checkpoint has C={}, dataset has C={}",
            bank.classes(),
            ds.classes()
        )));
    }
    let mut config = resolved_train(&loaded, &args.train, None)?;
    config.templates = bank.templates();
    config.params = bank.params();

    let eval = evaluate(&ds, &bank, &config)?;
    print_eval(&eval, &config, args.per_template_only);
    if let Some(path) = args.report.or_else(|| paths.report.clone()) {
        let mut report = RunReport::new("eval", config.clone());
        report.dataset = Some(data.display().to_string());
        report.checkpoint = Some(checkpoint.display().to_string());
        if args.per_template_only {
            report.notes.push("per-template metrics only".into());
            report.per_template = per_template_rows(&eval, &config);
        } else {
            report.set_eval(eval);
        }
        attach_similarity(&mut report, &bank, config.tau)?;
        report.write(&path)?;
        println!("report {}", path.display());
    }
    Ok(())
}

fn per_template_rows(eval: &EvalReport, config: &TrainConfig) -> Vec<TemplateRow> {
    eval.per_template
        .iter()
        .enumerate()
        .map(|(m, s)| TemplateRow {
            template: m,
            channel: config.channel(m).to_string(),
            base: s.base,
            new: s.new,
            harmonic_mean: s.harmonic_mean,
        })
        .collect()
}

fn parse_list(flag: &str, raw: &str) -> CliResult<Vec<String>> {
    let values: Vec<String> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect();
    if values.is_empty() {
        return Err(CliError::usage(format!(
            "--{flag} needs at least one value"
        )));
    }
    Ok(values)
}

pub fn sweep(args: SweepArgs) -> CliResult {
    let axis: SweepAxis = args.axis.parse().map_err(|_| {
        CliError::usage(format!(
            "--axis: unknown axis {:?} (expected m, beta, gamma, channels or ablation)",
            args.axis
        ))
    })?;
    let values = parse_list("values", &args.values)?;
    let seeds = parse_list("seeds", &args.seeds)?
        .iter()
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| CliError::usage(format!("--seeds: {s:?} is not a seed")))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let loaded = load_config(args.config.as_deref())?;
    let mut scm = loaded.file.scm;
    apply_scm(&mut scm, &args.scm);
    let mut base = loaded.file.train.clone();
    apply_train(&mut base, &args.train)?;
    base.validate()?;

    let fixed = match args.data.or_else(|| loaded.file.paths.data.clone()) {
        Some(p) => Some(load_dataset(&p)?),
        None => None,
    };
    let data = match &fixed {
        Some(ds) => SweepData::Fixed(ds),
        None => SweepData::Generated(&scm),
    };
    let rows = run_sweep(data, &base, axis, &values, &seeds)?;

    println!(
        "{:<24} {:>7} {:>7} {:>7} {:>11} {:>9}",
        axis.to_string(),
        "base",
        "new",
        "hm",
        "uncertainty",
        "seconds"
    );
    for r in &rows {
        println!(
            "{:<24} {:>7.2} {:>7.2} {:>7.2} {:>11.4} {:>9.2}",
            r.value, r.base, r.new, r.harmonic_mean, r.mean_uncertainty, r.wall_seconds
        );
    }
    if let Some(path) = args.report.or_else(|| loaded.file.paths.report.clone()) {
        let report = SweepReport {
            format: FORMAT.into(),
            axis: axis.to_string(),
            train: base,
            scm,
            rows,
        };
        let text = report.to_toml()?;
        std::fs::write(&path, text)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        println!("report {}", path.display());
    }
    Ok(())
}
