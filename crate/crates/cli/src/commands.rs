//! Subcommand bodies. Each takes its arguments explicitly and writes
//! human-readable progress to `out`; files are written only under the given
//! paths.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mmct_core::evaluator::evaluate;
use mmct_core::gradcheck::{self, GradcheckConfig, GradcheckReport, LossKind, GRADCHECK_TOLERANCE};
use mmct_core::synthdata::generate;
use mmct_core::trainer::{train_loop, EpochMetrics, TrainState};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::formats::{
    metrics_csv, read_checkpoint, read_dataset, write_atomic, write_json, CheckpointFile, ConfigEcho, DatasetFile,
    ReportFile, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE,
};

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::io("<stdout>", e))
}

pub fn gen_data(config: Option<&Path>, dest: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = RunConfig::load_or_default(config)?;
    let data = generate(&cfg.data)?;
    let file = DatasetFile::new(cfg.data.clone(), data);
    write_json(dest, &file, false)?;

    let all = || file.train.iter().chain(&file.test);
    let mut per_class = vec![0usize; cfg.data.num_classes];
    all().for_each(|s| per_class[s.class_id] += 1);
    let tagged: Vec<usize> = all().filter_map(|s| s.tags.as_ref()).map(|t| t.iter().filter(|&&b| b != 0).count()).collect();
    let captioned = all().filter(|s| s.caption_raw.is_some()).count();
    let mean_tags = tagged.iter().sum::<usize>() as f64 / tagged.len().max(1) as f64;
    say(out, format_args!("wrote {} ({} train, {} test)", dest.display(), file.train.len(), file.test.len()))?;
    say(out, format_args!("samples per class: {per_class:?}"))?;
    say(out, format_args!("with captions: {captioned}, with tags: {}, mean active tags: {mean_tags:.3}", tagged.len()))
}

pub struct TrainArgs<'a> {
    pub config: Option<&'a Path>,
    pub data: &'a Path,
    pub out_dir: Option<&'a Path>,
    pub resume: Option<&'a Path>,
}

pub fn train(args: &TrainArgs<'_>, out: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    let cfg = RunConfig::load_or_default(args.config)?;
    let out_dir: PathBuf = match (args.out_dir, &cfg.output_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => d.clone(),
        (None, None) => return Err(CliError::Config("no output directory: pass --out or set output_dir".into())),
    };
    let dataset = read_dataset(args.data)?;
    cfg.check_data_dims(&dataset.config)?;

    let (mut state, mut history) = match args.resume {
        Some(path) => {
            let ckpt = read_checkpoint(path)?;
            if ckpt.config.model != cfg.model || ckpt.config.train != cfg.train || ckpt.config.seed != cfg.seed {
                return Err(CliError::Config(format!(
                    "{} was trained with a different model, train or seed setting",
                    path.display()
                )));
            }
            let mut state = ckpt.to_state(path)?;
            state.refill_queues(&dataset.train, &cfg.train.aug)?;
            say(out, format_args!("resuming from epoch {} (step {})", ckpt.epoch, ckpt.step))?;
            (state, ckpt.history)
        }
        None => (TrainState::new(&cfg.model, cfg.seed)?, Vec::new()),
    };

    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    write_json(&out_dir.join(CONFIG_FILE), &ConfigEcho::new(cfg.clone()), true)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let save = |state: &TrainState, history: &[EpochMetrics]| -> Result<(), CliError> {
        write_atomic(&metrics_path, &metrics_csv(history)?)?;
        write_json(&ckpt_path, &CheckpointFile::from_state(&cfg, state, history), false)
    };
    // Outputs exist even when no epoch remains to run.
    save(&state, &history)?;
    train_loop(&mut state, &dataset.train, &cfg.train, |state, m| {
        history.push(*m);
        save(state, &history)?;
        say(out, format_args!("epoch {:>3}  lr {:.5}  total {:.5}", m.epoch, m.lr_image, m.terms.total))
    })?;
    say(out, format_args!("wrote {} and {}", metrics_path.display(), ckpt_path.display()))?;
    Ok(TrainOutcome { out_dir, epochs_run: history.len(), step: state.step })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub epochs_run: usize,
    pub step: u64,
}

pub fn eval(checkpoint: &Path, data: &Path, dest: &Path, out: &mut dyn Write) -> Result<ReportFile, CliError> {
    let ckpt = read_checkpoint(checkpoint)?;
    let dataset = read_dataset(data)?;
    ckpt.config.check_data_dims(&dataset.config)?;
    let state = ckpt.to_state(checkpoint)?;
    let report = evaluate(&state.image.query, &state.caption.query, &dataset.split(), &ckpt.config.eval)?;
    let file = ReportFile::new(ckpt.config.clone(), ckpt.epoch, ckpt.step, report);
    write_json(dest, &file, true)?;
    let r = &file.report;
    for dir in [&r.image_to_text, &r.text_to_image] {
        let recalls: Vec<String> = dir.r_at.iter().map(|(k, v)| format!("R@{k} {v:.1}")).collect();
        say(out, format_args!("{:?}: {}  Med r {}", dir.direction, recalls.join("  "), dir.med_r))?;
    }
    say(out, format_args!("linear probe top-1: {:.2}%", r.probe.top1))?;
    let mious: Vec<String> = r.tagging.miou_at.iter().map(|(k, v)| format!("mIOU@{k} {v:.4}")).collect();
    say(out, format_args!("tagging: {}", mious.join("  ")))?;
    say(out, format_args!("wrote {}", dest.display()))?;
    Ok(file)
}

pub fn parse_loss_kind(name: &str) -> Result<LossKind, CliError> {
    LossKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| CliError::Config(format!("unknown loss {name:?}")))
}

pub fn gradcheck(cfg: &GradcheckConfig, out: &mut dyn Write) -> Result<GradcheckReport, CliError> {
    let report = gradcheck::run(cfg)?;
    for c in &report.per_loss {
        say(out, format_args!("{:<6} max relative error {:.3e}  (instance seed {})", c.loss.name(), c.max_rel_error, c.worst_seed))?;
    }
    if report.passed() {
        say(out, format_args!("all {} trials below {GRADCHECK_TOLERANCE:e}", cfg.trials))?;
        Ok(report)
    } else {
        for f in &report.failures {
            say(out, format_args!("FAIL {} instance seed {} relative error {:.3e}", f.loss.name(), f.instance_seed, f.rel_error))?;
        }
        Err(CliError::Check(format!("{} gradient checks above {GRADCHECK_TOLERANCE:e}", report.failures.len())))
    }
}
