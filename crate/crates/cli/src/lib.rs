//! Command-line front end: dataset generation, pseudo-labelling, training,
//! evaluation, rotated-pair inference, ablation grids and a self test.

pub mod checks;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use bapn_core::io::{read_wav, write_pgm, write_wav, IoError};
use bapn_core::metrics::{depth_table, s3r_table, semantic_table};
use bapn_core::pseudo::{mode_background, sound_mask, to_training_target, ClassTable, LabelStack, PseudoError};
use bapn_core::scene::{write_dataset, Split};
use bapn_model::ablate::{ablate, ablation_csv, ablation_table, standard_grid, CellResult};
use bapn_model::config::{parse_kv, parse_override, KeyValue, Settings};
use bapn_model::train::{evaluate, infer_s3r, train, EvalReport, RunRecord, TrainOptions};
use bapn_model::{Dataset, Model, ModelError};
use clap::{Parser, Subcommand};
use serde_json::json;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "BAPN_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
    #[error("{0}")]
    Usage(String),
    #[error("{failed} of {total} self-test checks failed")]
    SelftestFailed { failed: usize, total: usize },
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Model(e.into())
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Model(e) => e.kind(),
            CliError::Pseudo(PseudoError::Io(IoError::BadAudioFormat(_))) => "BadAudioFormat",
            CliError::Pseudo(PseudoError::Io(_)) => "IoFailure",
            CliError::Pseudo(PseudoError::EmptyStack) => "EmptyStack",
            CliError::Pseudo(PseudoError::ShapeMismatch(_)) => "ShapeMismatch",
            CliError::Pseudo(PseudoError::UnknownClass(_)) => "UnknownClass",
            CliError::Usage(_) => "Usage",
            CliError::SelftestFailed { .. } => "SelftestFailed",
        }
    }

    /// 2 for bad input, 1 for internal faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(e) if !e.is_user_error() => 1,
            CliError::SelftestFailed { .. } => 1,
            _ => 2,
        }
    }

    /// One-line JSON written to stderr on failure.
    pub fn to_json(&self, command: &str) -> String {
        json!({ "error": self.kind(), "command": command, "message": self.to_string() }).to_string()
    }
}

fn after_help() -> String {
    format!(
        "Configuration keys (set in --config as `key = value` or with --set key=value):\n{}\nEnvironment:\n  {THREADS_ENV}  maximum worker threads for ablate (default: available cores)\n\nExit codes: 0 ok, 1 internal error, 2 user error (JSON on stderr).",
        Settings::help_table()
    )
}

#[derive(Debug, Parser)]
#[command(name = "bapn", version, about = "Binaural audio perception: data, training and evaluation", after_help = after_help())]
pub struct Cli {
    /// Flat `key = value` settings file; `#` starts a comment.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Directory receiving every output of the command.
    #[arg(long, global = true, default_value = "bapn-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a dataset: WAVs, label PGMs, depth rasters and manifests.
    Gen,
    /// Pseudo-labels from a stack of teacher label maps (PGM files).
    Labels {
        /// Directory of equally sized PGM label maps, read in name order.
        #[arg(long)]
        stack: PathBuf,
        /// JSON table mapping teacher ids to class names.
        #[arg(long)]
        classes: Option<PathBuf>,
    },
    /// Train on a generated dataset and evaluate the best epoch on test.
    Train {
        /// Dataset directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on one split with the reference baselines.
    Eval {
        /// Dataset directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to evaluate: train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Predict the 90, 180 and 270 degree pairs from a front-pair WAV.
    #[command(name = "infer-s3r")]
    InferS3r {
        /// Checkpoint of a model trained with the s3r task on the front pair.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Stereo 32-bit float WAV recorded by the front pair.
        #[arg(long)]
        input: PathBuf,
    },
    /// Train every ablation cell over several seeds and tabulate medians.
    Ablate {
        /// Dataset directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Seeds per cell, counting up from the configured seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Restrict the grid to these cell names; repeatable.
        #[arg(long = "cell")]
        cells: Vec<String>,
    },
    /// Run the fixture suite and print a pass matrix.
    Selftest {
        /// Check this checkpoint instead of a freshly saved one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Labels { .. } => "labels",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::InferS3r { .. } => "infer-s3r",
            Command::Ablate { .. } => "ablate",
            Command::Selftest { .. } => "selftest",
        }
    }
}

/// Defaults, then the config file, then each override; validated as a whole.
pub fn load_settings(config: Option<&Path>, overrides: &[String]) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    if let Some(path) = config {
        let text = fs::read_to_string(path).map_err(|e| IoError::at(path, e))?;
        s.apply(&parse_kv(&text)?)?;
    }
    let pairs = overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>, _>>()?;
    s.apply(&pairs)?;
    s.validate()?;
    Ok(s)
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| IoError::at(path, e).into())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| IoError::at(path, e).into())
}

fn split_named(name: &str) -> Result<Split, CliError> {
    Split::from_name(name).ok_or_else(|| CliError::Usage(format!("unknown split {name:?}; expected train, val or test")))
}

fn threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs a parsed command line, printing human-readable progress to stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let settings = load_settings(cli.config.as_deref(), &cli.overrides)?;
    create_dir(&cli.out)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Gen => gen(&settings, out),
        Command::Labels { stack, classes } => labels(stack, classes.as_deref(), out),
        Command::Train { data } => train_cmd(&settings, data, out),
        Command::Eval { data, checkpoint, split } => eval_cmd(data, checkpoint, split, out),
        Command::InferS3r { checkpoint, input } => infer_cmd(checkpoint, input, out),
        Command::Ablate { data, seeds, cells } => ablate_cmd(&settings, data, *seeds, cells, out),
        Command::Selftest { checkpoint } => selftest(checkpoint.as_deref(), out),
    }
}

fn gen(settings: &Settings, out: &Path) -> Result<(), CliError> {
    let summary = write_dataset(out, &settings.generator()).map_err(ModelError::from)?;
    write_text(&out.join("settings.txt"), &settings.to_text())?;
    println!("dataset {} (config {})", summary.root, summary.config_hash.0);
    for (split, n) in &summary.counts {
        println!("  {:5}  {n} scenes", split.name());
    }
    Ok(())
}

fn labels(stack_dir: &Path, classes: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(stack_dir)
        .map_err(|e| IoError::at(stack_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    let stack = LabelStack::read_pgms(&paths)?;
    let table = match classes {
        Some(p) => ClassTable::load(p)?,
        None => ClassTable::simulator(),
    };
    let background = mode_background(&stack);
    write_pgm(&out.join("background.pgm"), &background)?;
    let (masks, targets) = (out.join("masks"), out.join("targets"));
    create_dir(&masks)?;
    create_dir(&targets)?;
    let ids = table.targets();
    let mut sounding = 0;
    for (path, frame) in paths.iter().zip(stack.frames()) {
        let name = path.file_name().expect("listed file has a name");
        let mask = sound_mask(frame, &background, &ids)?;
        sounding += mask.count();
        mask.write_pgm(&masks.join(name))?;
        write_pgm(&targets.join(name), &to_training_target(&mask, frame, &table)?)?;
    }
    println!("{} frames, background written, {sounding} sounding cells in total", stack.len());
    Ok(())
}

fn loss_chart(record: &RunRecord) -> String {
    let train: Vec<f64> = record.epochs.iter().map(|e| e.train.total).collect();
    let val: Vec<f64> = record.epochs.iter().map(|e| e.val.as_ref().map_or(f64::NAN, |v| v.total)).collect();
    plot::line_chart(
        &format!("loss, tasks {}", record.tasks),
        "total loss",
        &[("train", train), ("val", val)],
    )
}

fn print_report(label: &str, r: &EvalReport) {
    if let Some(s) = &r.semantic {
        println!("{}", semantic_table(&[(label.to_string(), s)]));
    }
    let mut depth = Vec::new();
    if let Some(d) = &r.depth {
        depth.push((label.to_string(), d));
    }
    if let Some(d) = &r.baselines.mean_depth {
        depth.push(("mean depth".to_string(), d));
    }
    if !depth.is_empty() {
        println!("{}", depth_table(&depth));
    }
    let mut s3r = Vec::new();
    if let Some(s) = &r.s3r {
        s3r.push((label.to_string(), s));
    }
    if let Some(s) = &r.baselines.copy_reference {
        s3r.push(("copy reference".to_string(), s));
    }
    if !s3r.is_empty() {
        println!("{}", s3r_table(&s3r));
    }
}

fn train_cmd(settings: &Settings, data: &Path, out: &Path) -> Result<(), CliError> {
    let train_set = Dataset::load(data, Split::Train)?;
    let val = Dataset::load(data, Split::Val).ok().filter(|d| !d.is_empty());
    let test = Dataset::load(data, Split::Test).ok().filter(|d| !d.is_empty());
    write_text(&out.join("settings.txt"), &settings.to_text())?;
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        progress: true,
    };
    let outcome = match train(
        &settings.model,
        &settings.experiment,
        &train_set,
        val.as_ref(),
        test.as_ref(),
        &opts,
    ) {
        Ok(o) => o,
        Err(ModelError::DivergedLoss { epoch, step, record }) => {
            write_text(&out.join("loss.svg"), &loss_chart(&record))?;
            return Err(ModelError::DivergedLoss { epoch, step, record }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_text(&out.join("loss.svg"), &loss_chart(&outcome.record))?;
    if let Some(t) = &outcome.record.test {
        print_report(&format!("Ours({})", outcome.record.tasks), t);
    }
    println!("record {}", out.join("record.json").display());
    Ok(())
}

fn eval_cmd(data: &Path, checkpoint: &Path, split: &str, out: &Path) -> Result<(), CliError> {
    let split = split_named(split)?;
    let model = Model::load(checkpoint)?;
    let set = Dataset::load(data, split)?;
    let mean_depth = Dataset::load(data, Split::Train).ok().and_then(|d| d.mean_depth());
    let report = evaluate(&model, &set, mean_depth)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&out.join(format!("eval_{}.json", split.name())), &json)?;
    print_report(&format!("Ours({})", model.cfg.tasks.label()), &report);
    Ok(())
}

fn infer_cmd(checkpoint: &Path, input: &Path, out: &Path) -> Result<(), CliError> {
    let model = Model::load(checkpoint)?;
    let wav = read_wav(input)?;
    if wav.channels.len() != 2 {
        return Err(IoError::BadAudioFormat(format!(
            "{}: expected stereo, found {} channels",
            input.display(),
            wav.channels.len()
        ))
        .into());
    }
    let result = infer_s3r(&model, &wav.channels[0], &wav.channels[1], wav.sample_rate)?;
    if let Some(n) = result.resized_from {
        eprintln!("warning: input has {n} samples per channel; center-fitted to the model length");
    }
    for (o, [l, r]) in &result.pairs {
        let path = out.join(format!("pred_{}.wav", o.degrees()));
        write_wav(&path, wav.sample_rate, &[&l.to_f32(), &r.to_f32()])?;
        println!("{}", path.display());
    }
    Ok(())
}

fn ablate_cmd(settings: &Settings, data: &Path, seeds: u64, only: &[String], out: &Path) -> Result<(), CliError> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let mut cells = standard_grid(settings);
    if !only.is_empty() {
        if let Some(bad) = only.iter().find(|n| !cells.iter().any(|c| &c.name == *n)) {
            let known: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
            return Err(CliError::Usage(format!("unknown cell {bad:?}; known cells: {}", known.join(", "))));
        }
        cells.retain(|c| only.contains(&c.name));
    }
    let train_set = Dataset::load(data, Split::Train)?;
    let val = Dataset::load(data, Split::Val)?;
    let test = Dataset::load(data, Split::Test)?;
    let seed_list: Vec<u64> = (0..seeds).map(|k| settings.experiment.seed + k).collect();
    let results = ablate(&cells, &seed_list, &train_set, &val, &test, threads());
    write_text(&out.join("settings.txt"), &settings.to_text())?;
    write_text(&out.join("ablation.txt"), &ablation_table(&results))?;
    write_text(&out.join("ablation.csv"), &ablation_csv(&results))?;
    write_text(&out.join("ablation_miou.svg"), &miou_chart(&results))?;
    let records: Vec<serde_json::Value> = results
        .iter()
        .map(|r| json!({ "cell": r.name, "config_hash": r.config_hash, "records": r.records, "errors": r.errors }))
        .collect();
    write_text(
        &out.join("ablation_records.json"),
        &serde_json::to_string_pretty(&records).expect("records serialize"),
    )?;
    print!("{}", ablation_table(&results));
    Ok(())
}

fn miou_chart(results: &[CellResult]) -> String {
    let bars: Vec<(String, Option<f64>)> = results
        .iter()
        .map(|r| (r.name.clone(), r.median_miou().map(|m| m * 100.0)))
        .collect();
    plot::bar_chart("median test mIoU per cell", "mIoU (%)", &bars)
}

fn selftest(checkpoint: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let outcomes = checks::all(checkpoint, out);
    let w = outcomes.iter().map(|o| o.group.len() + o.name.len() + 3).max().unwrap_or(0);
    for o in &outcomes {
        let label = format!("{} / {}", o.group, o.name);
        println!("{}  {label:w$}  {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    let json = serde_json::to_string_pretty(&outcomes).expect("outcomes serialize");
    write_text(&out.join("selftest.json"), &json)?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        return Err(CliError::SelftestFailed {
            failed,
            total: outcomes.len(),
        });
    }
    Ok(())
}
