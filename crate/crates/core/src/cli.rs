//! Command-line front end. Each subcommand is a thin wrapper over a
//! library operation; `dispatch` maps errors onto stable exit codes.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_pairs, render_pairs};
use crate::data::{extract_eval_quintuplets, frame_file_name, index_dataset, load_all, SequenceIndex, WindowMode};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_dataset, profile, visualize_mean_flows, EvalOptions};
use crate::frame::Frame;
use crate::losses::DiscriminatorConfig;
use crate::model::{make_variant_with, recursive_interpolate, InterpolationRequest, ModelConfig, Preset, Stmfnet};
use crate::trainkit::{finetune_gan_stage, train_distortion_stage, TrainConfig, TrainLog, Trainer};

#[derive(Parser, Debug)]
#[command(name = "stmfnet", version, about = "Multi-flow video frame interpolation")]
pub struct Cli {
    /// key=value configuration file (model.*, train.*, gan.* keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for initialisation, shuffling and augmentation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Compute device; only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,
    #[arg(long, global = true, default_value = "tiny")]
    pub preset: String,
    /// Configuration override, repeatable (`--set train.lr=5e-4`).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Distortion-stage training on septuplets.
    Train(TrainArgs),
    /// Adversarial fine-tuning of a trained checkpoint.
    FinetuneGan(GanArgs),
    /// Recursive 2x/4x/8x interpolation of a frame directory.
    Interpolate(InterpolateArgs),
    /// PSNR/SSIM report on quintuplets.
    Evaluate(EvaluateArgs),
    /// Mean multi-flow maps rendered as colour images.
    VisualizeFlows(VisualizeArgs),
    /// Median runtime and parameter count.
    Profile(ProfileArgs),
    /// Writes an ablation configuration (and optionally fresh weights).
    MakeVariant(VariantArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root (sequence directories or an index.txt).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "full")]
    pub variant: String,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSON-lines log (default: OUT/train_log.jsonl).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GanArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InterpolateArgs {
    /// Directory of PNG frames, taken in name order.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub factor: usize,
    #[arg(long)]
    pub ckpt: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Quintuplet index file.
    #[arg(long, conflicts_with = "data")]
    pub index: Option<PathBuf>,
    /// Directory of sequences to split into quintuplets.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
    /// Include per-frame runtimes in the CSV.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    /// Directory holding at least four PNG frames; the first four are used.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// Checkpoint to profile (default: fresh weights from the preset).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    pub variant: String,
    #[arg(long, default_value = "854x480")]
    pub res: String,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Memory budget in MiB (default: available memory).
    #[arg(long)]
    pub mem_limit_mb: Option<u64>,
}

#[derive(Args, Debug)]
pub struct VariantArgs {
    #[arg(long, default_value = "full")]
    pub name: String,
    /// Where to write the configuration (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a freshly initialised checkpoint.
    #[arg(long)]
    pub init_ckpt: Option<PathBuf>,
}

/// Model and training settings after merging preset, file and overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl CliConfig {
    /// Later pairs win; keys outside `model.*`, `train.*` and `gan.*` are
    /// rejected.
    pub fn build(base: ModelConfig, train: TrainConfig, pairs: &[(String, String)], seed: u64) -> Result<Self> {
        let mut model = base;
        let mut train = TrainConfig { seed, ..train };
        for (k, v) in pairs {
            if k.starts_with("model.") {
                model.set(k, v)?;
            } else if k.starts_with("train.") || k.starts_with("gan.") {
                train.set(k, v)?;
            } else {
                return Err(Error::Config(format!("unknown configuration key {k:?}")));
            }
        }
        model.validate()?;
        train.validate()?;
        Ok(Self { model, train })
    }
}

fn read_pairs(cli: &Cli) -> Result<Vec<(String, String)>> {
    let mut pairs = match &cli.config {
        Some(p) => parse_pairs(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => Vec::new(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn train_preset(p: Preset) -> TrainConfig {
    match p {
        Preset::Tiny => TrainConfig::tiny(),
        Preset::Default => TrainConfig::default(),
    }
}

fn config_for(cli: &Cli, variant: &str) -> Result<CliConfig> {
    let preset = Preset::parse(&cli.preset)?;
    CliConfig::build(make_variant_with(variant, preset)?, train_preset(preset), &read_pairs(cli)?, cli.seed)
}

/// Training settings only; model keys are accepted but must agree with
/// the checkpoint that supplies the model.
fn train_config(cli: &Cli, ck: &Checkpoint) -> Result<TrainConfig> {
    let preset = Preset::parse(&cli.preset)?;
    Ok(CliConfig::build(ck.model_config()?, train_preset(preset), &read_pairs(cli)?, cli.seed)?.train)
}

fn png_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    png_frames(dir)?.iter().map(|p| Frame::load_png(p)).collect()
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = config_for(cli, &a.variant)?;
    create_dir(&a.out)?;
    let train = load_all(&index_dataset(&a.data, WindowMode::Septuplet, 1)?)?;
    let val = match &a.val {
        Some(v) => load_all(&index_dataset(v, WindowMode::Septuplet, 1)?)?,
        None => Vec::new(),
    };
    let model = Stmfnet::<f32>::new(&cfg.model, cli.seed)?;
    let log = a.log.clone().unwrap_or_else(|| a.out.join("train_log.jsonl"));
    let outcome = match &a.resume {
        None => train_distortion_stage(&model, &train, &val, &cfg.train, Some(&a.out), Some(&log))?.0,
        Some(r) => {
            let mut t = Trainer::new(&model, cfg.train.clone())?;
            t.resume(&Checkpoint::load(r)?)?;
            t.log = TrainLog::to_file(&log)?;
            t.run(&train, &val, Some(&a.out))?
        }
    };
    println!(
        "trained {} steps over {} epochs; last checkpoint {}",
        outcome.state.step,
        outcome.state.epoch,
        a.out.join("last.ckpt").display()
    );
    Ok(())
}

fn finetune(cli: &Cli, a: &GanArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let cfg = train_config(cli, &ck)?;
    let model = ck.build_model::<f32>()?;
    create_dir(&a.out)?;
    let train = load_all(&index_dataset(&a.data, WindowMode::Septuplet, 1)?)?;
    let val = match &a.val {
        Some(v) => load_all(&index_dataset(v, WindowMode::Septuplet, 1)?)?,
        None => Vec::new(),
    };
    let disc = match Preset::parse(&cli.preset)? {
        Preset::Tiny => DiscriminatorConfig::tiny(),
        Preset::Default => DiscriminatorConfig::default_widths(),
    };
    let log = a.log.clone().unwrap_or_else(|| a.out.join("gan_log.jsonl"));
    let (outcome, _) = finetune_gan_stage(&model, &ck, &disc, &train, &val, &cfg, Some(&a.out), Some(&log))?;
    println!(
        "fine-tuned {} steps; checkpoint {}",
        outcome.state.step,
        a.out.join("last_gan.ckpt").display()
    );
    Ok(())
}

fn interpolate(a: &InterpolateArgs) -> Result<()> {
    let model = Checkpoint::load(&a.ckpt)?.build_model::<f32>()?;
    let frames = load_frames(&a.input)?;
    let out = recursive_interpolate(&model, &frames, a.factor)?;
    create_dir(&a.out)?;
    for (i, f) in out.iter().enumerate() {
        f.save_png(&a.out.join(frame_file_name(i)))?;
    }
    println!("wrote {} frames to {}", out.len(), a.out.display());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let index = match (&a.index, &a.data) {
        (Some(i), _) => SequenceIndex::from_file(i, WindowMode::Quintuplet)?,
        (None, Some(d)) => extract_eval_quintuplets(d)?,
        (None, None) => return Err(Error::Validation("evaluate needs --index or --data".into())),
    };
    let model = Checkpoint::load(&a.ckpt)?.build_model::<f32>()?;
    let opts = EvalOptions { timing: a.timing };
    let s = evaluate_dataset(&model, &index, &a.dataset, &a.out, &opts)?;
    println!("{}", s.to_json());
    Ok(())
}

fn visualize(a: &VisualizeArgs) -> Result<()> {
    let model = Checkpoint::load(&a.ckpt)?.build_model::<f32>()?;
    let frames = load_frames(&a.input)?;
    if frames.len() < 4 {
        return Err(Error::Validation(format!(
            "{} holds {} frames, need 4",
            a.input.display(),
            frames.len()
        )));
    }
    let req = InterpolationRequest::new(&frames[..4])?;
    for p in visualize_mean_flows(&model, &req, &a.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

/// Parses `WIDTHxHEIGHT`.
pub fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Validation(format!("resolution {s:?} is not WIDTHxHEIGHT"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn profile_cmd(cli: &Cli, a: &ProfileArgs) -> Result<()> {
    let model = match &a.ckpt {
        Some(p) => Checkpoint::load(p)?.build_model::<f32>()?,
        None => Stmfnet::new(&config_for(cli, &a.variant)?.model, cli.seed)?,
    };
    let res = parse_resolution(&a.res)?;
    let r = profile(&model, res, a.reps, a.mem_limit_mb.map(|m| m << 20))?;
    println!("{}", r.line());
    Ok(())
}

fn make_variant_cmd(cli: &Cli, a: &VariantArgs) -> Result<()> {
    let cfg = config_for(cli, &a.name)?;
    let text = render_pairs(&cfg.model.entries());
    match &a.out {
        Some(p) => fs::write(p, &text).map_err(|e| Error::io(p, e))?,
        None => print!("{text}"),
    }
    if let Some(p) = &a.init_ckpt {
        let model = Stmfnet::<f32>::new(&cfg.model, cli.seed)?;
        Checkpoint::capture(&model, crate::trainkit::TrainState::new(cfg.train.lr)).save(p)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.device != "cpu" {
        return Err(Error::Validation(format!("device {:?} is not available; use cpu", cli.device)));
    }
    match &cli.command {
        Command::Train(a) => train(cli, a),
        Command::FinetuneGan(a) => finetune(cli, a),
        Command::Interpolate(a) => interpolate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::VisualizeFlows(a) => visualize(a),
        Command::Profile(a) => profile_cmd(cli, a),
        Command::MakeVariant(a) => make_variant_cmd(cli, a),
    }
}

/// Parses `argv` and runs it: 0 on success, 1 on usage, configuration or
/// validation errors, 2 on I/O, 3 on capacity errors.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
