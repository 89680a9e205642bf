//! The `plasm` command line: synthetic data, pretraining, training,
//! prediction, evaluation and frame export.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use plasm_core::pipeline::{model_from_checkpoint, predict, report_for};
use plasm_core::{
    gen_moving_shapes, pretrain, train, Checkpoint, Init, OptimizerConfig, Phase, Pixels, RunConfig, TrainOptions,
    VideoDataset,
};
use plasm_tensor::{Rng, Tensor};

pub const SEED_ENV: &str = "PLASM_SEED";

/// RNG stream ids per subcommand, so one seed drives independent draws.
const DATA_STREAM: u64 = 0;
const PRETRAIN_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

#[derive(Debug, Parser)]
#[command(name = "plasm", version, about = "Masked-pretraining video prediction", long_about = None)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bouncing-sprite dataset.
    GenData(GenDataArgs),
    /// Masked-reconstruction pretraining of encoder and decoder.
    Pretrain(FitArgs),
    /// Train for prediction, optionally from a pretrained checkpoint.
    Train(TrainArgs),
    /// Predict future frames of every clip in a dataset.
    Predict(PredictArgs),
    /// Score predicted frames against ground truth.
    Eval(EvalArgs),
    /// Write dataset frames as binary PGM images.
    ExportFrames(ExportArgs),
}

/// Run configuration: preset, then config file, then `--set`, then flags.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Named parameter preset (mmnist, taxibj, human36m, kitti, kth, kth40).
    #[arg(long)]
    pub preset: Option<String>,
    /// `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    pub set: Vec<(String, String)>,
    /// RNG seed; falls back to the PLASM_SEED environment variable.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable the pair-wise layer attention blocks.
    #[arg(long)]
    pub no_pla: bool,
    /// Disable the masked attention module in pretraining.
    #[arg(long)]
    pub no_sm: bool,
    /// Input pixel mask ratio.
    #[arg(long)]
    pub r0: Option<f64>,
    /// Attention-score mask ratio.
    #[arg(long)]
    pub r: Option<f64>,
    /// Translator block kind (convnext or plain).
    #[arg(long)]
    pub block: Option<String>,
    /// Epochs of the current phase.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Learning rate of the current phase.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Batch size of the current phase.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Number of clips.
    #[arg(long, default_value_t = 16)]
    pub clips: usize,
    /// Frames per clip; defaults to t_in + t_out of the configuration.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Sprites per clip.
    #[arg(long, default_value_t = 2)]
    pub sprites: usize,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// VSEQ dataset; defaults to the configuration's `dataset` key.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Loss log path; defaults to `<output>.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Pretrained checkpoint supplying encoder and decoder; the encoder is
    /// then frozen. Without it every weight is Kaiming-initialised.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Clips whose first t_in frames are the observations.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Clips per forward pass.
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted frames.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth clips.
    #[arg(long)]
    pub gt: PathBuf,
    /// First ground-truth frame compared; defaults to the trailing frames.
    #[arg(long)]
    pub offset: Option<usize>,
    /// Also report per-time-step errors.
    #[arg(long)]
    pub per_step: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Export only this clip.
    #[arg(long)]
    pub clip: Option<usize>,
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<plasm_core::Error> for Failure {
    fn from(e: plasm_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Pretrain,
    Train,
    Data,
}

impl ConfigArgs {
    fn resolve(&self, stage: Stage) -> Result<RunConfig, Failure> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let mut ov: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| ov.push((k.to_string(), v));
        if let Some(p) = &self.preset {
            push("preset", p.clone());
        }
        for (k, v) in &self.set {
            push(k, v.clone());
        }
        let file_sets_seed = text
            .lines()
            .filter_map(|l| l.split('#').next()?.split_once('='))
            .any(|(k, _)| k.trim() == "seed");
        let flag_sets_seed = self.set.iter().any(|(k, _)| k == "seed");
        match (self.seed, std::env::var(SEED_ENV)) {
            (Some(s), _) => push("seed", s.to_string()),
            (None, Ok(env)) if !file_sets_seed && !flag_sets_seed => {
                let s: u64 = env
                    .trim()
                    .parse()
                    .map_err(|_| Failure::Usage(format!("{SEED_ENV}={env:?} is not an unsigned integer")))?;
                push("seed", s.to_string());
            }
            _ => {}
        }
        if self.no_pla {
            push("use_pla", "false".into());
        }
        if self.no_sm {
            push("use_sm", "false".into());
        }
        if let Some(v) = self.r0 {
            push("r0", v.to_string());
        }
        if let Some(v) = self.r {
            push("r", v.to_string());
        }
        if let Some(v) = &self.block {
            push("block", v.clone());
        }
        if let Some(v) = self.max_steps {
            push("max_steps", v.to_string());
        }
        let prefix = if stage == Stage::Pretrain { "pretrain_" } else { "" };
        if let Some(v) = self.epochs {
            push(&format!("{prefix}epochs"), v.to_string());
        }
        if let Some(v) = self.lr {
            push(&format!("{prefix}lr"), v.to_string());
        }
        if let Some(v) = self.batch_size {
            push(&format!("{prefix}batch_size"), v.to_string());
        }
        RunConfig::parse(&text, &ov).map_err(|e| Failure::Usage(e.to_string()))
    }
}

/// Parse `argv` (including the program name) and run; returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{text}");
                0
            } else {
                let _ = write!(err, "{text}");
                2
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(f) => {
            let _ = match &f {
                Failure::Usage(m) => writeln!(err, "error: {m}"),
                Failure::Runtime(e) => writeln!(err, "error: {}", render_chain(e)),
            };
            f.exit_code()
        }
    }
}

/// Causes joined by `: `, skipping any already spelled out by its parent.
fn render_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !prev.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        prev = text;
    }
    out
}

pub fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::GenData(a) => gen_data(a, err),
        Command::Pretrain(a) => fit(a, None, Stage::Pretrain, err),
        Command::Train(a) => fit(a.fit, a.init, Stage::Train, err),
        Command::Predict(a) => predict_cmd(a, err),
        Command::Eval(a) => eval(a, out),
        Command::ExportFrames(a) => export_frames(a, err),
    }
}

fn gen_data(a: GenDataArgs, err: &mut dyn Write) -> Result<(), Failure> {
    let rc = a.config.resolve(Stage::Data)?;
    let m = &rc.model;
    let frames = a.frames.unwrap_or(m.t_in + m.t_out);
    let gray = gen_moving_shapes(a.clips, frames, m.height, m.width, a.sprites, &Rng::new(rc.seed, DATA_STREAM))?;
    let ds = replicate_channels(gray, m.channels)?;
    ds.save(&a.output)?;
    writeln!(
        err,
        "wrote {} clips of {} frames ({}x{}x{}) to {}",
        ds.n_clips,
        ds.t_total,
        ds.channels,
        ds.height,
        ds.width,
        a.output.display()
    )
    .ok();
    Ok(())
}

/// Copy single-channel frames into every channel of `channels`.
fn replicate_channels(ds: VideoDataset, channels: usize) -> anyhow::Result<VideoDataset> {
    if channels == 1 {
        return Ok(ds);
    }
    let Pixels::U8(px) = &ds.pixels else {
        bail!("generator produced non-u8 pixels");
    };
    let plane = ds.height * ds.width;
    let data: Vec<u8> = px.chunks(plane).flat_map(|p| p.repeat(channels)).collect();
    Ok(VideoDataset::new(
        [ds.n_clips, ds.t_total, channels, ds.height, ds.width],
        Pixels::U8(data),
    )?)
}

fn load_dataset(flag: Option<PathBuf>, rc: &RunConfig) -> Result<VideoDataset, Failure> {
    let path = flag
        .or_else(|| rc.dataset.clone())
        .ok_or_else(|| Failure::Usage("no dataset: pass --data or set `dataset` in the config".into()))?;
    let ds = VideoDataset::load(&path)?;
    let m = &rc.model;
    if [ds.channels, ds.height, ds.width] != [m.channels, m.height, m.width] {
        return Err(Failure::Runtime(anyhow!(
            "{}: frames are {}x{}x{}, configuration expects {}x{}x{}",
            path.display(),
            ds.channels,
            ds.height,
            ds.width,
            m.channels,
            m.height,
            m.width
        )));
    }
    Ok(ds)
}

fn log_path(a: &FitArgs) -> PathBuf {
    a.log.clone().unwrap_or_else(|| {
        let mut p = a.output.clone().into_os_string();
        p.push(".log");
        p.into()
    })
}

fn fit(a: FitArgs, init: Option<PathBuf>, stage: Stage, err: &mut dyn Write) -> Result<(), Failure> {
    let rc = a.config.resolve(stage)?;
    let ds = load_dataset(a.data.clone(), &rc)?;
    let echo = rc.to_text();
    let (outcome, phase) = if stage == Stage::Pretrain {
        let p = &rc.pretrain;
        let opts = TrainOptions {
            optimizer: OptimizerConfig {
                lr: p.lr,
                schedule: p.schedule,
                ..rc.optimizer.clone()
            },
            epochs: p.epochs,
            batch_size: p.batch_size,
            max_steps: rc.max_steps,
        };
        let o = pretrain(&ds, &rc.model, &opts, &Rng::new(rc.seed, PRETRAIN_STREAM))?;
        (o, Phase::Pretrained)
    } else {
        let opts = TrainOptions {
            optimizer: rc.optimizer.clone(),
            epochs: rc.model.epochs,
            batch_size: rc.batch_size,
            max_steps: rc.max_steps,
        };
        let ck = init
            .as_ref()
            .map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
            .transpose()?;
        let init = ck.as_ref().map_or(Init::Kaiming, Init::Pretrained);
        let o = train(&ds, &rc.model, &opts, init, &Rng::new(rc.seed, TRAIN_STREAM))?;
        (o, Phase::Trained)
    };
    outcome.checkpoint(phase, echo)?.save(&a.output)?;
    let log = log_path(&a);
    fs::write(&log, outcome.log.to_string()).with_context(|| format!("writing {}", log.display()))?;
    writeln!(
        err,
        "{phase}: {} steps, loss {:.6} -> {:.6}; checkpoint {}, log {}",
        outcome.log.0.len(),
        outcome.log.first().unwrap_or(f64::NAN),
        outcome.log.last().unwrap_or(f64::NAN),
        a.output.display(),
        log.display()
    )
    .ok();
    Ok(())
}

fn predict_cmd(a: PredictArgs, err: &mut dyn Write) -> Result<(), Failure> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let rc = RunConfig::parse(&ck.config, &[])
        .with_context(|| format!("{}: unreadable configuration echo", a.ckpt.display()))?;
    if ck.phase == Phase::Pretrained {
        writeln!(err, "warning: {} is a pretraining checkpoint; its translator is untrained", a.ckpt.display()).ok();
    }
    let model = model_from_checkpoint(&ck, &rc.model)?;
    let ds = load_dataset(Some(a.data.clone()), &rc)?;
    ds.check_split(rc.model.t_in, 0)?;
    let all: Vec<usize> = (0..ds.n_clips).collect();
    let (x, _) = ds.batch(&all, rc.model.t_in, 0)?;
    let y_hat = predict(&model, &x, a.batch)?;
    VideoDataset::from_tensor(&y_hat)?.save(&a.output)?;
    writeln!(err, "wrote {} predicted clips to {}", ds.n_clips, a.output.display()).ok();
    Ok(())
}

fn frames_tensor(ds: &VideoDataset, start: usize, len: usize) -> anyhow::Result<Tensor<f32>> {
    let data: Vec<f32> = (0..ds.n_clips).flat_map(|c| ds.clip_frames(c, start, len)).collect();
    Ok(Tensor::from_vec(&[ds.n_clips, len, ds.channels, ds.height, ds.width], data)?)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let pred = VideoDataset::load(&a.pred)?;
    let gt = VideoDataset::load(&a.gt)?;
    let [pn, pt, pc, ph, pw] = pred.dims();
    let [gn, gt_t, gc, gh, gw] = gt.dims();
    if [pn, pc, ph, pw] != [gn, gc, gh, gw] {
        return Err(Failure::Runtime(anyhow!(
            "prediction {:?} and ground truth {:?} differ in clips or frame size",
            pred.dims(),
            gt.dims()
        )));
    }
    let offset = match a.offset {
        Some(o) => o,
        None => gt_t
            .checked_sub(pt)
            .ok_or_else(|| anyhow!("ground truth has {gt_t} frames, prediction {pt}"))?,
    };
    if offset + pt > gt_t {
        return Err(Failure::Runtime(anyhow!(
            "offset {offset} + {pt} predicted frames exceeds {gt_t} ground-truth frames"
        )));
    }
    let y = frames_tensor(&gt, offset, pt)?;
    let y_hat = frames_tensor(&pred, 0, pt)?;
    let report = report_for(&y, &y_hat, a.per_step)?;
    write!(out, "{report}").context("writing report")?;
    Ok(())
}

/// Binary PGM (P5, maxval 255) of one `h x w` plane.
pub fn pgm_bytes(pixels: &[u8], height: usize, width: usize) -> Vec<u8> {
    let mut v = format!("P5\n{width} {height}\n255\n").into_bytes();
    v.extend_from_slice(pixels);
    v
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn export_frames(a: ExportArgs, err: &mut dyn Write) -> Result<(), Failure> {
    let ds = VideoDataset::load(&a.data)?;
    let clips: Vec<usize> = match a.clip {
        Some(c) if c >= ds.n_clips => {
            return Err(Failure::Usage(format!("clip {c} out of range ({} clips)", ds.n_clips)));
        }
        Some(c) => vec![c],
        None => (0..ds.n_clips).collect(),
    };
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let plane = ds.height * ds.width;
    let mut written = 0;
    for &c in &clips {
        let frames = ds.clip_frames(c, 0, ds.t_total);
        for t in 0..ds.t_total {
            for ch in 0..ds.channels {
                let start = (t * ds.channels + ch) * plane;
                let px: Vec<u8> = frames[start..start + plane].iter().map(|&v| to_u8(v)).collect();
                let name = frame_name(c, t, ch, ds.channels);
                write_file(&a.output.join(name), &pgm_bytes(&px, ds.height, ds.width))?;
                written += 1;
            }
        }
    }
    writeln!(err, "wrote {written} PGM frames to {}", a.output.display()).ok();
    Ok(())
}

/// `clip0003_t007.pgm`, with a `_c1` channel suffix for multi-channel data.
pub fn frame_name(clip: usize, t: usize, channel: usize, channels: usize) -> String {
    if channels == 1 {
        format!("clip{clip:04}_t{t:03}.pgm")
    } else {
        format!("clip{clip:04}_t{t:03}_c{channel}.pgm")
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
