//! Command implementations behind the `tma` binary.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use tma_core::io::{self, dataset, RunConfig, Split};
use tma_core::metrics::{event_mask, MetricAccumulator, MetricReport};
use tma_core::par::Execution;
use tma_core::pipeline::{prepare_all, voxelize_split};
use tma_core::synth::{generate_dataset, DatasetConfig};
use tma_core::train::{evaluate, Trainer};
use tma_core::model::TmaModel;
use tma_core::FlowField;

#[derive(Debug, Parser)]
#[command(name = "tma", version, about = "Event-based optical flow: data synthesis, training and inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset directory.
    Synth(SynthArgs),
    /// Train from a run configuration.
    Train(TrainArgs),
    /// Print metrics for a checkpoint or a directory of predicted flows.
    Eval(EvalArgs),
    /// Predict flow for one event window.
    Infer(InferArgs),
    /// Render a flow file as a PPM image.
    Viz(VizArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frame size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 6.0)]
    pub speed_max: f64,
    #[arg(long, default_value_t = 5)]
    pub segments: usize,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override a config entry, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of `<sample>.flo` predictions to score instead of running a model.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub t0: u64,
    #[arg(long)]
    pub t1: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Magnitude mapped to full saturation; defaults to the largest in the file.
    #[arg(long)]
    pub max: Option<f32>,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad size component {v:?}"));
    Ok((p(h)?, p(w)?))
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).map_err(|e| e.to_string())
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

pub fn run(cli: Cli, out: &mut impl std::io::Write) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Infer(a) => cmd_infer(&a, out),
        Command::Viz(a) => cmd_viz(&a, out),
    }
}

pub fn cmd_synth(a: &SynthArgs, out: &mut impl std::io::Write) -> Result<()> {
    let (h, w) = a.size;
    let mut cfg = DatasetConfig::new(a.seed, w, h, a.speed_max);
    cfg.scene.segments = a.segments;
    if let Some(p) = a.points {
        cfg.scene.num_points = p;
    }
    let samples = generate_dataset(a.n, &cfg, execution(a.sequential))?;
    io::write_dataset(&a.out, &samples, &cfg)?;
    writeln!(out, "wrote {} samples to {}", samples.len(), a.out.display())?;
    Ok(())
}

fn checkpoint_name(step: usize) -> String {
    format!("ckpt_{step:06}.tmac")
}

pub fn cmd_train(a: &TrainArgs, out: &mut impl std::io::Write) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    for kv in &a.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(o) = &a.out {
        cfg.out_dir = Some(o.clone());
    }
    cfg.validate()?;
    let Some(out_dir) = cfg.out_dir.clone() else {
        bail!("no output directory: pass --out or set out_dir");
    };
    let Some(train_dir) = cfg.train_data.clone() else {
        bail!("train_data is not set");
    };
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.txt"), cfg.to_text())?;

    let exec = cfg.train.execution;
    let (m, t) = (&cfg.model, &cfg.train);
    let samples: Vec<_> = io::load_split(&train_dir, Split::Train)?.into_iter().map(|(_, s)| s).collect();
    ensure!(!samples.is_empty(), "{} has no training samples", train_dir.display());
    let data = prepare_all(&samples, m.segments, m.bins, exec)?;

    let model = TmaModel::<f32>::new(m.clone(), t.seed)?;
    let mut trainer = Trainer::new(model, t.clone())?;
    let mut log = fs::File::create(out_dir.join("train.log"))?;
    for _ in 0..t.steps {
        let rec = trainer.train_step(&data)?;
        writeln!(log, "{rec}")?;
        if rec.step % cfg.log_every == 0 || rec.step == t.steps {
            writeln!(out, "{rec}")?;
        }
        if cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0 && rec.step < t.steps {
            let state = io::OptimizerState::from_adamw(&trainer.optimizer);
            io::save_checkpoint(out_dir.join(checkpoint_name(rec.step)), &trainer.model, Some(&state))?;
        }
    }
    let state = io::OptimizerState::from_adamw(&trainer.optimizer);
    io::save_checkpoint(out_dir.join("final.tmac"), &trainer.model, Some(&state))?;

    if let Some(eval_dir) = &cfg.eval_data {
        let held: Vec<_> = io::load_split(eval_dir, Split::Test)?.into_iter().map(|(_, s)| s).collect();
        let held = prepare_all(&held, m.segments, m.bins, exec)?;
        let report = evaluate(&trainer.model, &held, exec)?;
        fs::write(out_dir.join("eval.txt"), report.to_text())?;
        write!(out, "{}", report.to_text())?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut impl std::io::Write) -> Result<()> {
    let exec = execution(a.sequential);
    let entries = io::load_split(&a.data, a.split)?;
    ensure!(!entries.is_empty(), "no samples in the requested split of {}", a.data.display());
    let report = match (&a.pred, &a.ckpt) {
        (Some(pred_dir), _) => score_predictions(pred_dir, &entries)?,
        (None, Some(ckpt)) => {
            let (model, _) = io::load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let samples: Vec<_> = entries.into_iter().map(|(_, s)| s).collect();
            let data = prepare_all(&samples, model.config.segments, model.config.bins, exec)?;
            evaluate(&model, &data, exec)?
        }
        (None, None) => bail!("pass --ckpt or --pred"),
    };
    write!(out, "{}", report.to_text())?;
    Ok(())
}

fn score_predictions(pred_dir: &Path, entries: &[(dataset::DatasetEntry, tma_core::synth::LabeledSample)]) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new();
    for (e, s) in entries {
        let path = e.flow_path(pred_dir);
        let pred = io::read_flow(&path).with_context(|| format!("reading {}", path.display()))?;
        acc.add(&pred, &s.gt_flow, &s.gt_flow.valid)?;
    }
    Ok(acc.report())
}

pub fn cmd_infer(a: &InferArgs, out: &mut impl std::io::Write) -> Result<()> {
    let (model, _) = io::load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let stream = io::read_events(&a.events).with_context(|| format!("reading {}", a.events.display()))?;
    let c = &model.config;
    let grids = voxelize_split(&stream, a.t0, a.t1, c.segments, c.bins, Execution::Sequential)?;
    let flows = model.predict(&grids)?;
    let last = flows.into_iter().last().expect("at least one iteration");
    let (h, w) = (stream.height() as usize, stream.width() as usize);
    let flow = last.with_valid(event_mask(&stream, (a.t0, a.t1), h, w))?;
    io::write_flow(&a.out, &flow)?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

fn max_magnitude(flow: &FlowField) -> f32 {
    let plane = flow.height() * flow.width();
    let d = flow.values.data();
    (0..plane).map(|i| d[i].hypot(d[plane + i])).fold(0.0, f32::max)
}

pub fn cmd_viz(a: &VizArgs, out: &mut impl std::io::Write) -> Result<()> {
    let flow = io::read_flow(&a.flow).with_context(|| format!("reading {}", a.flow.display()))?;
    let max = a.max.unwrap_or_else(|| {
        let m = max_magnitude(&flow);
        if m > 0.0 && m.is_finite() {
            m
        } else {
            1.0
        }
    });
    fs::write(&a.out, io::render_flow_image(&flow, max)?)?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}
