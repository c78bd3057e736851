use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use lfdeblur::lf::{save_image_png, save_light_field, EpiOrientation};
use lfdeblur::metrics::{evaluate, MetricReport};
use lfdeblur::model::checkpoint::load_model;
use lfdeblur::model::{count_params, forward};
use lfdeblur::synth::{sample_trajectory, synthesize_blur, CameraTrajectory};
use lfdeblur::train::{Scene, Trainer, MODEL_FILE};
use lfdeblur::RunConfig;
use rayon::prelude::*;

use crate::scenes::{discover, is_lf_dir, load};
use crate::ConfigArgs;

pub const TRAJECTORY_FILE: &str = "trajectory.txt";

fn echo(cfg: &RunConfig) {
    println!("# resolved config");
    print!("{}", cfg.to_text());
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(|v| v.to_string())
}

#[derive(Args)]
pub struct SynthArgs {
    /// Sharp light field directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for the blurred views and the trajectory sidecar.
    #[arg(long)]
    out: PathBuf,
    /// Replay this trajectory file instead of sampling one.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    dof: Option<u8>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    trans_mag: Option<f64>,
    #[arg(long)]
    rot_mag: Option<f64>,
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long)]
    disparity: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = a.config.resolve(&[
        ("dof", opt(&a.dof)),
        ("seed", opt(&a.seed)),
        ("samples", opt(&a.samples)),
        ("trans_mag", opt(&a.trans_mag)),
        ("rot_mag", opt(&a.rot_mag)),
        ("baseline", opt(&a.baseline)),
        ("disparity", opt(&a.disparity)),
    ])?;
    echo(&cfg);
    let s = &cfg.synth;
    let traj = match &a.trajectory {
        Some(path) => {
            CameraTrajectory::read(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => sample_trajectory(s.seed, s.dof, s.trans_mag, s.rot_mag, s.samples)?
            .with_baseline(s.baseline),
    };
    let sharp = load(&a.input)?;
    let blurred = synthesize_blur(&sharp, &traj, s.disparity)?;
    save_light_field(&blurred, &a.out)?;
    traj.write(&a.out.join(TRAJECTORY_FILE))?;
    println!(
        "wrote {} views and {} to {}",
        sharp.shape().views(),
        TRAJECTORY_FILE,
        a.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory of scenes, each with `sharp/` and `blurred/` light fields.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoints and `train.log` go here.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint directory; config flags are then ignored.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Print every n-th step (the log file gets every step).
    #[arg(long, default_value_t = 10)]
    log_every: u64,
    #[command(flatten)]
    config: ConfigArgs,
}

fn training_scenes(root: &Path) -> Result<Vec<Scene>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .with_context(|| format!("listing {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_lf_dir(&p.join("sharp")) && is_lf_dir(&p.join("blurred")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!(
            "no <scene>/sharp + <scene>/blurred pairs under {}",
            root.display()
        );
    }
    let loaded: Vec<Result<Scene>> = dirs
        .par_iter()
        .map(|d| {
            let name = d
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(Scene::new(
                name,
                load(&d.join("blurred"))?,
                load(&d.join("sharp"))?,
            )?)
        })
        .collect();
    loaded.into_iter().collect()
}

pub fn train(a: TrainArgs) -> Result<()> {
    let scenes = training_scenes(&a.data)?;
    let mut trainer = match &a.resume {
        Some(dir) => Trainer::resume(dir, scenes, Some(a.out.clone()))?,
        None => {
            let cfg = a
                .config
                .resolve(&[("seed", opt(&a.seed)), ("total_epochs", opt(&a.epochs))])?;
            Trainer::new(cfg.model, cfg.train, scenes, Some(a.out.clone()))?
        }
    };
    echo(&RunConfig {
        model: trainer.model_cfg.clone(),
        train: trainer.train_cfg.clone(),
        ..RunConfig::default()
    });
    std::fs::create_dir_all(&a.out)?;
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(a.out.join("train.log"))?;
    let mut write_err = None;
    let every = a.log_every.max(1);
    trainer.run(|l| {
        if let Err(e) = writeln!(log, "{l}") {
            write_err.get_or_insert(e);
        }
        if l.step % every == 0 {
            println!("{l}");
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing train.log");
    }
    trainer.save_checkpoint(&a.out.join("last"))?;
    match trainer.best_psnr() {
        Some(p) => println!(
            "done: {} steps, best epoch PSNR {p:.3} dB",
            trainer.step_count()
        ),
        None => println!("done: {} steps", trainer.step_count()),
    }
    Ok(())
}

#[derive(Args)]
pub struct InferArgs {
    /// Checkpoint directory or model file.
    #[arg(long)]
    ckpt: PathBuf,
    /// Blurred light field directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn model_path(ckpt: &Path) -> PathBuf {
    if ckpt.is_dir() {
        ckpt.join(MODEL_FILE)
    } else {
        ckpt.to_path_buf()
    }
}

pub fn infer(a: InferArgs) -> Result<()> {
    let path = model_path(&a.ckpt);
    let (model_cfg, params) =
        load_model::<f32>(&path, None).with_context(|| format!("loading {}", path.display()))?;
    echo(&RunConfig {
        model: model_cfg.clone(),
        ..RunConfig::default()
    });
    let blurred = load(&a.input)?;
    let sharp = forward(&blurred, &params, &model_cfg)?.clamped();
    save_light_field(&sharp, &a.out)?;
    println!(
        "restored {} views into {}",
        sharp.shape().views(),
        a.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Restored light field, or a directory of per-scene light fields.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth, laid out like `--pred` (a `sharp/` subdirectory is also accepted).
    #[arg(long)]
    gt: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let gt = discover(&a.gt, "sharp")?;
    let pairs: Vec<(String, PathBuf, PathBuf)> = if is_lf_dir(&a.pred) {
        if gt.len() != 1 {
            bail!(
                "--pred is a single light field but --gt holds {} scenes",
                gt.len()
            );
        }
        let (name, dir) = gt.into_iter().next().expect("one scene");
        vec![(name, a.pred.clone(), dir)]
    } else {
        gt.into_iter()
            .map(|(name, dir)| (name.clone(), a.pred.join(&name), dir))
            .collect()
    };
    let rows: Vec<Result<_>> = pairs
        .par_iter()
        .map(|(name, p, g)| Ok(evaluate(name, &load(p)?, &load(g)?)?))
        .collect();
    let report = MetricReport {
        per_scene: rows.into_iter().collect::<Result<_>>()?,
    };
    print!("{report}");
    if let Some(path) = &a.report {
        std::fs::write(path, report.to_string())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SliceKind {
    Sai,
    MicroLens,
    Epi,
}

#[derive(Args)]
pub struct SliceArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output PNG file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    kind: SliceKind,
    /// Angular row (default: center).
    #[arg(long)]
    u: Option<usize>,
    /// Angular column (default: center).
    #[arg(long)]
    v: Option<usize>,
    /// Spatial row (default: center).
    #[arg(long)]
    x: Option<usize>,
    /// Spatial column (default: center).
    #[arg(long)]
    y: Option<usize>,
    /// EPI orientation: horizontal (fixes u, y) or vertical (fixes v, x).
    #[arg(long, default_value = "horizontal")]
    orientation: String,
    /// Nearest-neighbour upscaling factor.
    #[arg(long, default_value_t = 1)]
    scale: usize,
}

pub fn slice(a: SliceArgs) -> Result<()> {
    let lf = load(&a.input)?;
    let s = lf.shape();
    let u = a.u.unwrap_or(s.u / 2);
    let v = a.v.unwrap_or(s.v / 2);
    let x = a.x.unwrap_or(s.x / 2);
    let y = a.y.unwrap_or(s.y / 2);
    let img = match a.kind {
        SliceKind::Sai => lf.sai(u, v)?,
        SliceKind::MicroLens => lf.micro_lens(x, y)?,
        SliceKind::Epi => {
            let orientation: EpiOrientation = a.orientation.parse().map_err(anyhow::Error::msg)?;
            match orientation {
                EpiOrientation::Horizontal => lf.epi(orientation, u, y)?,
                EpiOrientation::Vertical => lf.epi(orientation, v, x)?,
            }
        }
    };
    save_image_png(&img, &a.out, a.scale)?;
    let (h, w, _) = img.dim();
    println!("wrote {h}x{w} image to {}", a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct InfoArgs {
    /// Also load this checkpoint and compare its array sizes with the formula.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn info(a: InfoArgs) -> Result<()> {
    let mut cfg = a.config.resolve(&[])?;
    let stored = match &a.ckpt {
        Some(ckpt) => {
            let (model_cfg, params) = load_model::<f32>(&model_path(ckpt), None)?;
            cfg.model = model_cfg;
            Some(params.scalar_count())
        }
        None => None,
    };
    echo(&cfg);
    let report = count_params(&cfg.model);
    print!("{report}");
    if let Some(n) = stored {
        println!("checkpoint arrays hold {n} scalars");
        if n != report.total() {
            bail!(
                "checkpoint holds {n} scalars, formula gives {}",
                report.total()
            );
        }
    }
    Ok(())
}
