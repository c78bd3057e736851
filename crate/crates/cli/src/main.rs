mod commands;
mod scenes;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lfdeblur::{Preset, RunConfig};

#[derive(Parser)]
#[command(name = "lfdeblur", version, about = "Light field motion deblurring")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Config sources shared by every subcommand, lowest priority first.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// Starting preset: default, smoke or tiny.
    #[arg(long, default_value = "default")]
    preset: String,
    /// `key = value` config file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single override, `key=value`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self, flags: &[(&str, Option<String>)]) -> anyhow::Result<RunConfig> {
        let preset: Preset = self.preset.parse()?;
        let mut cfg = RunConfig::preset(preset);
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
            cfg.parse_text(&text)?;
        }
        let mut pairs = Vec::new();
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got `{item}`"))?;
            pairs.push((k.trim(), v.trim()));
        }
        for (k, v) in flags {
            if let Some(v) = v {
                pairs.push((k, v.as_str()));
            }
        }
        cfg.apply(pairs)?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Blur a sharp light field along a random camera trajectory.
    Synth(commands::SynthArgs),
    /// Train on `<data>/<scene>/{sharp,blurred}` pairs.
    Train(commands::TrainArgs),
    /// Restore a blurred light field with a trained model.
    Infer(commands::InferArgs),
    /// PSNR, SSIM, NCC and LMSE of restored against sharp light fields.
    Eval(commands::EvalArgs),
    /// Export a sub-aperture, micro-lens or epipolar-plane image as PNG.
    Slice(commands::SliceArgs),
    /// Print the resolved config and the parameter breakdown.
    Info(commands::InfoArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Slice(a) => commands::slice(a),
        Command::Info(a) => commands::info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Bad config keys or values are usage errors, like bad flags.
            if e.downcast_ref::<lfdeblur::config::ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
