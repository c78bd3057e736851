//! Patch-based training: L1 loss, step-decay Adam, checkpoints and resume.

mod augment;
pub mod gradcheck;

pub use augment::{augment, AugmentOp};

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::config::{ConfigError, TrainConfig};
use crate::lf::{LfError, LfShape, LightField};
use crate::metrics::psnr_values;
use crate::model::checkpoint::{load_model, read_archive, save_model, write_archive};
use crate::model::{backward, forward_with_tape, ModelConfig, ModelError, ModelParams};
use crate::nn::{Field, Real, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no training scenes")]
    NoScenes,
    #[error("patch {px}x{py} does not fit scene `{scene}` of spatial size {x}x{y}")]
    PatchTooLarge {
        scene: String,
        px: usize,
        py: usize,
        x: usize,
        y: usize,
    },
    #[error("loss became {loss} at step {step} (lr {lr:e})")]
    NonFiniteLoss { step: u64, lr: f64, loss: f64 },
    #[error("{0}")]
    Unsupported(String),
    #[error("training state: {0}")]
    State(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    LightField(#[from] LfError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean absolute error between two light fields.
pub fn l1_loss(pred: &LightField, gt: &LightField) -> Result<f64, TrainError> {
    if pred.shape() != gt.shape() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} vs {}",
            pred.shape(),
            gt.shape()
        )));
    }
    let n = pred.as_slice().len() as f64;
    Ok(pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// L1 loss and its gradient `scale * sign(pred - gt) / N`. `sign(0) = 0`.
pub fn l1_loss_grad<T: Real>(pred: &Field<T>, gt: &Field<T>, scale: f64) -> (f64, Field<T>) {
    assert_eq!(pred.shape(), gt.shape(), "l1 operands differ in shape");
    let n = pred.as_slice().len() as f64;
    let g = T::from_f64_lossy(scale / n);
    let mut loss = 0.0;
    let grad = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.as_f64().abs();
            if d > T::zero() {
                g
            } else if d < T::zero() {
                -g
            } else {
                T::zero()
            }
        })
        .collect();
    (loss / n, Field::from_vec(pred.shape(), grad))
}

/// Learning rate for a 0-based epoch: constant during warm-up, then divided
/// by `decay_factor` at the start of each `decay_every`-epoch stage.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.warm_epochs {
        return cfg.base_lr;
    }
    let stage = 1 + (epoch - cfg.warm_epochs) / cfg.decay_every;
    cfg.base_lr / cfg.decay_factor.powi(stage as i32)
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update on a flat array; `t` is the 1-based step.
pub fn adam_update<T: Real>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], t: u64, lr: f64) {
    let c1 = 1.0 - BETA1.powf(t as f64);
    let c2 = 1.0 - BETA2.powf(t as f64);
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g.as_f64();
        let mn = BETA1 * m.as_f64() + (1.0 - BETA1) * g;
        let vn = BETA2 * v.as_f64() + (1.0 - BETA2) * g * g;
        *m = T::from_f64_lossy(mn);
        *v = T::from_f64_lossy(vn);
        let step = lr * (mn / c1) / ((vn / c2).sqrt() + ADAM_EPS);
        *p = T::from_f64_lossy(p.as_f64() - step);
    }
}

/// Adam moments shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, lr: f64) {
        self.t += 1;
        let grads = grads.named_tensors();
        let m = self.m.named_tensors_mut();
        let v = self.v.named_tensors_mut();
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params
            .named_tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(m)
            .zip(v)
        {
            adam_update(&mut p.data, &g.data, &mut m.data, &mut v.data, self.t, lr);
        }
    }
}

/// A blurred/sharp training pair.
#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub blurred: LightField,
    pub sharp: LightField,
}

impl Scene {
    pub fn new(
        name: impl Into<String>,
        blurred: LightField,
        sharp: LightField,
    ) -> Result<Self, TrainError> {
        if blurred.shape() != sharp.shape() {
            return Err(TrainError::ShapeMismatch(format!(
                "blurred {} vs sharp {}",
                blurred.shape(),
                sharp.shape()
            )));
        }
        Ok(Self {
            name: name.into(),
            blurred,
            sharp,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub scene: usize,
    /// Top-left `(x0, y0)` of the crop.
    pub origin: (usize, usize),
    pub op: AugmentOp,
    pub blurred: LightField,
    pub sharp: LightField,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub samples: Vec<Sample>,
}

impl Batch {
    /// `[B, U, V, X, Y, C]`.
    pub fn shape(&self) -> [usize; 6] {
        let s = self.samples[0].blurred.shape();
        [self.samples.len(), s.u, s.v, s.x, s.y, s.c]
    }
}

/// Scene index used for batch slot `b` of 0-based step `step`.
pub fn scene_for(step: u64, b: usize, batch_size: usize, n_scenes: usize) -> usize {
    ((step * batch_size as u64 + b as u64) % n_scenes as u64) as usize
}

/// Crop one aligned patch per batch slot, cycling through scenes, and
/// optionally augment it.
pub fn assemble_batch<R: Rng>(
    scenes: &[Scene],
    step: u64,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Batch, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::NoScenes);
    }
    let mut samples = Vec::with_capacity(cfg.batch_size);
    for b in 0..cfg.batch_size {
        let idx = scene_for(step, b, cfg.batch_size, scenes.len());
        let scene = &scenes[idx];
        let s = scene.blurred.shape();
        if cfg.patch_x > s.x || cfg.patch_y > s.y {
            return Err(TrainError::PatchTooLarge {
                scene: scene.name.clone(),
                px: cfg.patch_x,
                py: cfg.patch_y,
                x: s.x,
                y: s.y,
            });
        }
        let x0 = rng.gen_range(0..=s.x - cfg.patch_x);
        let y0 = rng.gen_range(0..=s.y - cfg.patch_y);
        let mut blurred = scene.blurred.crop_patch(x0, y0, cfg.patch_x, cfg.patch_y)?;
        let mut sharp = scene.sharp.crop_patch(x0, y0, cfg.patch_x, cfg.patch_y)?;
        let op = if cfg.augment {
            AugmentOp::sample(rng, blurred.shape())
        } else {
            AugmentOp::None
        };
        if op != AugmentOp::None {
            blurred = augment(&blurred, op)?;
            sharp = augment(&sharp, op)?;
        }
        samples.push(Sample {
            scene: idx,
            origin: (x0, y0),
            op,
            blurred,
            sharp,
        });
    }
    Ok(Batch { samples })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    /// Steps completed so far.
    pub step: u64,
    /// 0-based epoch the step belongs to.
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Mean PSNR of the batch predictions before the update.
    pub psnr: f64,
}

impl std::fmt::Display for StepLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step={} epoch={} loss={:.6} lr={:.3e}",
            self.step, self.epoch, self.loss, self.lr
        )
    }
}

pub const MODEL_FILE: &str = "model.bin";
pub const STATE_FILE: &str = "train_state.bin";

/// Single-process trainer in `f32`.
pub struct Trainer {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub params: ModelParams<f32>,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    step: u64,
    best_psnr: Option<f64>,
    epoch_psnr_sum: f64,
    epoch_psnr_count: u64,
    scenes: Vec<Scene>,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    /// Fresh run; weights and data order derive from `train_cfg.seed`.
    pub fn new(
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        scenes: Vec<Scene>,
        out_dir: Option<PathBuf>,
    ) -> Result<Self, TrainError> {
        train_cfg.validate()?;
        model_cfg.validate()?;
        check_scenes(&scenes, &model_cfg)?;
        let params = ModelParams::init(&model_cfg, train_cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            adam: Adam::new(&params),
            params,
            model_cfg,
            train_cfg,
            rng,
            step: 0,
            best_psnr: None,
            epoch_psnr_sum: 0.0,
            epoch_psnr_count: 0,
            scenes,
            out_dir,
        })
    }

    /// Continue from a checkpoint directory written by [`Trainer::save_checkpoint`].
    pub fn resume(
        dir: &Path,
        scenes: Vec<Scene>,
        out_dir: Option<PathBuf>,
    ) -> Result<Self, TrainError> {
        let (model_cfg, params) = load_model::<f32>(&dir.join(MODEL_FILE), None)?;
        let mut archive = read_archive::<f32>(&dir.join(STATE_FILE), "train_state")?;
        let meta = archive.meta.clone();
        let bad = |what: &str| TrainError::State(format!("missing or malformed `{what}`"));
        let train_cfg: TrainConfig = serde_json::from_value(meta["train_config"].clone())
            .map_err(|_| bad("train_config"))?;
        let stored: ModelConfig = serde_json::from_value(meta["model_config"].clone())
            .map_err(|_| bad("model_config"))?;
        crate::model::checkpoint::compare_configs(&stored, &model_cfg)?;
        check_scenes(&scenes, &model_cfg)?;
        let mut adam = Adam::new(&params);
        adam.t = meta["adam_t"].as_u64().ok_or_else(|| bad("adam_t"))?;
        for (name, t) in adam.m.named_tensors_mut() {
            *t = take_shaped(&mut archive.take(&format!("m.{name}"))?, t)?;
        }
        for (name, t) in adam.v.named_tensors_mut() {
            *t = take_shaped(&mut archive.take(&format!("v.{name}"))?, t)?;
        }
        let rng_meta = &meta["rng"];
        let seed_hex = rng_meta["seed"].as_str().ok_or_else(|| bad("rng.seed"))?;
        let mut seed = [0u8; 32];
        if seed_hex.len() != 64 {
            return Err(bad("rng.seed"));
        }
        for (i, b) in seed.iter_mut().enumerate() {
            *b =
                u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad("rng.seed"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(
            rng_meta["stream"]
                .as_u64()
                .ok_or_else(|| bad("rng.stream"))?,
        );
        let word_pos: u128 = rng_meta["word_pos"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("rng.word_pos"))?;
        rng.set_word_pos(word_pos);
        Ok(Self {
            step: meta["step"].as_u64().ok_or_else(|| bad("step"))?,
            best_psnr: meta["best_psnr"].as_f64(),
            epoch_psnr_sum: meta["epoch_psnr_sum"]
                .as_f64()
                .ok_or_else(|| bad("epoch_psnr_sum"))?,
            epoch_psnr_count: meta["epoch_psnr_count"]
                .as_u64()
                .ok_or_else(|| bad("epoch_psnr_count"))?,
            model_cfg,
            train_cfg,
            params,
            adam,
            rng,
            scenes,
            out_dir,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        (self.scenes.len() * self.train_cfg.patches_per_scene) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.train_cfg.total_epochs as u64
    }

    pub fn epoch(&self) -> usize {
        (self.step / self.steps_per_epoch()) as usize
    }

    pub fn best_psnr(&self) -> Option<f64> {
        self.best_psnr
    }

    pub fn adam(&self) -> &Adam<f32> {
        &self.adam
    }

    /// One optimizer step over one batch.
    pub fn step(&mut self) -> Result<StepLog, TrainError> {
        let epoch = self.epoch();
        let lr = lr_at(epoch, &self.train_cfg);
        let batch = assemble_batch(&self.scenes, self.step, &self.train_cfg, &mut self.rng)?;
        let mut grads = self.params.zeros_like();
        let scale = 1.0 / batch.samples.len() as f64;
        let (mut loss, mut psnr) = (0.0, 0.0);
        for sample in &batch.samples {
            let input = Field::<f32>::from_light_field(&sample.blurred);
            let target = Field::<f32>::from_light_field(&sample.sharp);
            let (out, tape) = forward_with_tape(&self.params, &self.model_cfg, &input)?;
            let (l, dout) = l1_loss_grad(&out, &target, scale);
            loss += l * scale;
            let pred: Vec<f64> = out
                .as_slice()
                .iter()
                .map(|v| v.as_f64().clamp(0.0, 1.0))
                .collect();
            let p = psnr_values(&pred, sample.sharp.as_slice())
                .map_err(|e| TrainError::ShapeMismatch(e.to_string()))?;
            psnr += p.min(100.0) * scale;
            backward(&self.params, &self.model_cfg, &tape, &dout, &mut grads);
        }
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: self.step + 1,
                lr,
                loss,
            });
        }
        self.adam.step(&mut self.params, &grads, lr);
        self.step += 1;
        self.epoch_psnr_sum += psnr;
        self.epoch_psnr_count += 1;
        if self.step % self.steps_per_epoch() == 0 {
            self.finish_epoch()?;
        }
        Ok(StepLog {
            step: self.step,
            epoch,
            loss,
            lr,
            psnr,
        })
    }

    fn finish_epoch(&mut self) -> Result<(), TrainError> {
        let done = self.epoch();
        let mean = self.epoch_psnr_sum / self.epoch_psnr_count.max(1) as f64;
        self.epoch_psnr_sum = 0.0;
        self.epoch_psnr_count = 0;
        let improved = self.best_psnr.is_none_or(|b| mean > b);
        if improved {
            self.best_psnr = Some(mean);
        }
        if let Some(dir) = self.out_dir.clone() {
            if improved {
                self.save_checkpoint(&dir.join("best"))?;
            }
            let every = self.train_cfg.checkpoint_every;
            if every > 0 && done % every == 0 {
                self.save_checkpoint(&dir.join(format!("epoch_{done}")))?;
            }
        }
        Ok(())
    }

    /// Run until `total_steps`, calling `on_log` after every step.
    pub fn run(&mut self, mut on_log: impl FnMut(&StepLog)) -> Result<(), TrainError> {
        self.run_until(self.total_steps(), &mut on_log)
    }

    pub fn run_until(
        &mut self,
        until: u64,
        mut on_log: impl FnMut(&StepLog),
    ) -> Result<(), TrainError> {
        while self.step < until {
            let log = self.step()?;
            on_log(&log);
        }
        Ok(())
    }

    /// Weights plus everything needed to continue bit-for-bit.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        save_model(&dir.join(MODEL_FILE), &self.model_cfg, &self.params)?;
        let seed: String = self
            .rng
            .get_seed()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let meta = json!({
            "model_config": self.model_cfg,
            "train_config": self.train_cfg,
            "step": self.step,
            "adam_t": self.adam.t,
            "best_psnr": self.best_psnr,
            "epoch_psnr_sum": self.epoch_psnr_sum,
            "epoch_psnr_count": self.epoch_psnr_count,
            "rng": {
                "seed": seed,
                "stream": self.rng.get_stream(),
                "word_pos": self.rng.get_word_pos().to_string(),
            },
        });
        let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
        for (name, t) in self.adam.m.named_tensors() {
            tensors.push((format!("m.{name}"), t));
        }
        for (name, t) in self.adam.v.named_tensors() {
            tensors.push((format!("v.{name}"), t));
        }
        write_archive(&dir.join(STATE_FILE), "train_state", &meta, &tensors)?;
        Ok(())
    }
}

fn take_shaped(stored: &mut Tensor<f32>, slot: &Tensor<f32>) -> Result<Tensor<f32>, TrainError> {
    if stored.shape != slot.shape {
        return Err(TrainError::State(format!(
            "moment shape {:?}, parameters are {:?}",
            stored.shape, slot.shape
        )));
    }
    Ok(std::mem::replace(stored, Tensor::zeros(&[0])))
}

fn check_scenes(scenes: &[Scene], cfg: &ModelConfig) -> Result<(), TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::NoScenes);
    }
    for scene in scenes {
        let s: LfShape = scene.blurred.shape();
        if (s.u, s.v, s.c) != (cfg.u, cfg.v, cfg.image_channels) {
            return Err(TrainError::ShapeMismatch(format!(
                "scene `{}` is {s}, model expects {}x{} views with {} channels",
                scene.name, cfg.u, cfg.v, cfg.image_channels
            )));
        }
    }
    Ok(())
}

/// Train to completion, writing checkpoints under `out_dir`; returns the
/// directory of the best checkpoint.
pub fn train_loop(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    scenes: Vec<Scene>,
    out_dir: &Path,
    on_log: impl FnMut(&StepLog),
) -> Result<PathBuf, TrainError> {
    let mut trainer = Trainer::new(model_cfg, train_cfg, scenes, Some(out_dir.to_path_buf()))?;
    trainer.run(on_log)?;
    Ok(out_dir.join("best"))
}
