mod common;

use std::path::Path;

use common::*;
use lfdeblur::lf::{LfShape, LightField};
use lfdeblur::model::{Ablation, Head, ModelConfig};
use lfdeblur::synth::{sample_trajectory, synthesize_blur};
use lfdeblur::train::{
    adam_update, assemble_batch, l1_loss, lr_at, Scene, StepLog, TrainError, Trainer, MODEL_FILE,
    STATE_FILE,
};
use lfdeblur::{Preset, RunConfig, TrainConfig};
use rand::Rng;

fn smooth_scene(shape: LfShape, seed: u64) -> Scene {
    let mut r = rng(seed);
    let (a, b): (f64, f64) = (r.gen_range(0.2..0.9), r.gen_range(0.2..0.9));
    let sharp = LightField::from_fn(shape, |(u, v, x, y, c)| {
        let (x, y) = (x as f64 + 0.5 * v as f64, y as f64 + 0.5 * u as f64);
        (0.5 + 0.35 * ((x * a + c as f64).sin() * (y * b).cos())).clamp(0.0, 1.0)
    })
    .unwrap();
    let traj = sample_trajectory(seed, 3, 0.1, 0.0, 8).unwrap();
    let blurred = synthesize_blur(&sharp, &traj, 20.0).unwrap();
    Scene::new(format!("scene{seed}"), blurred, sharp).unwrap()
}

fn tiny() -> (ModelConfig, TrainConfig) {
    let cfg = RunConfig::preset(Preset::Tiny);
    (cfg.model, cfg.train)
}

fn losses(trainer: &mut Trainer, until: u64) -> Vec<StepLog> {
    let mut out = Vec::new();
    trainer.run_until(until, |l| out.push(l.clone())).unwrap();
    out
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

#[test]
fn descent_reproducibility_and_resume() {
    let (model, train) = tiny();
    let scene = smooth_scene(LfShape::new(3, 3, 24, 24, 3), 1);
    let dir = tempfile::tempdir().unwrap();
    let (a_dir, b_dir) = (dir.path().join("a"), dir.path().join("b"));

    let mut a = Trainer::new(model.clone(), train.clone(), vec![scene.clone()], None).unwrap();
    let mut full = losses(&mut a, 100);
    a.save_checkpoint(&a_dir).unwrap();
    full.extend(losses(&mut a, 200));
    assert!(
        full[199].loss < full[0].loss,
        "{} vs {}",
        full[199].loss,
        full[0].loss
    );

    let mut b = Trainer::new(model, train, vec![scene.clone()], None).unwrap();
    let first = losses(&mut b, 100);
    b.save_checkpoint(&b_dir).unwrap();
    for f in [MODEL_FILE, STATE_FILE] {
        assert!(same_bytes(&a_dir.join(f), &b_dir.join(f)), "{f} differs");
    }
    assert!(first
        .iter()
        .zip(&full)
        .all(|(x, y)| x.loss.to_bits() == y.loss.to_bits()));

    let mut c = Trainer::resume(&b_dir, vec![scene], None).unwrap();
    assert_eq!(c.step_count(), 100);
    let rest = losses(&mut c, 200);
    assert_eq!(rest.len(), 100);
    for (x, y) in rest.iter().zip(&full[100..]) {
        assert_eq!(x.step, y.step);
        assert_eq!(x.loss.to_bits(), y.loss.to_bits(), "step {}", x.step);
    }
    assert_eq!(c.params, a.params);
}

#[test]
fn batch_shape_matches_protocol() {
    let scene = smooth_scene(LfShape::new(5, 5, 200, 200, 3), 2);
    let cfg = TrainConfig::default();
    let batch = assemble_batch(&[scene], 0, &cfg, &mut rng(0)).unwrap();
    assert_eq!(batch.shape(), [4, 5, 5, 64, 64, 3]);
    let small = smooth_scene(LfShape::new(5, 5, 40, 80, 3), 3);
    assert!(matches!(
        assemble_batch(&[small], 0, &cfg, &mut rng(0)),
        Err(TrainError::PatchTooLarge { .. })
    ));
}

#[test]
fn nan_loss_names_step_and_rate() {
    let (model, train) = tiny();
    let scene = smooth_scene(LfShape::new(3, 3, 20, 20, 3), 4);
    let mut t = Trainer::new(model, train, vec![scene], None).unwrap();
    t.step().unwrap();
    let Head::Dpva(head) = &mut t.params.head else {
        panic!("dpva head expected")
    };
    head.out.bias.as_mut().unwrap().data[0] = f32::NAN;
    let err = t.step().unwrap_err();
    match &err {
        TrainError::NonFiniteLoss { step, lr, .. } => assert_eq!((*step, *lr), (2, 1e-3)),
        other => panic!("{other:?}"),
    }
    let msg = err.to_string();
    assert!(msg.contains("step 2") && msg.contains("1e-3"), "{msg}");
}

#[test]
fn checkpoints_follow_epochs_and_reject_other_configs() {
    let (model, mut train) = tiny();
    train.patches_per_scene = 3;
    train.total_epochs = 4;
    train.checkpoint_every = 2;
    let scene = smooth_scene(LfShape::new(3, 3, 20, 20, 3), 5);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(model, train, vec![scene], Some(dir.path().to_path_buf())).unwrap();
    let mut logs = Vec::new();
    t.run(|l| logs.push(l.to_string())).unwrap();
    assert_eq!(t.step_count(), 12);
    assert!(dir.path().join("best").join(MODEL_FILE).is_file());
    assert!(dir.path().join("epoch_2").join(STATE_FILE).is_file());
    assert!(dir.path().join("epoch_4").join(STATE_FILE).is_file());
    assert!(!dir.path().join("epoch_1").exists());
    let fields: Vec<&str> = logs[0]
        .split_whitespace()
        .map(|f| f.split('=').next().unwrap())
        .collect();
    assert_eq!(fields, ["step", "epoch", "loss", "lr"]);

    let other = smooth_scene(LfShape::new(5, 5, 20, 20, 3), 6);
    assert!(Trainer::resume(&dir.path().join("best"), vec![other], None).is_err());
}

#[test]
fn every_ablation_trains_one_step() {
    let (model, train) = tiny();
    let scene = smooth_scene(LfShape::new(3, 3, 20, 20, 3), 7);
    for ab in Ablation::ALL {
        let mut t =
            Trainer::new(model.ablation(ab), train.clone(), vec![scene.clone()], None).unwrap();
        let before = t.params.clone();
        let log = t.step().unwrap();
        assert!(log.loss.is_finite(), "{}", ab.label());
        assert_ne!(t.params, before, "{}", ab.label());
    }
}

#[test]
fn learning_rate_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(0, &cfg), 1e-3);
    assert_eq!(lr_at(199, &cfg), 1e-3);
    assert!((lr_at(200, &cfg) - 1e-4).abs() < 1e-18);
    assert!((lr_at(250, &cfg) - 1e-4).abs() < 1e-18);
    assert!((lr_at(299, &cfg) - 1e-4).abs() < 1e-18);
    assert!((lr_at(300, &cfg) - 1e-5).abs() < 1e-19);
    assert!((lr_at(350, &cfg) - 1e-5).abs() < 1e-19);
    assert!((lr_at(400, &cfg) - 1e-6).abs() < 1e-20);
}

#[test]
fn adam_matches_hand_stepped_oracle() {
    // f(p) = (p - 3)^2, gradient 2 (p - 3).
    let lr = 0.1;
    let (mut p, mut m, mut v) = ([0.5f64], [0.0f64], [0.0f64]);
    let (mut hp, mut hm, mut hv) = (0.5f64, 0.0f64, 0.0f64);
    for t in 1..=25u64 {
        let g = 2.0 * (p[0] - 3.0);
        adam_update(&mut p, &[g], &mut m, &mut v, t, lr);
        let hg = 2.0 * (hp - 3.0);
        hm = 0.9 * hm + 0.1 * hg;
        hv = 0.999 * hv + 0.001 * hg * hg;
        let mh = hm / (1.0 - 0.9f64.powi(t as i32));
        let vh = hv / (1.0 - 0.999f64.powi(t as i32));
        hp -= lr * mh / (vh.sqrt() + 1e-8);
        assert!((p[0] - hp).abs() <= 1e-12, "t={t}");
    }
}

#[test]
fn l1_loss_cases() {
    let s = LfShape::new(2, 2, 5, 5, 3);
    let gt = random_lf(s, 8);
    let gt = LightField::from_fn(s, |(u, v, x, y, c)| 0.8 * gt.get(u, v, x, y, c)).unwrap();
    assert_eq!(l1_loss(&gt, &gt).unwrap(), 0.0);
    let up = LightField::from_fn(s, |(u, v, x, y, c)| gt.get(u, v, x, y, c) + 0.1).unwrap();
    assert!((l1_loss(&up, &gt).unwrap() - 0.1).abs() <= 1e-9);
    let other = random_lf(s, 9);
    let oracle = other
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / s.len() as f64;
    assert!((l1_loss(&other, &gt).unwrap() - oracle).abs() <= 1e-9);
}
