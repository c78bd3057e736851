//! Blurred light fields from sharp ones: every view is warped along a camera
//! trajectory and the warped frames are averaged.
//!
//! Geometry: each view sits at `(du, dv) * baseline` from the rig center,
//! with `du = u - (U-1)/2`. All views see one fronto-parallel plane, at which
//! views are aligned (zero disparity); `reference_disparity` converts
//! normalized translation to pixels. Under that model a lateral translation
//! moves every view identically, while axial translation scales each view
//! about a view-dependent center, and rotation adds a view-dependent
//! translation `omega x c`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lf::{Image, LfError, LightField};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("trajectory needs at least one sample, got {0}")]
    NoSamples(usize),
    #[error(
        "motion magnitudes must be finite and non-negative (translation {trans}, rotation {rot})"
    )]
    BadMagnitude { trans: f64, rot: f64 },
    #[error("degrees of freedom must be 3 or 6, got {0}")]
    BadDof(u8),
    #[error("pose {index} rotates the camera in a 3-DOF trajectory")]
    RotationIn3Dof { index: usize },
    #[error("pose is not finite")]
    NonFinite,
    #[error("scale 1 + tz = {0} is not positive")]
    DegenerateScale(f64),
    #[error("trajectory line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    LightField(#[from] LfError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CameraPose {
    /// `(tx, ty, tz)`; `tx` is horizontal (along columns `y`), `ty`
    /// vertical (along rows `x`), `tz` along the optical axis.
    pub translation: [f64; 3],
    /// `(rx, ry, rz)` in radians.
    pub rotation: [f64; 3],
}

impl CameraPose {
    pub const IDENTITY: CameraPose = CameraPose {
        translation: [0.0; 3],
        rotation: [0.0; 3],
    };

    pub fn translation(tx: f64, ty: f64, tz: f64) -> Self {
        Self {
            translation: [tx, ty, tz],
            rotation: [0.0; 3],
        }
    }

    fn is_finite(&self) -> bool {
        self.translation
            .iter()
            .chain(&self.rotation)
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraTrajectory {
    poses: Vec<CameraPose>,
    dof: u8,
    baseline: f64,
}

pub const DEFAULT_SAMPLES: usize = 20;
pub const DEFAULT_BASELINE: f64 = 0.05;

impl CameraTrajectory {
    pub fn new(poses: Vec<CameraPose>, dof: u8, baseline: f64) -> Result<Self> {
        if dof != 3 && dof != 6 {
            return Err(SynthError::BadDof(dof));
        }
        if poses.is_empty() {
            return Err(SynthError::NoSamples(0));
        }
        if !baseline.is_finite() || poses.iter().any(|p| !p.is_finite()) {
            return Err(SynthError::NonFinite);
        }
        if dof == 3 {
            if let Some(index) = poses.iter().position(|p| p.rotation != [0.0; 3]) {
                return Err(SynthError::RotationIn3Dof { index });
            }
        }
        Ok(Self {
            poses,
            dof,
            baseline,
        })
    }

    pub fn with_baseline(mut self, baseline: f64) -> Self {
        self.baseline = baseline;
        self
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn dof(&self) -> u8 {
        self.dof
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Sidecar text: `#` comment lines, then one pose per line as
    /// `tx ty tz rx ry rz`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# dof={} samples={} baseline={}\n",
            self.dof,
            self.len(),
            self.baseline
        );
        for p in &self.poses {
            // `+ 0.0` prints negative zero as `0`.
            let [tx, ty, tz] = p.translation.map(|t| t + 0.0);
            let [rx, ry, rz] = p.rotation.map(|r| r + 0.0);
            let _ = writeln!(out, "{tx} {ty} {tz} {rx} {ry} {rz}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut dof = 6;
        let mut baseline = DEFAULT_BASELINE;
        let mut poses = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                for kv in comment.split_whitespace() {
                    let parse_err = |msg: String| SynthError::Parse { line: i + 1, msg };
                    match kv.split_once('=') {
                        Some(("dof", v)) => {
                            dof = v.parse().map_err(|e| parse_err(format!("dof: {e}")))?
                        }
                        Some(("baseline", v)) => {
                            baseline = v.parse().map_err(|e| parse_err(format!("baseline: {e}")))?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| SynthError::Parse {
                    line: i + 1,
                    msg: format!("{e}"),
                })?;
            let [tx, ty, tz, rx, ry, rz] = nums[..] else {
                return Err(SynthError::Parse {
                    line: i + 1,
                    msg: format!("expected 6 numbers, found {}", nums.len()),
                });
            };
            poses.push(CameraPose {
                translation: [tx, ty, tz],
                rotation: [rx, ry, rz],
            });
        }
        Self::new(poses, dof, baseline)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Linear path from the identity to a uniform random endpoint.
pub fn sample_trajectory(
    seed: u64,
    dof: u8,
    trans_mag: f64,
    rot_mag: f64,
    samples: usize,
) -> Result<CameraTrajectory> {
    if samples < 1 {
        return Err(SynthError::NoSamples(samples));
    }
    if dof != 3 && dof != 6 {
        return Err(SynthError::BadDof(dof));
    }
    let ok = |m: f64| m.is_finite() && m >= 0.0;
    if !ok(trans_mag) || !ok(rot_mag) {
        return Err(SynthError::BadMagnitude {
            trans: trans_mag,
            rot: rot_mag,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |mag: f64| {
        if mag > 0.0 {
            rng.gen_range(-mag..=mag)
        } else {
            0.0
        }
    };
    let end_t = [draw(trans_mag), draw(trans_mag), draw(trans_mag)];
    let end_r = if dof == 6 {
        [draw(rot_mag), draw(rot_mag), draw(rot_mag)]
    } else {
        [0.0; 3]
    };
    let poses = (0..samples)
        .map(|i| {
            let a = if samples == 1 {
                0.0
            } else {
                i as f64 / (samples - 1) as f64
            };
            CameraPose {
                translation: end_t.map(|e| a * e),
                rotation: end_r.map(|e| a * e),
            }
        })
        .collect();
    CameraTrajectory::new(poses, dof, DEFAULT_BASELINE)
}

/// Angular offset of view `(u, v)` from the grid center.
pub fn view_offset(u: usize, v: usize, nu: usize, nv: usize) -> (f64, f64) {
    (
        u as f64 - (nu as f64 - 1.0) / 2.0,
        v as f64 - (nv as f64 - 1.0) / 2.0,
    )
}

/// Bilinear sample at fractional `(r, c)` with replicate boundary.
fn sample(img: &Image, r: f64, c: f64, ch: usize) -> f64 {
    let (h, w, _) = img.dim();
    let r = r.clamp(0.0, (h - 1) as f64);
    let c = c.clamp(0.0, (w - 1) as f64);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    let (r1, c1) = ((r0 + 1).min(h - 1), (c0 + 1).min(w - 1));
    let lerp = |a: f64, b: f64, f: f64| a * (1.0 - f) + b * f;
    let top = lerp(img.get(r0, c0, ch), img.get(r0, c1, ch), fc);
    let bottom = lerp(img.get(r1, c0, ch), img.get(r1, c1, ch), fc);
    lerp(top, bottom, fr)
}

/// Resample one view as seen from `pose`.
pub fn warp_view(
    image: &Image,
    pose: &CameraPose,
    view_offset: (f64, f64),
    baseline: f64,
    reference_disparity: f64,
) -> Result<Image> {
    if !pose.is_finite() {
        return Err(SynthError::NonFinite);
    }
    let (h, w, nc) = image.dim();
    let d = reference_disparity;
    let center = [view_offset.0 * baseline, view_offset.1 * baseline];
    let [rx, ry, rz] = pose.rotation;
    // omega x c with c = (cx, cy, 0).
    let t = [
        pose.translation[0] - rz * center[1],
        pose.translation[1] + rz * center[0],
        pose.translation[2] + rx * center[1] - ry * center[0],
    ];
    let s = 1.0 + t[2];
    if s <= 0.0 {
        return Err(SynthError::DegenerateScale(s));
    }
    let zoom = [center[0] * d, center[1] * d];
    let hinv = if pose.rotation == [0.0; 3] {
        None
    } else {
        let f = h.max(w) as f64;
        let k = Matrix3::new(f, 0.0, 0.0, 0.0, f, 0.0, 0.0, 0.0, 1.0);
        let kinv = Matrix3::new(1.0 / f, 0.0, 0.0, 0.0, 1.0 / f, 0.0, 0.0, 0.0, 1.0);
        let r = Matrix3::new(1.0, -rz, ry, rz, 1.0, -rx, -ry, rx, 1.0);
        let hom = k * r * kinv;
        Some(hom.try_inverse().ok_or(SynthError::DegenerateScale(0.0))?)
    };
    let (cr, cc) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let inv_s = 1.0 / s;
    // Camera frame: first axis horizontal (columns), second vertical (rows).
    let out = Image::from_fn((h, w, nc), |(i, j, ch)| {
        let (px, py) = (j as f64 - cc, i as f64 - cr);
        let mut q = [
            px + (inv_s - 1.0) * (px - zoom[0]) - d * t[0] * inv_s,
            py + (inv_s - 1.0) * (py - zoom[1]) - d * t[1] * inv_s,
        ];
        if let Some(hinv) = &hinv {
            let src = hinv * Vector3::new(q[0], q[1], 1.0);
            q = [src[0] / src[2], src[1] / src[2]];
        }
        sample(image, q[1] + cr, q[0] + cc, ch)
    })?;
    Ok(out)
}

/// Average of the warped views over the trajectory, clamped to `[0, 1]`.
pub fn synthesize_blur(
    lf: &LightField,
    traj: &CameraTrajectory,
    reference_disparity: f64,
) -> Result<LightField> {
    if traj.is_empty() {
        return Err(SynthError::NoSamples(0));
    }
    let shape = lf.shape();
    let inv_t = 1.0 / traj.len() as f64;
    let mut views = Vec::with_capacity(shape.views());
    for ((u, v), sai) in lf.sais() {
        let offset = view_offset(u, v, shape.u, shape.v);
        let warp = |pose| warp_view(&sai, pose, offset, traj.baseline(), reference_disparity);
        let first = warp(&traj.poses()[0])?;
        // Averaging deviations from the first frame keeps a static trajectory exact.
        let mut acc = vec![0.0; sai.as_slice().len()];
        for pose in &traj.poses()[1..] {
            let frame = warp(pose)?;
            for ((a, &x), &f) in acc.iter_mut().zip(frame.as_slice()).zip(first.as_slice()) {
                *a += x - f;
            }
        }
        let data = acc
            .into_iter()
            .zip(first.as_slice())
            .map(|(a, &f)| (f + a * inv_t).clamp(0.0, 1.0))
            .collect();
        let arr = ndarray::Array3::from_shape_vec(sai.dim(), data).expect("view dimensions");
        views.push(Image::new(arr)?);
    }
    Ok(LightField::from_sais(shape.u, shape.v, &views)?)
}
