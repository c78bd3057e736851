//! PSNR, SSIM, NCC and LMSE. Light-field scores are per-view scores averaged
//! over all views. Values are compared in `[0, 1]` floating point.
//!
//! Conventions: SSIM uses an 11x11 Gaussian window (sigma 1.5) over valid
//! positions only, K1 = 0.01, K2 = 0.03, L = 1, on luminance. LMSE slides a
//! 20x20 window with stride 10, fits one scale per window jointly over the
//! channels, and divides the mean window MSE by the variance of `gt`.

use std::fmt;

use thiserror::Error;

use crate::lf::{Image, LightField};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const LMSE_WINDOW: usize = 20;
pub const LMSE_STRIDE: usize = 10;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: pred {pred:?}, gt {gt:?}")]
    ShapeMismatch { pred: Vec<usize>, gt: Vec<usize> },
    #[error("{h}x{w} image is smaller than the {window}x{window} window")]
    TooSmall { h: usize, w: usize, window: usize },
    #[error("{0} is undefined for a constant input")]
    Undefined(&'static str),
    #[error("view ({u}, {v}): {source}")]
    View {
        u: usize,
        v: usize,
        #[source]
        source: Box<MetricError>,
    },
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

fn same_len(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(MetricError::ShapeMismatch {
            pred: vec![pred.len()],
            gt: vec![gt.len()],
        });
    }
    Ok(())
}

fn same_image_shape(pred: &Image, gt: &Image) -> Result<()> {
    if pred.dim() != gt.dim() {
        let (a, b) = (pred.dim(), gt.dim());
        return Err(MetricError::ShapeMismatch {
            pred: vec![a.0, a.1, a.2],
            gt: vec![b.0, b.1, b.2],
        });
    }
    Ok(())
}

pub fn mse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    same_len(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / pred.len() as f64)
}

/// `10 log10(1 / MSE)`; `+inf` when the inputs are identical.
pub fn psnr_values(pred: &[f64], gt: &[f64]) -> Result<f64> {
    let m = mse(pred, gt)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    })
}

/// PSNR over every sample of the light field.
pub fn psnr(pred: &LightField, gt: &LightField) -> Result<f64> {
    check_lf(pred, gt)?;
    psnr_values(pred.as_slice(), gt.as_slice())
}

fn check_lf(pred: &LightField, gt: &LightField) -> Result<()> {
    if pred.shape() != gt.shape() {
        let (a, b) = (pred.shape().as_tuple(), gt.shape().as_tuple());
        return Err(MetricError::ShapeMismatch {
            pred: vec![a.0, a.1, a.2, a.3, a.4],
            gt: vec![b.0, b.1, b.2, b.3, b.4],
        });
    }
    Ok(())
}

/// Zero-mean normalized cross-correlation over all samples.
pub fn ncc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    same_len(pred, gt)?;
    let constant = |x: &[f64]| x.iter().all(|&v| v == x[0]);
    if pred.is_empty() || constant(pred) || constant(gt) {
        return Err(MetricError::Undefined("NCC"));
    }
    let n = pred.len() as f64;
    let (mp, mg) = (pred.iter().sum::<f64>() / n, gt.iter().sum::<f64>() / n);
    let (mut cov, mut vp, mut vg) = (0.0, 0.0, 0.0);
    for (&a, &b) in pred.iter().zip(gt) {
        let (da, db) = (a - mp, b - mg);
        cov += da * db;
        vp += da * da;
        vg += db * db;
    }
    if vp == 0.0 || vg == 0.0 {
        return Err(MetricError::Undefined("NCC"));
    }
    Ok((cov / (vp.sqrt() * vg.sqrt())).clamp(-1.0, 1.0))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..n).map(|t| g[t] * x[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..n).map(|t| g[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

fn to_gray(img: &Image) -> Image {
    if img.dim().2 == 1 {
        img.clone()
    } else {
        img.luminance()
    }
}

/// Mean SSIM of the luminance planes.
pub fn ssim(pred: &Image, gt: &Image) -> Result<f64> {
    same_image_shape(pred, gt)?;
    let (h, w, _) = pred.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            h,
            w,
            window: SSIM_WINDOW,
        });
    }
    let (a, b) = (to_gray(pred), to_gray(gt));
    let (a, b) = (a.as_slice(), b.as_slice());
    let g = gaussian_window();
    let prod =
        |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let (va, vb, cov) = (aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb);
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Local scale-invariant MSE, normalized by the variance of `gt`.
pub fn lmse(pred: &Image, gt: &Image) -> Result<f64> {
    same_image_shape(pred, gt)?;
    let (h, w, c) = pred.dim();
    if h < LMSE_WINDOW || w < LMSE_WINDOW {
        return Err(MetricError::TooSmall {
            h,
            w,
            window: LMSE_WINDOW,
        });
    }
    let (p, g) = (pred.as_slice(), gt.as_slice());
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(MetricError::Undefined("LMSE"));
    }
    let mut scores = Vec::new();
    for r0 in (0..=h - LMSE_WINDOW).step_by(LMSE_STRIDE) {
        for c0 in (0..=w - LMSE_WINDOW).step_by(LMSE_STRIDE) {
            let idx = |r: usize, col: usize, ch: usize| (r * w + col) * c + ch;
            let (mut pg, mut pp) = (0.0, 0.0);
            for r in r0..r0 + LMSE_WINDOW {
                for col in c0..c0 + LMSE_WINDOW {
                    for ch in 0..c {
                        let (a, b) = (p[idx(r, col, ch)], g[idx(r, col, ch)]);
                        pg += a * b;
                        pp += a * a;
                    }
                }
            }
            let alpha = if pp > 0.0 { pg / pp } else { 0.0 };
            let mut err = 0.0;
            for r in r0..r0 + LMSE_WINDOW {
                for col in c0..c0 + LMSE_WINDOW {
                    for ch in 0..c {
                        let d = alpha * p[idx(r, col, ch)] - g[idx(r, col, ch)];
                        err += d * d;
                    }
                }
            }
            scores.push(err / (LMSE_WINDOW * LMSE_WINDOW * c) as f64);
        }
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64 / var)
}

/// All four scores for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub ncc: f64,
    pub lmse: f64,
}

/// Per-view metrics averaged over the views of `pred` and `gt`.
pub fn evaluate(name: &str, pred: &LightField, gt: &LightField) -> Result<SceneMetrics> {
    check_lf(pred, gt)?;
    let mut sums = [0.0; 4];
    let mut count = 0.0;
    for (((u, v), p), (_, g)) in pred.sais().zip(gt.sais()) {
        let per_view = || -> Result<[f64; 4]> {
            Ok([
                psnr_values(p.as_slice(), g.as_slice())?,
                ssim(&p, &g)?,
                ncc(p.as_slice(), g.as_slice())?,
                lmse(&p, &g)?,
            ])
        };
        let scores = per_view().map_err(|e| MetricError::View {
            u,
            v,
            source: Box::new(e),
        })?;
        for (s, x) in sums.iter_mut().zip(scores) {
            *s += x;
        }
        count += 1.0;
    }
    let [psnr, ssim, ncc, lmse] = sums.map(|s| s / count);
    Ok(SceneMetrics {
        name: name.to_string(),
        psnr,
        ssim,
        ncc,
        lmse,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub per_scene: Vec<SceneMetrics>,
}

impl MetricReport {
    pub fn mean(&self) -> SceneMetrics {
        let n = self.per_scene.len() as f64;
        let avg = |f: fn(&SceneMetrics) -> f64| self.per_scene.iter().map(f).sum::<f64>() / n;
        SceneMetrics {
            name: "MEAN".into(),
            psnr: avg(|s| s.psnr),
            ssim: avg(|s| s.ssim),
            ncc: avg(|s| s.ncc),
            lmse: avg(|s| s.lmse),
        }
    }
}

fn fmt_row(f: &mut fmt::Formatter<'_>, s: &SceneMetrics) -> fmt::Result {
    let psnr = if s.psnr.is_infinite() {
        "inf".to_string()
    } else {
        format!("{:.4}", s.psnr)
    };
    writeln!(
        f,
        "{:<20} {:>10} {:>8.4} {:>8.4} {:>8.4}",
        s.name, psnr, s.ssim, s.ncc, s.lmse
    )
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>10} {:>8} {:>8} {:>8}",
            "name", "psnr", "ssim", "ncc", "lmse"
        )?;
        for s in &self.per_scene {
            fmt_row(f, s)?;
        }
        if !self.per_scene.is_empty() {
            fmt_row(f, &self.mean())?;
        }
        Ok(())
    }
}
