//! Straight-line reference implementations used as oracles. They index
//! arrays directly and share no code with the library beyond data types.
#![allow(dead_code)]

use lfdeblur::lf::{Image, LfShape, LightField};
use lfdeblur::model::{Head, ModelConfig, ModelParams, SpatialKernel};
use lfdeblur::nn::{Conv2d, Linear, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_lf(shape: LfShape, seed: u64) -> LightField {
    let mut r = rng(seed);
    LightField::from_fn(shape, |_| r.gen::<f64>()).unwrap()
}

pub fn random_image(h: usize, w: usize, c: usize, r: &mut ChaCha8Rng) -> Image {
    Image::from_fn((h, w, c), |_| r.gen::<f64>()).unwrap()
}

/// Dense `(u, v, x, y, c)` array.
#[derive(Clone, Debug)]
pub struct Arr {
    pub s: LfShape,
    pub d: Vec<f64>,
}

impl Arr {
    pub fn zeros(s: LfShape) -> Self {
        Self {
            s,
            d: vec![0.0; s.len()],
        }
    }

    pub fn from_lf(lf: &LightField) -> Self {
        let s = lf.shape();
        let mut a = Self::zeros(s);
        for u in 0..s.u {
            for v in 0..s.v {
                for x in 0..s.x {
                    for y in 0..s.y {
                        for c in 0..s.c {
                            a.set(u, v, x, y, c, lf.get(u, v, x, y, c));
                        }
                    }
                }
            }
        }
        a
    }

    fn at(&self, u: usize, v: usize, x: usize, y: usize, c: usize) -> usize {
        (((u * self.s.v + v) * self.s.x + x) * self.s.y + y) * self.s.c + c
    }

    pub fn get(&self, u: usize, v: usize, x: usize, y: usize, c: usize) -> f64 {
        self.d[self.at(u, v, x, y, c)]
    }

    pub fn set(&mut self, u: usize, v: usize, x: usize, y: usize, c: usize, val: f64) {
        let i = self.at(u, v, x, y, c);
        self.d[i] = val;
    }

    pub fn relu(mut self) -> Self {
        for v in &mut self.d {
            *v = v.max(0.0);
        }
        self
    }
}

/// `w` stored `(k, k, cin, cout)`.
fn w4(
    w: &[f64],
    k: usize,
    cin: usize,
    cout: usize,
    i: usize,
    j: usize,
    ci: usize,
    co: usize,
) -> f64 {
    let _ = k;
    w[((i * k + j) * cin + ci) * cout + co]
}

/// Per-view spatial convolution with replicate padding; `kernel(u, v)`
/// returns the `(k, k, cin, cout)` weights for that view.
pub fn spatial_conv(
    a: &Arr,
    k: usize,
    cout: usize,
    kernel: &dyn Fn(usize, usize) -> Vec<f64>,
    bias: Option<&[f64]>,
) -> Arr {
    let s = a.s;
    let r = k as isize / 2;
    let mut out = Arr::zeros(LfShape { c: cout, ..s });
    for u in 0..s.u {
        for v in 0..s.v {
            let w = kernel(u, v);
            for x in 0..s.x {
                for y in 0..s.y {
                    for co in 0..cout {
                        let mut acc = bias.map_or(0.0, |b| b[co]);
                        for i in 0..k {
                            for j in 0..k {
                                let sx = (x as isize + i as isize - r).clamp(0, s.x as isize - 1)
                                    as usize;
                                let sy = (y as isize + j as isize - r).clamp(0, s.y as isize - 1)
                                    as usize;
                                for ci in 0..s.c {
                                    acc += w4(&w, k, s.c, cout, i, j, ci, co)
                                        * a.get(u, v, sx, sy, ci);
                                }
                            }
                        }
                        out.set(u, v, x, y, co, acc);
                    }
                }
            }
        }
    }
    out
}

pub fn conv(a: &Arr, c: &Conv2d<f64>) -> Arr {
    let k = c.weight.shape[0];
    let w = c.weight.data.clone();
    spatial_conv(
        a,
        k,
        c.weight.shape[3],
        &|_, _| w.clone(),
        c.bias.as_ref().map(|b| b.data.as_slice()),
    )
}

/// Convolution across the view grid, zero-padded, at each pixel.
pub fn angular_conv(a: &Arr, w: &Tensor<f64>, b: &Tensor<f64>) -> Arr {
    let s = a.s;
    let (ka, cout) = (w.shape[0], w.shape[3]);
    let r = ka as isize / 2;
    let mut out = Arr::zeros(LfShape { c: cout, ..s });
    for u in 0..s.u {
        for v in 0..s.v {
            for x in 0..s.x {
                for y in 0..s.y {
                    for co in 0..cout {
                        let mut acc = b.data[co];
                        for i in 0..ka {
                            for j in 0..ka {
                                let su = u as isize + i as isize - r;
                                let sv = v as isize + j as isize - r;
                                if su < 0 || sv < 0 || su >= s.u as isize || sv >= s.v as isize {
                                    continue;
                                }
                                for ci in 0..s.c {
                                    acc += w4(&w.data, ka, s.c, cout, i, j, ci, co)
                                        * a.get(su as usize, sv as usize, x, y, ci);
                                }
                            }
                        }
                        out.set(u, v, x, y, co, acc);
                    }
                }
            }
        }
    }
    out
}

/// `y = x W + b` for a single row, `W` stored `(d_in, d_out)`.
pub fn linear(l: &Linear<f64>, x: &[f64]) -> Vec<f64> {
    let (din, dout) = (l.weight.shape[0], l.weight.shape[1]);
    assert_eq!(x.len(), din);
    (0..dout)
        .map(|o| {
            l.bias.data[o]
                + (0..din)
                    .map(|i| x[i] * l.weight.data[i * dout + o])
                    .sum::<f64>()
        })
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

/// Reference forward of the whole network.
pub fn reference_forward(p: &ModelParams<f64>, cfg: &ModelConfig, lf: &LightField) -> Arr {
    let input = Arr::from_lf(lf);
    let s = input.s;
    let c = cfg.channels;
    let mut f = conv(&input, &p.stem).relu();
    for block in &p.blocks {
        let k = cfg.kernel_size;
        let kernel = |u: usize, v: usize| -> Vec<f64> {
            match &block.spatial {
                SpatialKernel::Static(t) => t.data.clone(),
                SpatialKernel::Adaptive(g) => {
                    let mut pooled = vec![0.0; c];
                    for x in 0..s.x {
                        for y in 0..s.y {
                            for ch in 0..c {
                                pooled[ch] += f.get(u, v, x, y, ch) / (s.x * s.y) as f64;
                            }
                        }
                    }
                    let h1 = relu(linear(&g.fc1, &pooled));
                    let h2 = relu(linear(&g.fc2, &h1));
                    linear(&g.kernel_gen, &h2)
                }
            }
        };
        let spatial = spatial_conv(&f, k, c, &kernel, None).relu();
        let ang = angular_conv(&spatial, &block.angular.weight, &block.angular.bias).relu();
        for (o, a) in f.d.iter_mut().zip(&ang.d) {
            *o += a;
        }
    }
    let mut out = match &p.head {
        Head::Plain(cv) => conv(&f, cv),
        Head::Dpva(h) => {
            let n = s.u * s.v;
            let ve = conv(&f, &h.expand);
            let dp = conv(&f, &h.dp);
            let mut sharp = Arr::zeros(s.with_c(c));
            for u in 0..s.u {
                for v in 0..s.v {
                    let pv = u * s.v + v;
                    for x in 0..s.x {
                        for y in 0..s.y {
                            // Channel `pv` of every view, in view order.
                            let mut att_in: Vec<f64> =
                                (0..n).map(|q| dp.get(q / s.v, q % s.v, x, y, pv)).collect();
                            if cfg.use_ape {
                                att_in.push(u as f64);
                                att_in.push(v as f64);
                            }
                            let hidden = relu(linear(&h.attention_hidden, &att_in));
                            let w = linear(&h.attention_out, &hidden);
                            for ch in 0..c {
                                let mut acc = 0.0;
                                for b in 0..n {
                                    acc += ve.get(u, v, x, y, b * c + ch) * w[b * c + ch];
                                }
                                sharp.set(u, v, x, y, ch, acc);
                            }
                        }
                    }
                }
            }
            conv(&sharp, &h.out)
        }
    };
    if cfg.residual {
        for (o, i) in out.d.iter_mut().zip(&input.d) {
            *o += i;
        }
    }
    out
}

/// Tiny config used by the forward oracle.
pub fn tiny_config(u: usize, v: usize, c: usize) -> ModelConfig {
    ModelConfig {
        u,
        v,
        channels: c,
        descriptor_width: 3,
        num_blocks: 2,
        attention_hidden: 8,
        residual: true,
        ..ModelConfig::default()
    }
}

// ---- metric oracles ----

pub fn mse_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s / a.len() as f64
}

pub fn psnr_oracle(a: &[f64], b: &[f64]) -> f64 {
    10.0 * (1.0 / mse_oracle(a, b)).log10()
}

pub fn ncc_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
    let sb = (b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n).sqrt();
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n
        / (sa * sb)
}

fn gray(img: &Image) -> Vec<Vec<f64>> {
    let (h, w, c) = img.dim();
    (0..h)
        .map(|r| {
            (0..w)
                .map(|q| {
                    if c == 3 {
                        0.299 * img.get(r, q, 0)
                            + 0.587 * img.get(r, q, 1)
                            + 0.114 * img.get(r, q, 2)
                    } else {
                        (0..c).map(|k| img.get(r, q, k)).sum::<f64>() / c as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Direct 2-D windowed SSIM: for every valid window position, weighted
/// means, variances and covariance from an explicit 11x11 Gaussian.
pub fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let (ga, gb) = (gray(a), gray(b));
    let (h, w) = (ga.len(), ga[0].len());
    let n = 11;
    let mut win = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i][j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += win[i][j];
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0.0;
    for r in 0..=h - n {
        for q in 0..=w - n {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    ma += win[i][j] / total * ga[r + i][q + j];
                    mb += win[i][j] / total * gb[r + i][q + j];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let wt = win[i][j] / total;
                    let (x, y) = (ga[r + i][q + j] - ma, gb[r + i][q + j] - mb);
                    va += wt * x * x;
                    vb += wt * y * y;
                    cov += wt * x * y;
                }
            }
            sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    sum / count
}

/// Per-window least squares `min_a |a p - g|^2` over 20x20 windows with
/// stride 10, averaged, divided by the variance of `g`.
pub fn lmse_oracle(p: &Image, g: &Image) -> f64 {
    let (h, w, c) = p.dim();
    let all: Vec<f64> = g.as_slice().to_vec();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
    let mut scores = Vec::new();
    let mut r0 = 0;
    while r0 + 20 <= h {
        let mut q0 = 0;
        while q0 + 20 <= w {
            let mut pv = Vec::new();
            let mut gv = Vec::new();
            for r in r0..r0 + 20 {
                for q in q0..q0 + 20 {
                    for k in 0..c {
                        pv.push(p.get(r, q, k));
                        gv.push(g.get(r, q, k));
                    }
                }
            }
            let num: f64 = pv.iter().zip(&gv).map(|(a, b)| a * b).sum();
            let den: f64 = pv.iter().map(|a| a * a).sum();
            let alpha = if den > 0.0 { num / den } else { 0.0 };
            let e: f64 = pv
                .iter()
                .zip(&gv)
                .map(|(a, b)| (alpha * a - b).powi(2))
                .sum::<f64>()
                / pv.len() as f64;
            scores.push(e);
            q0 += 10;
        }
        r0 += 10;
    }
    scores.iter().sum::<f64>() / scores.len() as f64 / var
}

/// Shifted copies of one random image, paired the way EPIs slice:
/// `L(u, v, x, y) = B(x + v*d, y + u*d)` (indices wrap), so horizontal EPIs
/// `(v, x)` and vertical EPIs `(u, y)` are straight lines of slope `d`.
pub fn shifted_copies(shape: LfShape, d: isize, seed: u64) -> LightField {
    let mut r = rng(seed);
    let base: Vec<f64> = (0..shape.x * shape.y * shape.c).map(|_| r.gen()).collect();
    LightField::from_fn(shape, |(u, v, x, y, c)| {
        let sx = (x as isize + v as isize * d).rem_euclid(shape.x as isize) as usize;
        let sy = (y as isize + u as isize * d).rem_euclid(shape.y as isize) as usize;
        base[(sx * shape.y + sy) * shape.c + c]
    })
    .unwrap()
}

/// Every row of `epi` (angular index `a`) equals row 0 shifted by `a*slope`,
/// wherever the shifted column is in range.
pub fn epi_rows_shifted(epi: &Image, slope: isize) -> bool {
    let (rows, cols, ch) = epi.dim();
    for a in 0..rows {
        for s in 0..cols {
            let t = s as isize + a as isize * slope;
            if t < 0 || t >= cols as isize {
                continue;
            }
            for c in 0..ch {
                if epi.get(a, s, c) != epi.get(0, t as usize, c) {
                    return false;
                }
            }
        }
    }
    true
}

/// Every horizontal and vertical EPI is a straight-line image of slope
/// `slope`.
pub fn all_epis_have_slope(lf: &LightField, slope: isize) -> bool {
    use lfdeblur::lf::EpiOrientation::{Horizontal, Vertical};
    let s = lf.shape();
    (0..s.u).all(|u| (0..s.y).all(|y| epi_rows_shifted(&lf.epi(Horizontal, u, y).unwrap(), slope)))
        && (0..s.v)
            .all(|v| (0..s.x).all(|x| epi_rows_shifted(&lf.epi(Vertical, v, x).unwrap(), slope)))
}

/// `micro_lens(x, y)[u, v] == sai(u, v)[x, y]` at every index.
pub fn micro_lens_sai_consistent(lf: &LightField) -> bool {
    let s = lf.shape();
    let sais: Vec<Image> = lf.sais().map(|(_, img)| img).collect();
    for x in 0..s.x {
        for y in 0..s.y {
            let m = lf.micro_lens(x, y).unwrap();
            for u in 0..s.u {
                for v in 0..s.v {
                    for c in 0..s.c {
                        let a = m.get(u, v, c);
                        if a != sais[u * s.v + v].get(x, y, c) || a != lf.get(u, v, x, y, c) {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}
