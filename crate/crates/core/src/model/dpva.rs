//! Depth-perception view attention head with angular position embedding.
//!
//! Channel block `b = û·V + v̂` of a `U·V·C` feature holds channels
//! `[b·C, (b+1)·C)`.

use rayon::prelude::*;

use super::params::DpvaParams;
use super::{ModelConfig, ModelError};
use crate::lf::LfShape;
use crate::nn::{
    add_assign, col2im_add, gemm, im2col, relu_backward_inplace, relu_inplace, Field, Mat, Real,
};

/// `out[p][px][q] = in[q][px][p]`: each view collects, from every view, the
/// channel named by its own flattened angular index. The map is its own
/// inverse.
pub fn reorganize_dp<T: Real>(f_dp: &Field<T>) -> Result<Field<T>, ModelError> {
    let s = f_dp.shape();
    let n = s.views();
    if s.c != n {
        return Err(ModelError::ShapeMismatch(format!(
            "depth-perception features need {n} channels, got {}",
            s.c
        )));
    }
    let px = s.x * s.y;
    let mut out = Field::zeros(s);
    let src = f_dp.as_slice();
    let dst = out.as_mut_slice();
    for (p, view) in dst.chunks_exact_mut(px * n).enumerate() {
        for (i, pixel) in view.chunks_exact_mut(n).enumerate() {
            for (q, d) in pixel.iter_mut().enumerate() {
                *d = src[(q * px + i) * n + p];
            }
        }
    }
    Ok(out)
}

/// Append the raw angular coordinates `u` and `v` as two constant channels.
pub fn apply_ape<T: Real>(f_ndp: &[T], channels: usize, u: usize, v: usize) -> Vec<T> {
    let (tu, tv) = (T::from_f64_lossy(u as f64), T::from_f64_lossy(v as f64));
    let mut out = Vec::with_capacity(f_ndp.len() / channels * (channels + 2));
    for px in f_ndp.chunks(channels) {
        out.extend_from_slice(px);
        out.push(tu);
        out.push(tv);
    }
    out
}

/// `sharp[i, c] = sum_b ve[i, b*C + c] * w[i, b*C + c]` for one view.
pub fn fuse<T: Real>(ve: &[T], w: &[T], views: usize, c: usize) -> Vec<T> {
    let mut sharp = vec![T::zero(); ve.len() / views];
    fuse_into(ve, w, views, c, &mut sharp);
    sharp
}

/// [`fuse`] for the pixels that fit in `sharp`.
fn fuse_into<T: Real>(ve: &[T], w: &[T], views: usize, c: usize, sharp: &mut [T]) {
    match c {
        8 => fuse_fixed::<T, 8>(ve, w, views, sharp),
        16 => fuse_fixed::<T, 16>(ve, w, views, sharp),
        32 => fuse_fixed::<T, 32>(ve, w, views, sharp),
        _ => {
            let width = views * c;
            for ((acc, e), a) in sharp
                .chunks_mut(c)
                .zip(ve.chunks(width))
                .zip(w.chunks(width))
            {
                acc.fill(T::zero());
                for (eb, ab) in e.chunks(c).zip(a.chunks(c)) {
                    for ((s, &x), &y) in acc.iter_mut().zip(eb).zip(ab) {
                        *s += x * y;
                    }
                }
            }
        }
    }
}

fn fuse_fixed<T: Real, const C: usize>(ve: &[T], w: &[T], views: usize, sharp: &mut [T]) {
    let width = views * C;
    for ((dst, e), a) in sharp
        .chunks_exact_mut(C)
        .zip(ve.chunks_exact(width))
        .zip(w.chunks_exact(width))
    {
        let mut acc = [T::zero(); C];
        for (eb, ab) in e.chunks_exact(C).zip(a.chunks_exact(C)) {
            for i in 0..C {
                acc[i] += eb[i] * ab[i];
            }
        }
        dst.copy_from_slice(&acc);
    }
}

/// Gradients of [`fuse`] with respect to `ve` and `w`.
pub fn fuse_backward<T: Real>(
    ve: &[T],
    w: &[T],
    dsharp: &[T],
    views: usize,
    c: usize,
) -> (Vec<T>, Vec<T>) {
    let mut dve = vec![T::zero(); ve.len()];
    let mut dw = vec![T::zero(); w.len()];
    fuse_backward_into(ve, w, dsharp, views, c, &mut dve, &mut dw);
    (dve, dw)
}

/// [`fuse_backward`] for the pixels of `dsharp`, overwriting `dve` and `dw`.
fn fuse_backward_into<T: Real>(
    ve: &[T],
    w: &[T],
    dsharp: &[T],
    views: usize,
    c: usize,
    dve: &mut [T],
    dw: &mut [T],
) {
    let width = views * c;
    let rows = dsharp
        .chunks_exact(c)
        .zip(ve.chunks_exact(width))
        .zip(w.chunks_exact(width));
    for (((ds, e), a), (de, da)) in
        rows.zip(dve.chunks_exact_mut(width).zip(dw.chunks_exact_mut(width)))
    {
        let blocks = e.chunks_exact(c).zip(a.chunks_exact(c));
        for ((eb, ab), (deb, dab)) in blocks.zip(de.chunks_exact_mut(c).zip(da.chunks_exact_mut(c)))
        {
            for i in 0..c {
                deb[i] = ds[i] * ab[i];
                dab[i] = ds[i] * eb[i];
            }
        }
    }
}

/// Attention MLP activations for one view.
#[derive(Clone, Debug)]
pub struct ViewAttention<T> {
    pub input: Vec<T>,
    /// Post-ReLU hidden layer.
    pub hidden: Vec<T>,
    pub weights: Vec<T>,
}

/// Attention weights `W^dp` of view `(u, v)` from its reorganized
/// depth-perception features.
pub fn attention_weights<T: Real>(
    params: &DpvaParams<T>,
    adp_view: &[T],
    views: usize,
    u: usize,
    v: usize,
    use_ape: bool,
) -> ViewAttention<T> {
    let pixels = adp_view.len() / views;
    let input = if use_ape {
        apply_ape(adp_view, views, u, v)
    } else {
        adp_view.to_vec()
    };
    let mut hidden = params.attention_hidden.forward(&input, pixels);
    relu_inplace(&mut hidden);
    let weights = params.attention_out.forward(&hidden, pixels);
    ViewAttention {
        input,
        hidden,
        weights,
    }
}

/// Kept for the backward pass. The view-exclusive features and attention
/// weights are `U*V` times wider than the input, so they are recomputed tile
/// by tile instead of stored.
#[derive(Clone, Debug)]
pub struct DpvaTape<T> {
    pub adp: Field<T>,
    pub sharp: Field<T>,
}

/// Pixels per tile of the per-view head pipeline.
const TILE: usize = 512;

fn check_head<T: Real>(
    params: &DpvaParams<T>,
    cfg: &ModelConfig,
    s: LfShape,
) -> Result<(), ModelError> {
    let n = s.views();
    if params.dp.c_out() != n || params.expand.c_out() != n * s.c || params.dp.c_in() != s.c {
        return Err(ModelError::ShapeMismatch(format!(
            "head built for {} views of {} channels, features are {}x{} views of {} channels",
            params.dp.c_out(),
            params.dp.c_in(),
            s.u,
            s.v,
            s.c
        )));
    }
    if params.attention_hidden.d_in() != cfg.attention_in() {
        return Err(ModelError::ShapeMismatch(format!(
            "attention input width {} does not match config ({})",
            params.attention_hidden.d_in(),
            cfg.attention_in()
        )));
    }
    Ok(())
}

/// Per-view inputs of the tiled pipeline: expand-conv patch rows and the
/// attention MLP input.
struct ViewInputs<T> {
    cols: Vec<T>,
    col_width: usize,
    att_in: Vec<T>,
}

impl<T: Real> ViewInputs<T> {
    fn new(
        params: &DpvaParams<T>,
        s: LfShape,
        p: usize,
        f: &[T],
        adp: &[T],
        use_ape: bool,
    ) -> Self {
        let k = params.expand.kernel_size();
        let mut cols = Vec::new();
        if k == 1 {
            cols.extend_from_slice(f);
        } else {
            im2col(f, s.x, s.y, s.c, k, &mut cols);
        }
        let att_in = if use_ape {
            apply_ape(adp, s.views(), p / s.v, p % s.v)
        } else {
            adp.to_vec()
        };
        Self {
            cols,
            col_width: k * k * s.c,
            att_in,
        }
    }
}

/// Tile scratch: view-exclusive features, hidden layer, attention weights.
struct TileBuffers<T> {
    ve: Vec<T>,
    hidden: Vec<T>,
    w: Vec<T>,
}

impl<T: Real> TileBuffers<T> {
    fn new(params: &DpvaParams<T>) -> Self {
        let (wide, h) = (params.expand.c_out(), params.attention_hidden.d_out());
        Self {
            ve: vec![T::zero(); TILE * wide],
            hidden: vec![T::zero(); TILE * h],
            w: vec![T::zero(); TILE * wide],
        }
    }

    /// Fill the buffers for pixels `[lo, lo + rows)`.
    fn compute(&mut self, params: &DpvaParams<T>, inputs: &ViewInputs<T>, lo: usize, rows: usize) {
        let (wide, h, ain) = (
            params.expand.c_out(),
            params.attention_hidden.d_out(),
            params.attention_hidden.d_in(),
        );
        let cols = &inputs.cols[lo * inputs.col_width..][..rows * inputs.col_width];
        let ve = &mut self.ve[..rows * wide];
        gemm(
            Mat::new(cols, rows, inputs.col_width),
            Mat::new(&params.expand.weight.data, inputs.col_width, wide),
            ve,
            false,
        );
        if let Some(bias) = &params.expand.bias {
            for px in ve.chunks_mut(wide) {
                add_assign(px, &bias.data);
            }
        }
        let hidden = &mut self.hidden[..rows * h];
        params.attention_hidden.forward_rows(
            &inputs.att_in[lo * ain..][..rows * ain],
            rows,
            hidden,
        );
        relu_inplace(hidden);
        params
            .attention_out
            .forward_rows(hidden, rows, &mut self.w[..rows * wide]);
    }
}

/// Head forward on `(U, V, X, Y, C)` features; the result has the image
/// channel count. The tape is only built when `keep` is set.
pub fn dpva_forward<T: Real>(
    params: &DpvaParams<T>,
    cfg: &ModelConfig,
    features: &Field<T>,
    keep: bool,
) -> Result<(Field<T>, Option<DpvaTape<T>>), ModelError> {
    let s = features.shape();
    check_head(params, cfg, s)?;
    let (n, c, px) = (s.views(), s.c, s.x * s.y);
    let adp = reorganize_dp(&params.dp.forward(features))?;
    let mut sharp = Field::zeros(s);
    sharp
        .par_views_mut()
        .zip(features.par_views())
        .zip(adp.par_views())
        .enumerate()
        .for_each(|(p, ((out, f), a))| {
            let inputs = ViewInputs::new(params, s, p, f, a, cfg.use_ape);
            let mut buf = TileBuffers::new(params);
            for lo in (0..px).step_by(TILE) {
                let rows = TILE.min(px - lo);
                buf.compute(params, &inputs, lo, rows);
                fuse_into(&buf.ve, &buf.w, n, c, &mut out[lo * c..][..rows * c]);
            }
        });
    let out = params.out.forward(&sharp);
    let tape = keep.then_some(DpvaTape { adp, sharp });
    Ok((out, tape))
}

/// Accumulates parameter gradients into `grads`; returns the gradient with
/// respect to the head input.
pub fn dpva_backward<T: Real>(
    params: &DpvaParams<T>,
    cfg: &ModelConfig,
    features: &Field<T>,
    tape: &DpvaTape<T>,
    dout: &Field<T>,
    grads: &mut DpvaParams<T>,
) -> Field<T> {
    let s = features.shape();
    let (n, c, px) = (s.views(), s.c, s.x * s.y);
    let (wide, h, ain) = (
        params.expand.c_out(),
        params.attention_hidden.d_out(),
        params.attention_hidden.d_in(),
    );
    let k = params.expand.kernel_size();
    let dsharp = params
        .out
        .backward(&tape.sharp, dout, &mut grads.out, true)
        .expect("input gradient requested");
    let mut dx = Field::zeros(s);
    let mut dadp = Field::zeros(LfShape { c: n, ..s });
    let partials: Vec<_> = dx
        .par_views_mut()
        .zip(dadp.par_views_mut())
        .zip(features.par_views())
        .zip(tape.adp.par_views())
        .zip(dsharp.par_views())
        .enumerate()
        .map(|(p, ((((dxv, dav), f), a), ds))| {
            let inputs = ViewInputs::new(params, s, p, f, a, cfg.use_ape);
            let mut buf = TileBuffers::new(params);
            let (mut dve, mut dw) = (vec![T::zero(); TILE * wide], vec![T::zero(); TILE * wide]);
            let (mut dhidden, mut din) = (vec![T::zero(); TILE * h], vec![T::zero(); TILE * ain]);
            let mut dcols = vec![T::zero(); px * inputs.col_width];
            let mut g_out = params.attention_out.zeros_like();
            let mut g_hidden = params.attention_hidden.zeros_like();
            let mut g_expand = params.expand.zeros_like();
            for lo in (0..px).step_by(TILE) {
                let rows = TILE.min(px - lo);
                buf.compute(params, &inputs, lo, rows);
                let hid = &buf.hidden[..rows * h];
                let (dve, dw) = (&mut dve[..rows * wide], &mut dw[..rows * wide]);
                fuse_backward_into(&buf.ve, &buf.w, &ds[lo * c..][..rows * c], n, c, dve, dw);

                let dhidden = &mut dhidden[..rows * h];
                dhidden.fill(T::zero());
                params
                    .attention_out
                    .backward_rows(hid, rows, dw, &mut g_out, Some(dhidden));
                relu_backward_inplace(dhidden, hid);
                let din = &mut din[..rows * ain];
                din.fill(T::zero());
                params.attention_hidden.backward_rows(
                    &inputs.att_in[lo * ain..][..rows * ain],
                    rows,
                    dhidden,
                    &mut g_hidden,
                    Some(din),
                );
                for (dst, row) in dav[lo * n..][..rows * n].chunks_mut(n).zip(din.chunks(ain)) {
                    dst.copy_from_slice(&row[..n]);
                }

                let cols = Mat::new(
                    &inputs.cols[lo * inputs.col_width..],
                    rows,
                    inputs.col_width,
                );
                gemm(
                    cols.t(),
                    Mat::new(dve, rows, wide),
                    &mut g_expand.weight.data,
                    true,
                );
                if let Some(db) = g_expand.bias.as_mut() {
                    for row in dve.chunks(wide) {
                        add_assign(&mut db.data, row);
                    }
                }
                gemm(
                    Mat::new(dve, rows, wide),
                    Mat::new(&params.expand.weight.data, inputs.col_width, wide).t(),
                    &mut dcols[lo * inputs.col_width..][..rows * inputs.col_width],
                    false,
                );
            }
            if k == 1 {
                add_assign(dxv, &dcols);
            } else {
                col2im_add(&dcols, s.x, s.y, c, k, dxv);
            }
            (g_out, g_hidden, g_expand)
        })
        .collect();
    for (g_out, g_hidden, g_expand) in &partials {
        add_assign(&mut grads.attention_out.weight.data, &g_out.weight.data);
        add_assign(&mut grads.attention_out.bias.data, &g_out.bias.data);
        add_assign(
            &mut grads.attention_hidden.weight.data,
            &g_hidden.weight.data,
        );
        add_assign(&mut grads.attention_hidden.bias.data, &g_hidden.bias.data);
        add_assign(&mut grads.expand.weight.data, &g_expand.weight.data);
        if let (Some(acc), Some(b)) = (grads.expand.bias.as_mut(), g_expand.bias.as_ref()) {
            add_assign(&mut acc.data, &b.data);
        }
    }
    let ddp = reorganize_dp(&dadp).expect("channel count is the view count");
    let dfeat = params
        .dp
        .backward(features, &ddp, &mut grads.dp, true)
        .expect("input gradient requested");
    dx.add_assign(&dfeat);
    dx
}
