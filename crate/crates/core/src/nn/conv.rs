//! Per-view 2-D convolution, "same" output size with replicate padding.
//!
//! Weights are stored `(k, k, C_in, C_out)` so an im2col row of a pixel,
//! ordered `(tap_row, tap_col, c_in)`, multiplies the weight matrix directly.

use rand::Rng;
use rayon::prelude::*;

use super::{gemm, Field, Mat, Real, Tensor};

fn clamp_offset(pos: usize, tap: usize, radius: usize, extent: usize) -> usize {
    (pos + tap).saturating_sub(radius).min(extent - 1)
}

/// Build the `(h*w, k*k*cin)` patch matrix, appending to `col`.
pub(crate) fn im2col<T: Real>(x: &[T], h: usize, w: usize, cin: usize, k: usize, col: &mut Vec<T>) {
    let r = k / 2;
    for xi in 0..h {
        for yi in 0..w {
            for i in 0..k {
                let sx = clamp_offset(xi, i, r, h);
                for j in 0..k {
                    let sy = clamp_offset(yi, j, r, w);
                    col.extend_from_slice(&x[(sx * w + sy) * cin..][..cin]);
                }
            }
        }
    }
}

pub(crate) fn col2im_add<T: Real>(
    dcol: &[T],
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    dx: &mut [T],
) {
    let r = k / 2;
    let row_len = k * k * cin;
    for xi in 0..h {
        for yi in 0..w {
            let row = &dcol[(xi * w + yi) * row_len..][..row_len];
            for i in 0..k {
                let sx = clamp_offset(xi, i, r, h);
                for j in 0..k {
                    let sy = clamp_offset(yi, j, r, w);
                    let dst = &mut dx[(sx * w + sy) * cin..][..cin];
                    for (d, &g) in dst.iter_mut().zip(&row[(i * k + j) * cin..][..cin]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

/// Convolve one `(h, w, cin)` view into `out` `(h, w, cout)`, overwriting it.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_view_forward<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    cin: usize,
    weight: &[T],
    k: usize,
    cout: usize,
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let pixels = h * w;
    let kk = k * k * cin;
    if k == 1 {
        gemm(
            Mat::new(x, pixels, cin),
            Mat::new(weight, cin, cout),
            out,
            false,
        );
    } else {
        let mut col = Vec::with_capacity(pixels * kk);
        im2col(x, h, w, cin, k, &mut col);
        gemm(
            Mat::new(&col, pixels, kk),
            Mat::new(weight, kk, cout),
            out,
            false,
        );
    }
    if let Some(bias) = bias {
        for px in out[..pixels * cout].chunks_mut(cout) {
            for (o, &b) in px.iter_mut().zip(bias) {
                *o += b;
            }
        }
    }
}

/// Backward of [`conv2d_view_forward`]. All gradients are accumulated.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_view_backward<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    cin: usize,
    weight: &[T],
    k: usize,
    cout: usize,
    dout: &[T],
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    let pixels = h * w;
    let kk = k * k * cin;
    let dy = Mat::new(dout, pixels, cout);
    if let Some(db) = dbias {
        for px in dout[..pixels * cout].chunks(cout) {
            for (d, &g) in db.iter_mut().zip(px) {
                *d += g;
            }
        }
    }
    if k == 1 {
        gemm(Mat::new(x, pixels, cin).t(), dy, dweight, true);
        if let Some(dx) = dx {
            gemm(dy, Mat::new(weight, cin, cout).t(), dx, true);
        }
        return;
    }
    let mut col = Vec::with_capacity(pixels * kk);
    im2col(x, h, w, cin, k, &mut col);
    gemm(Mat::new(&col, pixels, kk).t(), dy, dweight, true);
    if let Some(dx) = dx {
        gemm(dy, Mat::new(weight, kk, cout).t(), &mut col, false);
        col2im_add(&col, h, w, cin, k, dx);
    }
}

/// Convolution shared by all views (stem, DPVA branches, output layer).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    /// `(k, k, C_in, C_out)`.
    pub weight: Tensor<T>,
    /// `(C_out)`.
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn init<R: Rng>(rng: &mut R, k: usize, cin: usize, cout: usize, bias: bool) -> Self {
        let bound = 1.0 / ((k * k * cin) as f64).sqrt();
        let weight = Tensor::uniform(rng, &[k, k, cin, cout], bound);
        let bias = bias.then(|| Tensor::uniform(rng, &[cout], bound));
        Self { weight, bias }
    }

    pub fn cast<U: Real>(&self) -> Conv2d<U> {
        Conv2d {
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(Tensor::cast),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.as_ref().map(Tensor::zeros_like),
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape[3]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn forward(&self, input: &Field<T>) -> Field<T> {
        assert_eq!(input.channels(), self.c_in(), "conv input channels");
        let shape = input.shape();
        let out_shape = crate::lf::LfShape {
            c: self.c_out(),
            ..shape
        };
        let mut out = Field::zeros(out_shape);
        let (k, cin, cout) = (self.kernel_size(), self.c_in(), self.c_out());
        let bias = self.bias.as_ref().map(|b| b.data.as_slice());
        out.par_views_mut()
            .zip(input.par_views())
            .for_each(|(o, x)| {
                conv2d_view_forward(
                    x,
                    shape.x,
                    shape.y,
                    cin,
                    &self.weight.data,
                    k,
                    cout,
                    bias,
                    o,
                )
            });
        out
    }

    /// Accumulate parameter gradients into `grads`; return the input
    /// gradient when `want_input` is set.
    pub fn backward(
        &self,
        input: &Field<T>,
        dout: &Field<T>,
        grads: &mut Conv2d<T>,
        want_input: bool,
    ) -> Option<Field<T>> {
        let shape = input.shape();
        let (k, cin, cout) = (self.kernel_size(), self.c_in(), self.c_out());
        let has_bias = self.bias.is_some();
        let mut dx = want_input.then(|| Field::zeros(shape));
        let partials: Vec<(Vec<T>, Vec<T>)> = match dx.as_mut() {
            Some(dx) => dx
                .par_views_mut()
                .zip(input.par_views())
                .zip(dout.par_views())
                .map(|((dxv, x), dy)| {
                    let mut dw = vec![T::zero(); self.weight.len()];
                    let mut db = vec![T::zero(); if has_bias { cout } else { 0 }];
                    conv2d_view_backward(
                        x,
                        shape.x,
                        shape.y,
                        cin,
                        &self.weight.data,
                        k,
                        cout,
                        dy,
                        &mut dw,
                        has_bias.then_some(db.as_mut_slice()),
                        Some(dxv),
                    );
                    (dw, db)
                })
                .collect(),
            None => input
                .par_views()
                .zip(dout.par_views())
                .map(|(x, dy)| {
                    let mut dw = vec![T::zero(); self.weight.len()];
                    let mut db = vec![T::zero(); if has_bias { cout } else { 0 }];
                    conv2d_view_backward(
                        x,
                        shape.x,
                        shape.y,
                        cin,
                        &self.weight.data,
                        k,
                        cout,
                        dy,
                        &mut dw,
                        has_bias.then_some(db.as_mut_slice()),
                        None,
                    );
                    (dw, db)
                })
                .collect(),
        };
        // Reduce in view order so results do not depend on thread count.
        for (dw, db) in &partials {
            super::add_assign(&mut grads.weight.data, dw);
            if let Some(b) = grads.bias.as_mut() {
                super::add_assign(&mut b.data, db);
            }
        }
        dx
    }
}
