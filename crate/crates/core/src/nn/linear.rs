use rand::Rng;

use super::{gemm, Mat, Real, Tensor};

/// Fully connected layer applied row-wise: `(N, d_in) -> (N, d_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `(d_in, d_out)`.
    pub weight: Tensor<T>,
    /// `(d_out)`.
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn init<R: Rng>(rng: &mut R, d_in: usize, d_out: usize) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self::init_with(rng, d_in, d_out, bound, bound)
    }

    pub fn init_with<R: Rng>(
        rng: &mut R,
        d_in: usize,
        d_out: usize,
        weight_bound: f64,
        bias_bound: f64,
    ) -> Self {
        Self {
            weight: Tensor::uniform(rng, &[d_in, d_out], weight_bound),
            bias: Tensor::uniform(rng, &[d_out], bias_bound),
        }
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `out = x W + b` for `rows` input rows; `out` is overwritten.
    pub fn forward_rows(&self, x: &[T], rows: usize, out: &mut [T]) {
        let (din, dout) = (self.d_in(), self.d_out());
        gemm(
            Mat::new(x, rows, din),
            Mat::new(&self.weight.data, din, dout),
            out,
            false,
        );
        for row in out[..rows * dout].chunks_mut(dout) {
            for (o, &b) in row.iter_mut().zip(&self.bias.data) {
                *o += b;
            }
        }
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let mut out = vec![T::zero(); rows * self.d_out()];
        self.forward_rows(x, rows, &mut out);
        out
    }

    /// Accumulate `dW`, `db` into `grads` and, if requested, `dx` into `dx`.
    pub fn backward_rows(
        &self,
        x: &[T],
        rows: usize,
        dout: &[T],
        grads: &mut Linear<T>,
        dx: Option<&mut [T]>,
    ) {
        let (din, dn) = (self.d_in(), self.d_out());
        let dy = Mat::new(dout, rows, dn);
        gemm(Mat::new(x, rows, din).t(), dy, &mut grads.weight.data, true);
        for row in dout[..rows * dn].chunks(dn) {
            for (d, &g) in grads.bias.data.iter_mut().zip(row) {
                *d += g;
            }
        }
        if let Some(dx) = dx {
            gemm(dy, Mat::new(&self.weight.data, din, dn).t(), dx, true);
        }
    }
}
