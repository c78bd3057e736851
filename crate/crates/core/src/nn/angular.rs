//! Convolution over the `(u, v)` view grid, applied independently at every
//! spatial position, zero-padded at the grid border.

use rand::Rng;

use super::{gemm, Field, Mat, Real, Tensor};
use crate::lf::LfShape;

#[derive(Clone, Debug, PartialEq)]
pub struct AngularConv<T> {
    /// `(k_a, k_a, C_in, C_out)`.
    pub weight: Tensor<T>,
    /// `(C_out)`.
    pub bias: Tensor<T>,
}

/// Valid output columns `[lo, hi)` for tap column `j`, and the matching
/// source column offset.
fn tap_span(j: usize, radius: usize, extent: usize) -> Option<(usize, usize)> {
    let lo = radius.saturating_sub(j);
    let hi = (extent + radius).saturating_sub(j).min(extent);
    (lo < hi).then_some((lo, hi))
}

impl<T: Real> AngularConv<T> {
    pub fn init<R: Rng>(rng: &mut R, ka: usize, cin: usize, cout: usize) -> Self {
        let bound = 1.0 / ((ka * ka * cin) as f64).sqrt();
        Self {
            weight: Tensor::uniform(rng, &[ka, ka, cin, cout], bound),
            bias: Tensor::uniform(rng, &[cout], bound),
        }
    }

    pub fn cast<U: Real>(&self) -> AngularConv<U> {
        AngularConv {
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
        self.weight.len() + self.bias.len()
    }

    fn tap(&self, i: usize, j: usize) -> &[T] {
        let (ka, cin, cout) = (self.kernel_size(), self.c_in(), self.c_out());
        &self.weight.data[(i * ka + j) * cin * cout..][..cin * cout]
    }

    pub fn forward(&self, input: &Field<T>) -> Field<T> {
        let s = input.shape();
        assert_eq!(s.c, self.c_in(), "angular conv input channels");
        let (ka, cin, cout) = (self.kernel_size(), self.c_in(), self.c_out());
        let r = ka / 2;
        let px = s.x * s.y;
        let mut out = Field::zeros(LfShape { c: cout, ..s });
        for pixel in out.as_mut_slice().chunks_mut(cout) {
            pixel.copy_from_slice(&self.bias.data);
        }
        let (in_view, out_view) = (px * cin, px * cout);
        for u in 0..s.u {
            for i in 0..ka {
                let Some(su) = (u + i).checked_sub(r).filter(|&su| su < s.u) else {
                    continue;
                };
                for j in 0..ka {
                    let Some((lo, hi)) = tap_span(j, r, s.v) else {
                        continue;
                    };
                    let src_lo = lo + j - r;
                    let rows = (hi - lo) * px;
                    let src = &input.as_slice()[(su * s.v + src_lo) * in_view..][..rows * cin];
                    let dst = &mut out.as_mut_slice()[(u * s.v + lo) * out_view..][..rows * cout];
                    gemm(
                        Mat::new(src, rows, cin),
                        Mat::new(self.tap(i, j), cin, cout),
                        dst,
                        true,
                    );
                }
            }
        }
        out
    }

    /// Accumulate parameter gradients; return the input gradient.
    pub fn backward(
        &self,
        input: &Field<T>,
        dout: &Field<T>,
        grads: &mut AngularConv<T>,
    ) -> Field<T> {
        let s = input.shape();
        let (ka, cin, cout) = (self.kernel_size(), self.c_in(), self.c_out());
        let r = ka / 2;
        let px = s.x * s.y;
        let (in_view, out_view) = (px * cin, px * cout);
        let mut dx = Field::zeros(s);
        for pixel in dout.as_slice().chunks(cout) {
            for (d, &g) in grads.bias.data.iter_mut().zip(pixel) {
                *d += g;
            }
        }
        for u in 0..s.u {
            for i in 0..ka {
                let Some(su) = (u + i).checked_sub(r).filter(|&su| su < s.u) else {
                    continue;
                };
                for j in 0..ka {
                    let Some((lo, hi)) = tap_span(j, r, s.v) else {
                        continue;
                    };
                    let src_lo = lo + j - r;
                    let rows = (hi - lo) * px;
                    let src = &input.as_slice()[(su * s.v + src_lo) * in_view..][..rows * cin];
                    let dy = &dout.as_slice()[(u * s.v + lo) * out_view..][..rows * cout];
                    let dw = &mut grads.weight.data[(i * ka + j) * cin * cout..][..cin * cout];
                    gemm(
                        Mat::new(src, rows, cin).t(),
                        Mat::new(dy, rows, cout),
                        dw,
                        true,
                    );
                    let dsrc =
                        &mut dx.as_mut_slice()[(su * s.v + src_lo) * in_view..][..rows * cin];
                    gemm(
                        Mat::new(dy, rows, cout),
                        Mat::new(self.tap(i, j), cin, cout).t(),
                        dsrc,
                        true,
                    );
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = AngularConv::<f64>::init(&mut rng, 3, 2, 3);
        let shape = LfShape::new(3, 4, 2, 2, 2);
        let input = Field::from_vec(
            shape,
            (0..shape.len())
                .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
                .collect(),
        );
        let out = conv.forward(&input);
        let at = |f: &Field<f64>, u: usize, v: usize, x: usize, y: usize, c: usize, ch: usize| {
            f.as_slice()[(((u * shape.v + v) * shape.x + x) * shape.y + y) * ch + c]
        };
        for u in 0..3 {
            for v in 0..4 {
                for x in 0..2 {
                    for y in 0..2 {
                        for o in 0..3 {
                            let mut want = conv.bias.data[o];
                            for i in 0..3 {
                                for j in 0..3 {
                                    let (su, sv) =
                                        (u as isize + i as isize - 1, v as isize + j as isize - 1);
                                    if su < 0 || sv < 0 || su >= 3 || sv >= 4 {
                                        continue;
                                    }
                                    for c in 0..2 {
                                        want += at(&input, su as usize, sv as usize, x, y, c, 2)
                                            * conv.weight.data[((i * 3 + j) * 2 + c) * 3 + o];
                                    }
                                }
                            }
                            assert!((at(&out, u, v, x, y, o, 3) - want).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }
}
