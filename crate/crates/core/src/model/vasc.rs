//! View-adaptive spatial convolution blocks.
//!
//! Generated kernels use the same `(k, k, C_in, C_out)` layout as every other
//! convolution weight in the crate.

use rayon::prelude::*;

use super::params::{KernelGenerator, SpatialKernel, VascBlockParams};
use super::ModelError;
use crate::nn::{
    add_assign, conv2d_view_backward, conv2d_view_forward, relu_backward_inplace, relu_inplace,
    Field, Real,
};

/// Generator activations, one row per view.
#[derive(Clone, Debug)]
pub struct GeneratorTape<T> {
    pub pooled: Vec<T>,
    pub h1: Vec<T>,
    pub h2: Vec<T>,
}

/// Per-channel mean of an `(X, Y, C)` view.
pub fn spatial_mean<T: Real>(view: &[T], channels: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); channels];
    for px in view.chunks(channels) {
        add_assign(&mut acc, px);
    }
    let inv = T::from_f64_lossy(channels as f64 / view.len() as f64);
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

impl<T: Real> KernelGenerator<T> {
    pub fn kernel_len(&self) -> usize {
        self.kernel_gen.d_out()
    }

    /// Kernels for `rows` pooled descriptors, `(rows, k*k*C*C)`.
    pub fn generate(&self, pooled: &[T], rows: usize) -> (Vec<T>, GeneratorTape<T>) {
        let mut h1 = self.fc1.forward(pooled, rows);
        relu_inplace(&mut h1);
        let mut h2 = self.fc2.forward(&h1, rows);
        relu_inplace(&mut h2);
        let kernels = self.kernel_gen.forward(&h2, rows);
        let tape = GeneratorTape {
            pooled: pooled[..rows * self.fc1.d_in()].to_vec(),
            h1,
            h2,
        };
        (kernels, tape)
    }

    /// Accumulates parameter gradients and returns the pooled-descriptor
    /// gradient.
    pub fn backward(
        &self,
        tape: &GeneratorTape<T>,
        rows: usize,
        dkernels: &[T],
        grads: &mut KernelGenerator<T>,
    ) -> Vec<T> {
        let ck = self.fc2.d_out();
        let mut dh2 = vec![T::zero(); rows * ck];
        self.kernel_gen.backward_rows(
            &tape.h2,
            rows,
            dkernels,
            &mut grads.kernel_gen,
            Some(&mut dh2),
        );
        relu_backward_inplace(&mut dh2, &tape.h2);
        let mut dh1 = vec![T::zero(); rows * ck];
        self.fc2
            .backward_rows(&tape.h1, rows, &dh2, &mut grads.fc2, Some(&mut dh1));
        relu_backward_inplace(&mut dh1, &tape.h1);
        let mut dpooled = vec![T::zero(); rows * self.fc1.d_in()];
        self.fc1
            .backward_rows(&tape.pooled, rows, &dh1, &mut grads.fc1, Some(&mut dpooled));
        dpooled
    }
}

/// The kernel one view gets from its own `(X, Y, C)` features.
pub fn generate_view_kernel<T: Real>(sai_features: &[T], generator: &KernelGenerator<T>) -> Vec<T> {
    let pooled = spatial_mean(sai_features, generator.fc1.d_in());
    generator.generate(&pooled, 1).0
}

/// Per-view convolution without bias; view `p` uses
/// `kernels[p * stride..]`, so `stride == 0` shares a single kernel.
pub fn dynamic_conv_forward<T: Real>(
    input: &Field<T>,
    kernels: &[T],
    stride: usize,
    k: usize,
) -> Field<T> {
    let s = input.shape();
    let len = k * k * s.c * s.c;
    let mut out = Field::zeros(s);
    out.par_views_mut()
        .zip(input.par_views())
        .enumerate()
        .for_each(|(p, (o, x))| {
            conv2d_view_forward(
                x,
                s.x,
                s.y,
                s.c,
                &kernels[p * stride..][..len],
                k,
                s.c,
                None,
                o,
            )
        });
    out
}

/// Accumulates into `dkernels` (same striding as the forward) and `dx`.
pub fn dynamic_conv_backward<T: Real>(
    input: &Field<T>,
    kernels: &[T],
    stride: usize,
    k: usize,
    dout: &Field<T>,
    dkernels: &mut [T],
    dx: &mut Field<T>,
) {
    let s = input.shape();
    let len = k * k * s.c * s.c;
    let partials: Vec<Vec<T>> = dx
        .par_views_mut()
        .zip(input.par_views())
        .zip(dout.par_views())
        .enumerate()
        .map(|(p, ((dxv, x), dy))| {
            let mut dk = vec![T::zero(); len];
            let w = &kernels[p * stride..][..len];
            conv2d_view_backward(x, s.x, s.y, s.c, w, k, s.c, dy, &mut dk, None, Some(dxv));
            dk
        })
        .collect();
    for (p, dk) in partials.iter().enumerate() {
        add_assign(&mut dkernels[p * stride..][..len], dk);
    }
}

/// Activations kept for the backward pass of one block.
#[derive(Clone, Debug)]
pub struct VascTape<T> {
    pub kernels: Vec<T>,
    pub generator: Option<GeneratorTape<T>>,
    /// Post-ReLU spatial convolution output.
    pub spatial: Field<T>,
    /// Post-ReLU angular convolution output.
    pub angular: Field<T>,
}

pub fn vasc_block_forward<T: Real>(
    block: &VascBlockParams<T>,
    input: &Field<T>,
) -> Result<(Field<T>, VascTape<T>), ModelError> {
    let s = input.shape();
    if s.c != block.channels() {
        return Err(ModelError::ShapeMismatch(format!(
            "block expects {} channels, input has {}",
            block.channels(),
            s.c
        )));
    }
    let k = block.kernel_size();
    let (kernels, generator, stride) = match &block.spatial {
        SpatialKernel::Adaptive(g) => {
            let pooled: Vec<T> = input
                .views_iter()
                .flat_map(|v| spatial_mean(v, s.c))
                .collect();
            let (kernels, tape) = g.generate(&pooled, s.views());
            (kernels, Some(tape), g.kernel_len())
        }
        SpatialKernel::Static(t) => (t.data.clone(), None, 0),
    };
    let mut spatial = dynamic_conv_forward(input, &kernels, stride, k);
    relu_inplace(spatial.as_mut_slice());
    let mut angular = block.angular.forward(&spatial);
    relu_inplace(angular.as_mut_slice());
    let mut out = input.clone();
    out.add_assign(&angular);
    let tape = VascTape {
        kernels,
        generator,
        spatial,
        angular,
    };
    Ok((out, tape))
}

/// Accumulates parameter gradients into `grads`; returns the input gradient.
pub fn vasc_block_backward<T: Real>(
    block: &VascBlockParams<T>,
    input: &Field<T>,
    tape: &VascTape<T>,
    dout: &Field<T>,
    grads: &mut VascBlockParams<T>,
) -> Field<T> {
    let s = input.shape();
    let k = block.kernel_size();
    let mut da = dout.clone();
    relu_backward_inplace(da.as_mut_slice(), tape.angular.as_slice());
    let mut ds = block
        .angular
        .backward(&tape.spatial, &da, &mut grads.angular);
    relu_backward_inplace(ds.as_mut_slice(), tape.spatial.as_slice());
    let mut dx = dout.clone();
    match (&block.spatial, &mut grads.spatial) {
        (SpatialKernel::Adaptive(g), SpatialKernel::Adaptive(gg)) => {
            let len = g.kernel_len();
            let mut dk = vec![T::zero(); tape.kernels.len()];
            dynamic_conv_backward(input, &tape.kernels, len, k, &ds, &mut dk, &mut dx);
            let gen_tape = tape
                .generator
                .as_ref()
                .expect("adaptive block records its generator");
            let dpooled = g.backward(gen_tape, s.views(), &dk, gg);
            let inv = T::from_f64_lossy(1.0 / (s.x * s.y) as f64);
            for p in 0..s.views() {
                let dmean: Vec<T> = dpooled[p * s.c..][..s.c].iter().map(|&d| d * inv).collect();
                for px in dx.view_mut(p).chunks_mut(s.c) {
                    add_assign(px, &dmean);
                }
            }
        }
        (SpatialKernel::Static(w), SpatialKernel::Static(gw)) => {
            dynamic_conv_backward(input, &w.data, 0, k, &ds, &mut gw.data, &mut dx);
        }
        _ => panic!("gradient buffers do not match the block layout"),
    }
    dx
}
