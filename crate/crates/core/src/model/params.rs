use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::nn::{AngularConv, Conv2d, Linear, Real, Tensor};

/// Pooled descriptor -> `C_K` -> `C_K` -> full `(k, k, C, C)` kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGenerator<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub kernel_gen: Linear<T>,
}

/// Spatial kernel source of a block: generated per view, or one static
/// kernel shared by all views (the w/o-VASC ablation).
#[derive(Clone, Debug, PartialEq)]
pub enum SpatialKernel<T> {
    Adaptive(KernelGenerator<T>),
    /// `(k, k, C, C)`.
    Static(Tensor<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VascBlockParams<T> {
    pub spatial: SpatialKernel<T>,
    pub angular: AngularConv<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpvaParams<T> {
    /// `C -> U*V*C` view-exclusive features.
    pub expand: Conv2d<T>,
    /// `C -> U*V` depth-perception features.
    pub dp: Conv2d<T>,
    pub attention_hidden: Linear<T>,
    pub attention_out: Linear<T>,
    /// `C -> image channels`.
    pub out: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head<T> {
    Dpva(DpvaParams<T>),
    /// Per-view `C -> image channels` convolution (w/o-DPVA ablation).
    Plain(Conv2d<T>),
}

/// Every trainable array of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub stem: Conv2d<T>,
    pub blocks: Vec<VascBlockParams<T>>,
    pub head: Head<T>,
}

impl<T: Real> KernelGenerator<T> {
    pub fn init<R: rand::Rng>(rng: &mut R, channels: usize, descriptor: usize, k: usize) -> Self {
        let conv_bound = 1.0 / ((k * k * channels) as f64).sqrt();
        Self {
            fc1: Linear::init(rng, channels, descriptor),
            fc2: Linear::init(rng, descriptor, descriptor),
            kernel_gen: Linear::init_with(
                rng,
                descriptor,
                k * k * channels * channels,
                conv_bound,
                conv_bound,
            ),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
            kernel_gen: self.kernel_gen.zeros_like(),
        }
    }
}

impl<T: Real> VascBlockParams<T> {
    pub fn init<R: rand::Rng>(rng: &mut R, cfg: &ModelConfig) -> Self {
        let (c, k) = (cfg.channels, cfg.kernel_size);
        let spatial = if cfg.use_vasc {
            SpatialKernel::Adaptive(KernelGenerator::init(rng, c, cfg.descriptor_width, k))
        } else {
            let bound = 1.0 / ((k * k * c) as f64).sqrt();
            SpatialKernel::Static(Tensor::uniform(rng, &[k, k, c, c], bound))
        };
        Self {
            spatial,
            angular: AngularConv::init(rng, cfg.angular_kernel, c, c),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spatial: match &self.spatial {
                SpatialKernel::Adaptive(g) => SpatialKernel::Adaptive(g.zeros_like()),
                SpatialKernel::Static(t) => SpatialKernel::Static(t.zeros_like()),
            },
            angular: self.angular.zeros_like(),
        }
    }

    pub fn kernel_size(&self) -> usize {
        match &self.spatial {
            SpatialKernel::Adaptive(g) => {
                let c = g.fc1.d_in();
                ((g.kernel_gen.d_out() / (c * c)) as f64).sqrt().round() as usize
            }
            SpatialKernel::Static(t) => t.shape[0],
        }
    }

    pub fn channels(&self) -> usize {
        self.angular.c_in()
    }
}

impl<T: Real> DpvaParams<T> {
    pub fn init<R: rand::Rng>(rng: &mut R, cfg: &ModelConfig) -> Self {
        let (c, n) = (cfg.channels, cfg.views());
        Self {
            expand: Conv2d::init(rng, cfg.expand_kernel, c, n * c, true),
            dp: Conv2d::init(rng, cfg.head_kernel, c, n, true),
            attention_hidden: Linear::init(rng, cfg.attention_in(), cfg.attention_hidden),
            attention_out: Linear::init(rng, cfg.attention_hidden, n * c),
            out: Conv2d::init(rng, cfg.head_kernel, c, cfg.image_channels, true),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            expand: self.expand.zeros_like(),
            dp: self.dp.zeros_like(),
            attention_hidden: self.attention_hidden.zeros_like(),
            attention_out: self.attention_out.zeros_like(),
            out: self.out.zeros_like(),
        }
    }
}

fn push_conv<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: &str, conv: &'a Conv2d<T>) {
    out.push((format!("{prefix}.weight"), &conv.weight));
    if let Some(b) = &conv.bias {
        out.push((format!("{prefix}.bias"), b));
    }
}

fn push_linear<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: &str, lin: &'a Linear<T>) {
    out.push((format!("{prefix}.weight"), &lin.weight));
    out.push((format!("{prefix}.bias"), &lin.bias));
}

fn push_conv_mut<'a, T>(
    out: &mut Vec<(String, &'a mut Tensor<T>)>,
    prefix: &str,
    conv: &'a mut Conv2d<T>,
) {
    out.push((format!("{prefix}.weight"), &mut conv.weight));
    if let Some(b) = &mut conv.bias {
        out.push((format!("{prefix}.bias"), b));
    }
}

fn push_linear_mut<'a, T>(
    out: &mut Vec<(String, &'a mut Tensor<T>)>,
    prefix: &str,
    lin: &'a mut Linear<T>,
) {
    out.push((format!("{prefix}.weight"), &mut lin.weight));
    out.push((format!("{prefix}.bias"), &mut lin.bias));
}

impl<T: Real> ModelParams<T> {
    /// Deterministic initialization from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = Conv2d::init(
            &mut rng,
            cfg.head_kernel,
            cfg.image_channels,
            cfg.channels,
            true,
        );
        let blocks = (0..cfg.num_blocks)
            .map(|_| VascBlockParams::init(&mut rng, cfg))
            .collect();
        let head = if cfg.use_dpva {
            Head::Dpva(DpvaParams::init(&mut rng, cfg))
        } else {
            Head::Plain(Conv2d::init(
                &mut rng,
                cfg.head_kernel,
                cfg.channels,
                cfg.image_channels,
                true,
            ))
        };
        Ok(Self { stem, blocks, head })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            stem: self.stem.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(VascBlockParams::zeros_like)
                .collect(),
            head: match &self.head {
                Head::Dpva(d) => Head::Dpva(d.zeros_like()),
                Head::Plain(c) => Head::Plain(c.zeros_like()),
            },
        }
    }

    /// All arrays in a fixed order with stable dotted names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        push_conv(&mut out, "stem", &self.stem);
        for (i, block) in self.blocks.iter().enumerate() {
            match &block.spatial {
                SpatialKernel::Adaptive(g) => {
                    push_linear(&mut out, &format!("blocks.{i}.fc1"), &g.fc1);
                    push_linear(&mut out, &format!("blocks.{i}.fc2"), &g.fc2);
                    push_linear(&mut out, &format!("blocks.{i}.kernel_gen"), &g.kernel_gen);
                }
                SpatialKernel::Static(t) => out.push((format!("blocks.{i}.static_kernel"), t)),
            }
            out.push((format!("blocks.{i}.angular.weight"), &block.angular.weight));
            out.push((format!("blocks.{i}.angular.bias"), &block.angular.bias));
        }
        match &self.head {
            Head::Dpva(d) => {
                push_conv(&mut out, "dpva.expand", &d.expand);
                push_conv(&mut out, "dpva.dp", &d.dp);
                push_linear(&mut out, "dpva.attention_hidden", &d.attention_hidden);
                push_linear(&mut out, "dpva.attention_out", &d.attention_out);
                push_conv(&mut out, "dpva.out", &d.out);
            }
            Head::Plain(c) => push_conv(&mut out, "head.out", c),
        }
        out
    }

    /// Same order and names as [`ModelParams::named_tensors`].
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        push_conv_mut(&mut out, "stem", &mut self.stem);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            match &mut block.spatial {
                SpatialKernel::Adaptive(g) => {
                    push_linear_mut(&mut out, &format!("blocks.{i}.fc1"), &mut g.fc1);
                    push_linear_mut(&mut out, &format!("blocks.{i}.fc2"), &mut g.fc2);
                    push_linear_mut(
                        &mut out,
                        &format!("blocks.{i}.kernel_gen"),
                        &mut g.kernel_gen,
                    );
                }
                SpatialKernel::Static(t) => out.push((format!("blocks.{i}.static_kernel"), t)),
            }
            out.push((
                format!("blocks.{i}.angular.weight"),
                &mut block.angular.weight,
            ));
            out.push((format!("blocks.{i}.angular.bias"), &mut block.angular.bias));
        }
        match &mut self.head {
            Head::Dpva(d) => {
                push_conv_mut(&mut out, "dpva.expand", &mut d.expand);
                push_conv_mut(&mut out, "dpva.dp", &mut d.dp);
                push_linear_mut(&mut out, "dpva.attention_hidden", &mut d.attention_hidden);
                push_linear_mut(&mut out, "dpva.attention_out", &mut d.attention_out);
                push_conv_mut(&mut out, "dpva.out", &mut d.out);
            }
            Head::Plain(c) => push_conv_mut(&mut out, "head.out", c),
        }
        out
    }

    /// Total scalar count obtained by enumerating the arrays.
    pub fn scalar_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            stem: self.stem.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| VascBlockParams {
                    spatial: match &b.spatial {
                        SpatialKernel::Adaptive(g) => SpatialKernel::Adaptive(KernelGenerator {
                            fc1: g.fc1.cast(),
                            fc2: g.fc2.cast(),
                            kernel_gen: g.kernel_gen.cast(),
                        }),
                        SpatialKernel::Static(t) => SpatialKernel::Static(t.cast()),
                    },
                    angular: b.angular.cast(),
                })
                .collect(),
            head: match &self.head {
                Head::Dpva(d) => Head::Dpva(DpvaParams {
                    expand: d.expand.cast(),
                    dp: d.dp.cast(),
                    attention_hidden: d.attention_hidden.cast(),
                    attention_out: d.attention_out.cast(),
                    out: d.out.cast(),
                }),
                Head::Plain(c) => Head::Plain(c.cast()),
            },
        }
    }

    /// Check array shapes against `cfg`.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let expected = ModelParams::<T>::init(cfg, 0)?;
        let want = expected.named_tensors();
        let have = self.named_tensors();
        if want.len() != have.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} parameter arrays, config implies {}",
                have.len(),
                want.len()
            )));
        }
        for ((wn, wt), (hn, ht)) in want.iter().zip(&have) {
            if wn != hn || wt.shape != ht.shape {
                return Err(ModelError::ShapeMismatch(format!(
                    "{hn} {:?}, config implies {wn} {:?}",
                    ht.shape, wt.shape
                )));
            }
        }
        Ok(())
    }
}
