//! Finite-difference checks of every hand-written backward pass, run in
//! `f64` against an L1 objective with a random target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lf::LfShape;
use crate::model::vasc::{dynamic_conv_backward, dynamic_conv_forward};
use crate::model::{
    backward, dpva_backward, dpva_forward, forward_field, forward_with_tape, fuse, fuse_backward,
    vasc_block_backward, vasc_block_forward, DpvaParams, KernelGenerator, ModelConfig, ModelParams,
    VascBlockParams,
};
use crate::nn::{relu_backward_inplace, relu_inplace, AngularConv, Conv2d, Field, Linear, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Coordinates sampled per tensor.
pub const SAMPLES: usize = 40;
const KINK_RETRIES: usize = 3;
/// Headroom on machine epsilon for roundoff in one objective evaluation.
const ROUNDOFF: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradModule {
    Linear,
    Stem,
    KernelGenerator,
    DynamicConv,
    AngularConv,
    VascBlock,
    StaticVascBlock,
    ExpandBranch,
    DpBranch,
    Fusion,
    OutputConv,
    Dpva,
    FullModel,
}

impl GradModule {
    pub const ALL: [GradModule; 13] = [
        Self::Linear,
        Self::Stem,
        Self::KernelGenerator,
        Self::DynamicConv,
        Self::AngularConv,
        Self::VascBlock,
        Self::StaticVascBlock,
        Self::ExpandBranch,
        Self::DpBranch,
        Self::Fusion,
        Self::OutputConv,
        Self::Dpva,
        Self::FullModel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Stem => "stem",
            Self::KernelGenerator => "kernel_generator",
            Self::DynamicConv => "dynamic_conv",
            Self::AngularConv => "angular_conv",
            Self::VascBlock => "vasc_block",
            Self::StaticVascBlock => "static_vasc_block",
            Self::ExpandBranch => "expand_branch",
            Self::DpBranch => "dp_branch",
            Self::Fusion => "fusion",
            Self::OutputConv => "output_conv",
            Self::Dpva => "dpva",
            Self::FullModel => "full_model",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub module: GradModule,
    pub max_rel_error: f64,
    /// Tensor holding the worst coordinate.
    pub worst: String,
    pub checked: usize,
    /// Coordinates redrawn because they sat on a kink.
    pub resampled: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

/// A differentiable function of some named arrays.
trait Case: Clone {
    fn slots(&mut self) -> Vec<(String, &mut [f64])>;
    fn output(&self) -> Vec<f64>;
    /// Same layout as `self`, holding gradients of `sum(dout * output)`.
    fn gradient(&self, dout: &[f64]) -> Self;
}

fn conv_slots<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: &str, conv: &'a mut Conv2d<f64>) {
    out.push((format!("{name}.weight"), &mut conv.weight.data));
    if let Some(b) = conv.bias.as_mut() {
        out.push((format!("{name}.bias"), &mut b.data));
    }
}

fn linear_slots<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: &str, lin: &'a mut Linear<f64>) {
    out.push((format!("{name}.weight"), &mut lin.weight.data));
    out.push((format!("{name}.bias"), &mut lin.bias.data));
}

#[derive(Clone)]
struct LinearCase {
    lin: Linear<f64>,
    x: Vec<f64>,
    rows: usize,
}

impl Case for LinearCase {
    fn slots(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        linear_slots(&mut out, "linear", &mut self.lin);
        out.push(("x".into(), &mut self.x));
        out
    }

    fn output(&self) -> Vec<f64> {
        self.lin.forward(&self.x, self.rows)
    }

    fn gradient(&self, dout: &[f64]) -> Self {
        let mut lin = self.lin.zeros_like();
        let mut x = vec![0.0; self.x.len()];
        self.lin
            .backward_rows(&self.x, self.rows, dout, &mut lin, Some(&mut x));
        Self {
            lin,
            x,
            rows: self.rows,
        }
    }
}

#[derive(Clone)]
struct ConvCase {
    conv: Conv2d<f64>,
    input: Field<f64>,
    relu: bool,
}

impl Case for ConvCase {
    fn slots(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        conv_slots(&mut out, "conv", &mut self.conv);
        out.push(("input".into(), self.input.as_mut_slice()));
        out
    }

    fn output(&self) -> Vec<f64> {
        let mut y = self.conv.forward(&self.input);
        if self.relu {
            relu_inplace(y.as_mut_slice());
        }
        y.into_vec()
    }

    fn gradient(&self, dout: &[f64]) -> Self {
        let mut dy = Field::from_vec(self.input.shape().with_c(self.conv.c_out()), dout.to_vec());
        if self.relu {
            let y = self.output();
            relu_backward_inplace(dy.as_mut_slice(), &y);
        }
        let mut conv = self.conv.zeros_like();
        let input = self
            .conv
            .backward(&self.input, &dy, &mut conv, true)
            .expect("input gradient");
        Self {
            conv,
            input,
            relu: self.relu,
        }
    }
}

#[derive(Clone)]
struct GeneratorCase {
    gen: KernelGenerator<f64>,
    pooled: Vec<f64>,
    rows: usize,
}

impl Case for GeneratorCase {
    fn slots(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        linear_slots(&mut out, "fc1", &mut self.gen.fc1);
        linear_slots(&mut out, "fc2", &mut self.gen.fc2);
        linear_slots(&mut out, "kernel_gen", &mut self.gen.kernel_gen);
        out.push(("pooled".into(), &mut self.pooled));
        out
    }

    fn output(&self) -> Vec<f64> {
        self.gen.generate(&self.pooled, self.rows).0
    }

    fn gradient(&self, dout: &[f64]) -> Self {
        let (_, tape) = self.gen.generate(&self.pooled, self.rows);
        let mut gen = self.gen.zeros_like();
        let pooled = self.gen.backward(&tape, self.rows, dout, &mut gen);
        Self {
            gen,
            pooled,
            rows: self.rows,
        }
    }
}

#[derive(Clone)]
struct DynamicCase {
    input: Field<f64>,
    kernels: Vec<f64>,
    k: usize,
}

impl DynamicCase {
    fn stride(&self) -> usize {
        self.k * self.k * self.input.channels() * self.input.channels()
    }
}

impl Case for DynamicCase {
    fn slots(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("kernels".into(), &mut self.kernels),
            ("input".into(), self.input.as_mut_slice()),
        ]
    }

    fn output(&self) -> Vec<f64> {
        dynamic_conv_forward(&self.input, &self.kernels, self.stride(), self.k).into_vec()
    }

    fn gradient(&self, dout: &[f64]) -> Self {
        let s = self.input.shape();
        let dy = Field::from_vec(s, dout.to_vec());
        let mut kernels = vec![0.0; self.kernels.len()];
        let mut input = Field::zeros(s);
        dynamic_conv_backward(
            &self.input,
            &self.kernels,
            self.stride(),
            self.k,
            &dy,
            &mut kernels,
            &mut input,
        );
        Self {
            input,
            kernels,
            k: self.k,
        }
    }
}

#[derive(Clone)]
struct AngularCase {
    conv: AngularConv<f64>,
    input: Field<f64>,
}

impl Case for AngularCase {
    fn slots(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("angular.weight".into(), &mut self.conv.weight.data),
            ("angular.bias".into(), &mut self.conv.bias.data),
            ("input".into(), self.input.as_mut_slice()),
        ]
    }

    fn output(&self) -> Vec<f64> {
        self.conv.forward(&self.input).into_vec()
    }

    fn gradient(&self, dout: &[f64]) -> Self {
        let dy = Field::from_vec(self.input.shape().with_c(self.conv.c_out()), dout.to_vec());
        let mut conv = self.conv.zeros_like();
        let input = self.conv.backward(&self.input, &dy, &mut conv);
        Self { conv, input }
    }
}

#[derive(Clone)]
struct BlockCase {
    block: VascBlockParams<f64>,
    input: Field<f64>,
}

impl Case for BlockCase {
    fn slots(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        match &mut self.block.spatial {
            crate::model::SpatialKernel::Adaptive(g) => {
                linear_slots(&mut out, "fc1", &mut g.fc1);
                linear_slots(&mut out, "fc2", &mut g.fc2);
                linear_slots(&mut out, "kernel_gen", &mut g.kernel_gen);
            }
            crate::model::SpatialKernel::Static(t) => {
                out.push(("static_kernel".into(), &mut t.data))
            }
        }
        out.push(("angular.weight".into(), &mut self.block.angular.weight.data));
        out.push(("angular.bias".into(), &mut self.block.angular.bias.data));
        out.push(("input".into(), self.input.as_mut_slice()));
        out
    }

    fn output(&self) -> Vec<f64> {
        vasc_block_forward(&self.block, &self.input)
            .expect("block forward")
            .0
            .into_vec()
    }

    fn gradient(&self, dout: &[f64]) -> Self {
        let (_, tape) = vasc_block_forward(&self.block, &self.input).expect("block forward");
        let dy = Field::from_vec(self.input.shape(), dout.to_vec());
        let mut block = self.block.zeros_like();
        let input = vasc_block_backward(&self.block, &self.input, &tape, &dy, &mut block);
        Self { block, input }
    }
}

#[derive(Clone)]
struct FusionCase {
    ve: Vec<f64>,
    w: Vec<f64>,
    views: usize,
    c: usize,
}

impl Case for FusionCase {
    fn slots(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("view_exclusive".into(), &mut self.ve),
            ("weights".into(), &mut self.w),
        ]
    }

    fn output(&self) -> Vec<f64> {
        fuse(&self.ve, &self.w, self.views, self.c)
    }

    fn gradient(&self, dout: &[f64]) -> Self {
        let (ve, w) = fuse_backward(&self.ve, &self.w, dout, self.views, self.c);
        Self {
            ve,
            w,
            views: self.views,
            c: self.c,
        }
    }
}

/// Which head arrays are perturbed.
#[derive(Clone, Copy, PartialEq, Eq)]
enum HeadScope {
    All,
    /// Depth-perception conv and attention MLP only.
    DpBranch,
}

#[derive(Clone)]
struct HeadCase {
    head: DpvaParams<f64>,
    cfg: ModelConfig,
    input: Field<f64>,
    scope: HeadScope,
}

impl Case for HeadCase {
    fn slots(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        let all = self.scope == HeadScope::All;
        if all {
            conv_slots(&mut out, "expand", &mut self.head.expand);
        }
        conv_slots(&mut out, "dp", &mut self.head.dp);
        linear_slots(
            &mut out,
            "attention_hidden",
            &mut self.head.attention_hidden,
        );
        linear_slots(&mut out, "attention_out", &mut self.head.attention_out);
        if all {
            conv_slots(&mut out, "out", &mut self.head.out);
        }
        out.push(("input".into(), self.input.as_mut_slice()));
        out
    }

    fn output(&self) -> Vec<f64> {
        dpva_forward(&self.head, &self.cfg, &self.input, false)
            .expect("head forward")
            .0
            .into_vec()
    }

    fn gradient(&self, dout: &[f64]) -> Self {
        let (out, tape) =
            dpva_forward(&self.head, &self.cfg, &self.input, true).expect("head forward");
        let dy = Field::from_vec(out.shape(), dout.to_vec());
        let mut head = self.head.zeros_like();
        let input = dpva_backward(
            &self.head,
            &self.cfg,
            &self.input,
            &tape.expect("tape"),
            &dy,
            &mut head,
        );
        Self {
            head,
            cfg: self.cfg.clone(),
            input,
            scope: self.scope,
        }
    }
}

#[derive(Clone)]
struct ModelCase {
    params: ModelParams<f64>,
    cfg: ModelConfig,
    input: Field<f64>,
}

impl Case for ModelCase {
    fn slots(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = self
            .params
            .named_tensors_mut()
            .into_iter()
            .map(|(n, t): (String, &mut Tensor<f64>)| (n, t.data.as_mut_slice()))
            .collect();
        out.push(("input".into(), self.input.as_mut_slice()));
        out
    }

    fn output(&self) -> Vec<f64> {
        forward_field(&self.params, &self.cfg, &self.input)
            .expect("forward")
            .into_vec()
    }

    fn gradient(&self, dout: &[f64]) -> Self {
        let (out, tape) = forward_with_tape(&self.params, &self.cfg, &self.input).expect("forward");
        let dy = Field::from_vec(out.shape(), dout.to_vec());
        let mut params = self.params.zeros_like();
        let input = backward(&self.params, &self.cfg, &tape, &dy, &mut params);
        Self {
            params,
            cfg: self.cfg.clone(),
            input,
        }
    }
}

fn random_field(rng: &mut ChaCha8Rng, shape: LfShape, lo: f64, hi: f64) -> Field<f64> {
    Field::from_vec(
        shape,
        (0..shape.len()).map(|_| rng.gen_range(lo..hi)).collect(),
    )
}

/// Small model config whose angular size and width follow `shape`.
pub fn check_config(shape: LfShape) -> ModelConfig {
    ModelConfig {
        u: shape.u,
        v: shape.v,
        channels: shape.c,
        descriptor_width: 3,
        num_blocks: 2,
        attention_hidden: 6,
        residual: true,
        ..ModelConfig::default()
    }
}

/// Check one module at feature shape `shape` (`shape.c` is the width `C`).
pub fn grad_check(module: GradModule, shape: LfShape, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = check_config(shape);
    let c = shape.c;
    let feats = |rng: &mut ChaCha8Rng| random_field(rng, shape, -1.0, 1.0);
    match module {
        GradModule::Linear => {
            let rows = 5;
            let case = LinearCase {
                lin: Linear::init(&mut rng, c, c + 1),
                x: (0..rows * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                rows,
            };
            run(module, case, &mut rng)
        }
        GradModule::Stem | GradModule::OutputConv | GradModule::ExpandBranch => {
            let (k, cin, cout, relu) = match module {
                GradModule::Stem => (cfg.head_kernel, cfg.image_channels, c, true),
                GradModule::OutputConv => (cfg.head_kernel, c, cfg.image_channels, false),
                _ => (cfg.expand_kernel, c, shape.views() * c, false),
            };
            let conv = Conv2d::init(&mut rng, k, cin, cout, true);
            let input = random_field(&mut rng, shape.with_c(cin), -1.0, 1.0);
            run(module, ConvCase { conv, input, relu }, &mut rng)
        }
        GradModule::KernelGenerator => {
            let gen = KernelGenerator::init(&mut rng, c, cfg.descriptor_width, cfg.kernel_size);
            let rows = shape.views();
            let pooled = (0..rows * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            run(module, GeneratorCase { gen, pooled, rows }, &mut rng)
        }
        GradModule::DynamicConv => {
            let k = cfg.kernel_size;
            let input = feats(&mut rng);
            let kernels = (0..shape.views() * k * k * c * c)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect();
            run(module, DynamicCase { input, kernels, k }, &mut rng)
        }
        GradModule::AngularConv => {
            let conv = AngularConv::init(&mut rng, cfg.angular_kernel, c, c);
            let input = feats(&mut rng);
            run(module, AngularCase { conv, input }, &mut rng)
        }
        GradModule::VascBlock | GradModule::StaticVascBlock => {
            let block_cfg = ModelConfig {
                use_vasc: module == GradModule::VascBlock,
                ..cfg
            };
            let block = VascBlockParams::init(&mut rng, &block_cfg);
            let input = feats(&mut rng);
            run(module, BlockCase { block, input }, &mut rng)
        }
        GradModule::Fusion => {
            let (views, px) = (shape.views(), shape.x * shape.y);
            let ve = (0..px * views * c)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let w = (0..px * views * c)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            run(module, FusionCase { ve, w, views, c }, &mut rng)
        }
        GradModule::DpBranch | GradModule::Dpva => {
            let head = DpvaParams::init(&mut rng, &cfg);
            let input = feats(&mut rng);
            let scope = if module == GradModule::Dpva {
                HeadScope::All
            } else {
                HeadScope::DpBranch
            };
            run(
                module,
                HeadCase {
                    head,
                    cfg,
                    input,
                    scope,
                },
                &mut rng,
            )
        }
        GradModule::FullModel => {
            let params = ModelParams::init(&cfg, seed).expect("valid check config");
            let input = random_field(&mut rng, shape.with_c(cfg.image_channels), 0.0, 1.0);
            run(module, ModelCase { params, cfg, input }, &mut rng)
        }
    }
}

fn run<C: Case>(module: GradModule, case: C, rng: &mut ChaCha8Rng) -> GradReport {
    let y0 = case.output();
    let n = y0.len() as f64;
    let target: Vec<f64> = y0.iter().map(|y| y + rng.gen_range(-1.0..1.0)).collect();
    let objective = |c: &C| -> f64 {
        c.output()
            .iter()
            .zip(&target)
            .map(|(y, t)| (y - t).abs())
            .sum::<f64>()
            / n
    };
    let dout: Vec<f64> = y0
        .iter()
        .zip(&target)
        .map(|(y, t)| (y - t).signum() / n)
        .collect();
    let mut grad = case.gradient(&dout);
    let analytic: Vec<(String, Vec<f64>)> = grad
        .slots()
        .into_iter()
        .map(|(n, s)| (n, s.to_vec()))
        .collect();
    let f0 = objective(&case);
    // Central differences cannot resolve gradients below this, so they are
    // judged against it instead of against themselves.
    let resolution = ROUNDOFF * f64::EPSILON * f0.abs().max(1.0) / STEP / TOLERANCE;
    let mut report = GradReport {
        module,
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        resampled: 0,
    };
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tau = (1e-3 * scale).max(resolution);
        let picks: Vec<usize> = if g.len() <= SAMPLES {
            (0..g.len()).collect()
        } else {
            (0..SAMPLES).map(|_| rng.gen_range(0..g.len())).collect()
        };
        for mut j in picks {
            let mut tries = 0;
            loop {
                let eval = |delta: f64| {
                    let mut c = case.clone();
                    c.slots()[ti].1[j] += delta;
                    objective(&c)
                };
                let (fp, fm) = (eval(STEP), eval(-STEP));
                let num = (fp - fm) / (2.0 * STEP);
                let rel = (g[j] - num).abs() / g[j].abs().max(num.abs()).max(tau);
                if rel > TOLERANCE && tries < KINK_RETRIES {
                    let (fwd, bwd) = ((fp - f0) / STEP, (f0 - fm) / STEP);
                    if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()).max(tau) {
                        tries += 1;
                        report.resampled += 1;
                        j = rng.gen_range(0..g.len());
                        continue;
                    }
                }
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = format!("{name}[{j}]");
                }
                report.checked += 1;
                break;
            }
        }
    }
    report
}
