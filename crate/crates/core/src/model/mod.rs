//! The deblurring network: a per-view stem, a stack of view-adaptive blocks
//! and the view-attention head.

pub mod checkpoint;
mod config;
mod count;
pub mod dpva;
mod params;
pub mod vasc;

pub use config::{Ablation, ModelConfig};
pub use count::{count_params, generator_param_formula, ParamEntry, ParamReport};
pub use dpva::{
    apply_ape, dpva_backward, dpva_forward, fuse, fuse_backward, reorganize_dp, DpvaTape,
};
pub use params::{DpvaParams, Head, KernelGenerator, ModelParams, SpatialKernel, VascBlockParams};
pub use vasc::{generate_view_kernel, vasc_block_backward, vasc_block_forward, VascTape};

use thiserror::Error;

use crate::lf::{LfError, LightField};
use crate::nn::{relu_backward_inplace, relu_inplace, Field, Real};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input has {found_u}x{found_v} views but the model is configured for {u}x{v}")]
    AngularMismatch {
        u: usize,
        v: usize,
        found_u: usize,
        found_v: usize,
    },
    #[error("checkpoint config differs in `{field}`: stored {stored}, expected {expected}")]
    ConfigMismatch {
        field: String,
        stored: String,
        expected: String,
    },
    #[error("network output is not finite")]
    NonFinite,
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    LightField(#[from] LfError),
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTape<T> {
    pub input: Field<T>,
    /// `features[0]` is the stem output, `features[i + 1]` the output of
    /// block `i`.
    pub features: Vec<Field<T>>,
    pub blocks: Vec<VascTape<T>>,
    pub head: Option<DpvaTape<T>>,
}

fn check_input<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &Field<T>,
) -> Result<(), ModelError> {
    let s = input.shape();
    if (s.u, s.v) != (cfg.u, cfg.v) {
        return Err(ModelError::AngularMismatch {
            u: cfg.u,
            v: cfg.v,
            found_u: s.u,
            found_v: s.v,
        });
    }
    if s.c != cfg.image_channels {
        return Err(ModelError::ShapeMismatch(format!(
            "input has {} channels, config expects {}",
            s.c, cfg.image_channels
        )));
    }
    if params.blocks.len() != cfg.num_blocks
        || params.stem.c_out() != cfg.channels
        || params.stem.c_in() != cfg.image_channels
        || matches!(params.head, Head::Dpva(_)) != cfg.use_dpva
    {
        return Err(ModelError::ShapeMismatch(
            "parameters were built for a different config".into(),
        ));
    }
    Ok(())
}

fn run<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &Field<T>,
    keep: bool,
) -> Result<(Field<T>, Option<ForwardTape<T>>), ModelError> {
    check_input(params, cfg, input)?;
    let mut feat = params.stem.forward(input);
    relu_inplace(feat.as_mut_slice());
    let mut features = Vec::new();
    let mut tapes = Vec::new();
    for block in &params.blocks {
        let (next, tape) = vasc_block_forward(block, &feat)?;
        if keep {
            features.push(std::mem::replace(&mut feat, next));
            tapes.push(tape);
        } else {
            feat = next;
        }
    }
    let (mut out, head) = match &params.head {
        Head::Dpva(d) => dpva_forward(d, cfg, &feat, keep)?,
        Head::Plain(conv) => (conv.forward(&feat), None),
    };
    if cfg.residual {
        out.add_assign(input);
    }
    let tape = keep.then(|| {
        features.push(feat);
        ForwardTape {
            input: input.clone(),
            features,
            blocks: tapes,
            head,
        }
    });
    Ok((out, tape))
}

/// Forward pass on a feature-typed light field.
pub fn forward_field<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &Field<T>,
) -> Result<Field<T>, ModelError> {
    Ok(run(params, cfg, input, false)?.0)
}

/// Forward pass that also records the activations for [`backward`].
pub fn forward_with_tape<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &Field<T>,
) -> Result<(Field<T>, ForwardTape<T>), ModelError> {
    let (out, tape) = run(params, cfg, input, true)?;
    Ok((out, tape.expect("tape requested")))
}

/// Accumulates parameter gradients of a scalar objective into `grads` given
/// its gradient `dout` with respect to the output; returns the input
/// gradient.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    tape: &ForwardTape<T>,
    dout: &Field<T>,
    grads: &mut ModelParams<T>,
) -> Field<T> {
    let last = tape.features.last().expect("stem output recorded");
    let mut dfeat = match (&params.head, &mut grads.head) {
        (Head::Dpva(d), Head::Dpva(gd)) => {
            let head_tape = tape.head.as_ref().expect("head tape recorded");
            dpva_backward(d, cfg, last, head_tape, dout, gd)
        }
        (Head::Plain(conv), Head::Plain(gc)) => {
            conv.backward(last, dout, gc, true).expect("input gradient")
        }
        _ => panic!("gradient buffers do not match the head layout"),
    };
    for (i, block) in params.blocks.iter().enumerate().rev() {
        dfeat = vasc_block_backward(
            block,
            &tape.features[i],
            &tape.blocks[i],
            &dfeat,
            &mut grads.blocks[i],
        );
    }
    relu_backward_inplace(dfeat.as_mut_slice(), tape.features[0].as_slice());
    let mut dinput = params
        .stem
        .backward(&tape.input, &dfeat, &mut grads.stem, true)
        .expect("input gradient");
    if cfg.residual {
        dinput.add_assign(dout);
    }
    dinput
}

/// Restore a blurred light field in a single pass over all views.
pub fn forward<T: Real>(
    lb: &LightField,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<LightField, ModelError> {
    let input = Field::<T>::from_light_field(lb);
    let out = forward_field(params, cfg, &input)?;
    if !out.is_finite() {
        return Err(ModelError::NonFinite);
    }
    Ok(out.to_light_field()?)
}
