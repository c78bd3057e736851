use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters. Ablations are expressed as flags so every
/// variant is built by the same code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Angular rows `U`.
    pub u: usize,
    /// Angular columns `V`.
    pub v: usize,
    /// Image channels in and out (3 for RGB).
    pub image_channels: usize,
    /// Feature width `C`.
    pub channels: usize,
    /// Spatial kernel size `k` of the view-adaptive convolution.
    pub kernel_size: usize,
    /// Width `C_K` of the two descriptor layers in the kernel generator.
    pub descriptor_width: usize,
    pub num_blocks: usize,
    /// Angular fusion kernel size `k_a`.
    pub angular_kernel: usize,
    /// Kernel size of the stem, depth-perception and output convolutions.
    pub head_kernel: usize,
    /// Kernel size of the `C -> U*V*C` view-exclusive expansion.
    pub expand_kernel: usize,
    /// Hidden width of the per-pixel attention MLP.
    pub attention_hidden: usize,
    pub use_vasc: bool,
    pub use_dpva: bool,
    pub use_ape: bool,
    /// Add the blurred input to the network output.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            u: 5,
            v: 5,
            image_channels: 3,
            channels: 32,
            kernel_size: 3,
            descriptor_width: 4,
            num_blocks: 8,
            angular_kernel: 3,
            head_kernel: 3,
            expand_kernel: 1,
            attention_hidden: 64,
            use_vasc: true,
            use_dpva: true,
            use_ape: true,
            residual: false,
        }
    }
}

impl ModelConfig {
    pub fn views(&self) -> usize {
        self.u * self.v
    }

    /// Width of the attention MLP input: one channel per view, plus the two
    /// angular coordinates when position embedding is on.
    pub fn attention_in(&self) -> usize {
        self.views() + if self.use_ape { 2 } else { 0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.u == 0 || self.v == 0 {
            return bad(format!(
                "angular size {}x{} must be positive",
                self.u, self.v
            ));
        }
        for (name, value) in [
            ("image_channels", self.image_channels),
            ("channels", self.channels),
            ("descriptor_width", self.descriptor_width),
            ("num_blocks", self.num_blocks),
            ("attention_hidden", self.attention_hidden),
        ] {
            if value == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, value) in [
            ("kernel_size", self.kernel_size),
            ("angular_kernel", self.angular_kernel),
            ("head_kernel", self.head_kernel),
            ("expand_kernel", self.expand_kernel),
        ] {
            if value % 2 == 0 {
                return bad(format!("{name} must be odd, got {value}"));
            }
        }
        Ok(())
    }

    /// The full architecture with one flag switched off.
    pub fn ablation(&self, ablation: Ablation) -> Self {
        let mut cfg = self.clone();
        match ablation {
            Ablation::Full => {}
            Ablation::NoVasc => cfg.use_vasc = false,
            Ablation::NoDpva => cfg.use_dpva = false,
            Ablation::NoApe => cfg.use_ape = false,
        }
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    NoVasc,
    NoDpva,
    NoApe,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Self::Full, Self::NoVasc, Self::NoDpva, Self::NoApe];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoVasc => "w/o VASC",
            Self::NoDpva => "w/o DPVA",
            Self::NoApe => "w/o APE",
        }
    }
}
