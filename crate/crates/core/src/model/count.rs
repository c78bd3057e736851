use std::fmt;

use super::ModelConfig;

/// Scalars in one kernel generator: `C*C_K + C_K^2 + C_K*C^2*k^2`, plus
/// `C_K + C_K + C^2*k^2` biases when `biases` is set.
pub fn generator_param_formula(c: usize, ck: usize, k: usize, biases: bool) -> usize {
    let weights = c * ck + ck * ck + ck * c * c * k * k;
    weights + if biases { 2 * ck + c * c * k * k } else { 0 }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub module: String,
    /// How many copies of the module the network holds.
    pub copies: usize,
    /// Scalars per copy.
    pub each: usize,
}

impl ParamEntry {
    pub fn total(&self) -> usize {
        self.copies * self.each
    }
}

/// Trainable scalar counts per module, derived from the config alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub entries: Vec<ParamEntry>,
}

impl ParamReport {
    pub fn total(&self) -> usize {
        self.entries.iter().map(ParamEntry::total).sum()
    }

    pub fn get(&self, module: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.module == module)
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<26} {:>6} {:>10} {:>10}",
            "module", "copies", "each", "total"
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<26} {:>6} {:>10} {:>10}",
                e.module,
                e.copies,
                e.each,
                e.total()
            )?;
        }
        let total = self.total();
        writeln!(
            f,
            "{:<26} {:>6} {:>10} {:>10} ({:.3} M)",
            "total",
            "",
            "",
            total,
            total as f64 / 1e6
        )
    }
}

fn conv(k: usize, cin: usize, cout: usize) -> usize {
    k * k * cin * cout + cout
}

fn linear(din: usize, dout: usize) -> usize {
    din * dout + dout
}

pub fn count_params(cfg: &ModelConfig) -> ParamReport {
    let (c, n, ic) = (cfg.channels, cfg.views(), cfg.image_channels);
    let b = cfg.num_blocks;
    let entry = |module: &str, copies: usize, each: usize| ParamEntry {
        module: module.to_string(),
        copies,
        each,
    };
    let mut entries = vec![entry("stem", 1, conv(cfg.head_kernel, ic, c))];
    if cfg.use_vasc {
        entries.push(entry(
            "vasc.kernel_generator",
            b,
            generator_param_formula(c, cfg.descriptor_width, cfg.kernel_size, true),
        ));
    } else {
        entries.push(entry(
            "vasc.static_kernel",
            b,
            cfg.kernel_size.pow(2) * c * c,
        ));
    }
    entries.push(entry(
        "vasc.angular_conv",
        b,
        conv(cfg.angular_kernel, c, c),
    ));
    if cfg.use_dpva {
        entries.extend([
            entry("dpva.expand_conv", 1, conv(cfg.expand_kernel, c, n * c)),
            entry("dpva.dp_conv", 1, conv(cfg.head_kernel, c, n)),
            entry(
                "dpva.attention_mlp",
                1,
                linear(cfg.attention_in(), cfg.attention_hidden)
                    + linear(cfg.attention_hidden, n * c),
            ),
            entry("dpva.out_conv", 1, conv(cfg.head_kernel, c, ic)),
        ]);
    } else {
        entries.push(entry("head.out_conv", 1, conv(cfg.head_kernel, c, ic)));
    }
    ParamReport { entries }
}
