//! Architecture strings and experiment configuration.
//!
//! Grammar: `[name ':'] item (';' item)*` with case-insensitive keywords
//!
//! ```text
//! Conv N HxW | LocalConv N HxW | Maxpool n [,] [stride s] | Drop p
//! Full [conn.] N | Sum | Output
//! ```
//!
//! Conv keeps the spatial extent (zero same-padding). Maxpool maps an
//! extent `e` to `ceil(e / s)`, stride defaulting to 2.

mod arch;
mod config;

pub use arch::{
    infer_shapes, parse_arch, preset, LayerSpec, NetSpec, ParseError, ParseErrorKind, Shape3, DEEPERNET, DEEPNET,
    DEEPNET_S, SIMPNET,
};
pub use config::{
    load_config, parse_config, ConfigError, DatasetKind, ExperimentConfig, FeedbackRule, LossKind, Mode, CONFIG_KEYS,
};

/// Resolve a preset name or parse the architecture text directly.
pub fn resolve_arch(arch: &str, input: Shape3, classes: usize) -> Result<NetSpec, ParseError> {
    let text = preset(arch.trim()).unwrap_or(arch);
    parse_arch(text, input, classes)
}
