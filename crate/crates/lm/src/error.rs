use thiserror::Error;

pub type Result<T> = std::result::Result<T, LmError>;

#[derive(Debug, Error)]
pub enum LmError {
    #[error(transparent)]
    Core(#[from] doping_core::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step} (layer {layer}, max |grad| {max_grad:e})")]
    NonFinite {
        step: u64,
        layer: usize,
        max_grad: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
