use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        detail: String,
    },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("grid_sample: coordinate {value} at index {index} lies outside [0, 1]")]
    GridOutOfRange { index: usize, value: f64 },

    #[error("grid denominator is zero at cell ({row}, {col})")]
    ZeroDenominator { row: usize, col: usize },

    #[error("glyph of size {glyph} cannot be placed in a {height}x{width} image")]
    Placement {
        glyph: usize,
        height: usize,
        width: usize,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}

impl Error {
    pub(crate) fn shape(op: &'static str, dim: &'static str, detail: String) -> Self {
        Error::Shape { op, dim, detail }
    }

    pub(crate) fn invalid(op: &'static str, detail: String) -> Self {
        Error::InvalidArgument { op, detail }
    }
}
