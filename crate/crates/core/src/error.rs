use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid contour: {0}")]
    InvalidContour(String),
    #[error("contour encloses no pixel")]
    EmptyContour,
    #[error("contour collapsed")]
    ContourCollapsed,
    #[error("contour has zero perimeter")]
    ZeroPerimeter,
    #[error("empty region")]
    EmptyRegion,
    #[error("mask has no interior pixel")]
    EmptyMask,
    #[error("duplicate isoline centers")]
    DuplicateCenters,
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("odd spatial dimensions {0}x{1}")]
    OddDimensions(usize, usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated container: {0}")]
    Truncated(String),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("insufficient tissue: {0} pixels")]
    InsufficientTissue(usize),
    #[error("isoline/scale index mismatch: {0}")]
    IndexMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
