use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("need at least {needed} correspondences, got {got}")]
    Arity { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("matrix is singular or near-singular")]
    Singular,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no correspondence at grid cell ({row}, {col})")]
    NoCorrespondence { row: usize, col: usize },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("instance masks overlap in view {view}")]
    Conflict { view: usize },
    #[error("invalid scene: {0}")]
    Spec(String),
}

impl Error {
    /// True for errors caused by values outside their mathematical domain
    /// rather than by malformed configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::BehindCamera { .. }
                | Error::Geometry(_)
                | Error::Degenerate(_)
                | Error::PointAtInfinity
                | Error::Singular
                | Error::Numeric(_)
        )
    }
}
