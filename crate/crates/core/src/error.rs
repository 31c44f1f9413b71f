use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("ring parameters differ between operands")]
    ParamsMismatch,
    #[error("invalid ring parameters: {0}")]
    InvalidParams(String),
    #[error("value {value} outside the representable range ±{limit}")]
    RangeOverflow { value: f64, limit: f64 },
    #[error("additive sharing needs at least 2 parties, got {0}")]
    InvalidPartyCount(usize),
    #[error("missing share sum from node {0}")]
    MissingShare(usize),
    #[error("duplicate share sum from node {0}")]
    DuplicateShare(usize),
    #[error("loss is not finite ({0}); training diverged")]
    NonFiniteLoss(f64),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("invalid partition plan: {0}")]
    InvalidPlan(String),
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("malformed dataset: {0}")]
    Dataset(String),
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn shape_check(
    op: &'static str,
    ok: bool,
    left: (usize, usize),
    right: (usize, usize),
) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { op, left, right })
    }
}
