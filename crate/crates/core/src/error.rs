use thiserror::Error;

use crate::lattice::Site;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("site {0:?} is not in the backbone")]
    NotInBackbone(Site),
    #[error("site {0:?} passed the horizon test but none of its successors does; raise the horizon")]
    HorizonExhausted(Site),
    #[error("no backbone origin after {0} rejected environments")]
    RejectionCapExceeded(u64),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("window too large for exhaustive enumeration: {0} states")]
    WindowTooLarge(usize),
    #[error("weight field did not coalesce within {0} steps")]
    NoCoalescence(u64),
}

pub type Result<T> = std::result::Result<T, Error>;
