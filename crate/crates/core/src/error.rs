use thiserror::Error;

use crate::tiling::Provenance;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid layer shape: {0}")]
    Shape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("layer cannot map: elastic group needs {group} cores but the array has {cores}")]
    Unmappable { group: usize, cores: usize },

    #[error("no pixel-shifter adapter for K_H={kernel} S_H={stride} (F={shift}, max F {max_shift})")]
    UnsupportedAdapter {
        kernel: usize,
        stride: usize,
        shift: usize,
        max_shift: usize,
    },

    #[error("accumulator overflow at {site}: value does not fit in {bits} bits")]
    Overflow { site: String, bits: u32 },

    #[error("value {value} does not fit in a {bits}-bit {what} word")]
    WordRange { what: &'static str, value: i64, bits: u32 },

    #[error("weights rotator underrun: {prefetched} of {needed} words prefetched at bank switch")]
    RotatorUnderrun { prefetched: u64, needed: u64 },

    #[error("weights rotator too shallow: {needed} beats per rotation, depth {depth}")]
    RotatorCapacity { needed: usize, depth: usize },

    #[error("output pipe overrun: {occupancy} words queued, capacity {capacity}")]
    OutputOverrun { occupancy: usize, capacity: usize },

    #[error("malformed {provenance:?} stream: {reason}")]
    MalformedStream { provenance: Provenance, reason: String },

    #[error("invalid config header: {0}")]
    Header(String),

    #[error("unknown network '{0}'")]
    UnknownNetwork(String),

    #[error("invalid engine config: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
