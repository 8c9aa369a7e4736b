use alloc::string::String;

/// Errors raised by profiling, delay evaluation, selection and simulation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// The architecture is structurally invalid.
    #[error("invalid architecture: {0}")]
    Architecture(String),
    /// A layer's declared shape disagrees with the shape implied by its input.
    #[error("layer {layer}: {message}")]
    Shape {
        /// 1-based layer index.
        layer: usize,
        /// What went wrong.
        message: String,
    },
    /// A profile quantity does not fit in 64 bits.
    #[error("arithmetic overflow while profiling layer {layer}")]
    Overflow {
        /// 1-based layer index.
        layer: usize,
    },
    /// Cut index outside `1..=M-1`.
    #[error("cut layer {cut} is not a valid split point for a {layers}-layer network (expected 1..={max})", max = layers.saturating_sub(1))]
    InvalidCut {
        /// Requested cut.
        cut: usize,
        /// Number of layers `M`.
        layers: usize,
    },
    /// A resource value was zero, negative or not finite.
    #[error("invalid resource state: {0}")]
    Resource(&'static str),
    /// The server is not faster than the client, so the region table does not apply.
    #[error("server speed {server_flops} FLOP/s does not exceed client speed {client_flops} FLOP/s; region lookup requires f_s > f_k")]
    ServerNotFaster {
        /// Client speed.
        client_flops: f64,
        /// Server speed.
        server_flops: f64,
    },
    /// Invalid training or Monte Carlo configuration.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Empty input where at least one element is required.
    #[error("{0} is empty")]
    Empty(&'static str),
    /// Two series that must be aligned have incompatible lengths.
    #[error("{what}: expected at least {expected} entries, got {actual}")]
    Length {
        /// Which series.
        what: &'static str,
        /// Minimum required.
        expected: usize,
        /// Provided.
        actual: usize,
    },
}
