use thiserror::Error;

/// Errors produced by the chain, transport, coupling, and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent caller input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A state label that does not exist in the chain.
    #[error("unknown state label {0:?}")]
    UnknownState(String),

    /// A request that exceeds a documented size or horizon cap.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// The transport solver failed to certify an optimum.
    #[error("solver failure: {msg} (residual {residual:.3e})")]
    Solver { msg: String, residual: f64 },

    /// An iterative routine did not reach its target residual.
    #[error("no convergence: {msg} (residual {residual:.3e})")]
    NonConvergence { msg: String, residual: f64 },

    /// A simulation step produced an invalid state.
    #[error("simulation failure at step {step}: {msg}")]
    Simulation { step: usize, msg: String },

    /// A model violates one of its declared structural bounds.
    #[error("model violation: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, Error>;
