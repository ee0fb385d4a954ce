//! Patch-based neural field reconstruction toolkit.
//!
//! A scene is a tri-plane feature grid decoded by a small MLP into color and
//! density ([`triplane`]), rendered by a two-pass volumetric ray marcher
//! ([`renderer`]) through cameras on a sphere looking at the origin
//! ([`geometry`]). Training never sees full frames: the sampler draws square
//! sub-patches whose scale follows an annealed Beta (or uniform) schedule
//! ([`sampler`]), and a reconstruction loop fits scenes against procedural
//! references with Adam ([`trainer`]). [`modulation`] provides the
//! scale-conditioned convolution gating used to make convolutional filters
//! patch-aware.
//!
//! Everything is deterministic for a fixed seed: renderers give each pixel its
//! own counter-derived random substream, so results do not depend on thread
//! count or scheduling.

pub mod geometry;
pub mod image;
pub mod modulation;
pub mod renderer;
pub mod sampler;
pub mod trainer;
pub mod triplane;

use std::fmt;
use std::io;

#[derive(Debug)]
pub enum Error {
    /// Caller-supplied data failed validation (bad range, shape mismatch,
    /// empty input).
    InvalidInput(String),
    /// A serialized artifact could not be parsed (wrong magic, truncated or
    /// trailing payload).
    Format(String),
    /// Training produced a non-finite loss.
    Diverged { iter: u64, loss: f64 },
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Format(msg) => write!(f, "malformed artifact: {msg}"),
            Error::Diverged { iter, loss } => {
                write!(f, "training diverged at iteration {iter} (loss {loss})")
            }
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
