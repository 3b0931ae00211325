//! Renormalisation of near-linear flows on the torus: truncated Fourier
//! fields, resonant-mode elimination, the rescaled return map and its
//! linearisation at a linear flow.

pub mod basis;
pub mod elimination;
pub mod experiment;
pub mod flow;
pub mod fourier;
pub mod linalg;
pub mod renorm;
pub mod resonance;
pub mod spectral;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error at {}: {message}", path.as_deref().unwrap_or("."))]
    Config {
        message: String,
        path: Option<String>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Fourier(#[from] fourier::FourierError),
    #[error(transparent)]
    Resonance(#[from] resonance::ResonanceError),
    #[error(transparent)]
    Basis(#[from] basis::BasisError),
    #[error(transparent)]
    Elimination(#[from] elimination::ElimError),
    #[error(transparent)]
    Renorm(#[from] renorm::RenormError),
    #[error(transparent)]
    Spectral(#[from] spectral::SpectralError),
    #[error(transparent)]
    Flow(#[from] flow::FlowError),
    /// A failure recorded in a report rather than raised as a typed error.
    #[error("{0}")]
    Numerical(String),
}

impl Error {
    /// 2 for bad input or configuration, 1 for numerical failure.
    pub fn exit_code(&self) -> u8 {
        use basis::BasisError as B;
        use fourier::FourierError as F;
        use renorm::RenormError as R;
        match self {
            Error::Config { .. } | Error::Io { .. } | Error::Resonance(_) => 2,
            Error::Fourier(
                F::ModeOutOfWindow { .. } | F::DimensionMismatch { .. } | F::Invalid(_),
            ) => 2,
            Error::Basis(B::Certification(_)) | Error::Renorm(R::Basis(B::Certification(_))) => 1,
            Error::Basis(_) | Error::Renorm(R::Config(_) | R::Basis(_)) => 2,
            Error::Flow(flow::FlowError::NotReal | flow::FlowError::DimensionMismatch { .. }) => 2,
            _ => 1,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
            Error::Fourier(_) => "fourier",
            Error::Resonance(_) => "resonance",
            Error::Basis(_) => "basis",
            Error::Elimination(_) => "elimination",
            Error::Renorm(_) => "renorm",
            Error::Spectral(_) => "spectral",
            Error::Flow(_) => "flow",
            Error::Numerical(_) => "numerical",
        }
    }

    /// JSON path for config errors, file path for I/O errors.
    pub fn path(&self) -> Option<String> {
        match self {
            Error::Config { path, .. } => path.clone(),
            Error::Io { path, .. } => Some(path.display().to_string()),
            _ => None,
        }
    }
}
