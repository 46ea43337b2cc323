//! Deconfounder pipeline for multiple causes under unobserved confounding.

pub mod ace;
pub mod data;
pub mod error;
pub mod linalg;
pub mod outcome;
pub mod plfm;
pub mod ppc;
pub mod rng;
pub mod scalar;
pub mod special;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::Real;

pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type MaskedMatrix64 = data::MaskedMatrix<f64>;
pub type MaskedMatrix32 = data::MaskedMatrix<f32>;
pub type PosteriorDraws64 = plfm::PosteriorDraws<f64>;
pub type PosteriorDraws32 = plfm::PosteriorDraws<f32>;
pub type SubstituteConfounder64 = plfm::SubstituteConfounder<f64>;
pub type SubstituteConfounder32 = plfm::SubstituteConfounder<f32>;
pub type ResidualizedDesign64 = outcome::ResidualizedDesign<f64>;
pub type ResidualizedDesign32 = outcome::ResidualizedDesign<f32>;
pub type BetaRegFit64 = outcome::BetaRegFit<f64>;
pub type BetaRegFit32 = outcome::BetaRegFit<f32>;
pub type Standardization64 = data::Standardization<f64>;
