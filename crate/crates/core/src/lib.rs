//! Quantized perturbed cat maps on the unit torus.
//!
//! The crate covers the classical map and its Lyapunov exponents
//! ([`classical`]), the N-dimensional unitary propagators ([`quantum`]),
//! eigenphase spectra and local density of states widths ([`spectral`]),
//! and Loschmidt echo ensembles with decay-rate fits ([`echo`]).
//! Propagators and eigensystems can be persisted with [`cache`].

// Links the system OpenBLAS that backs ndarray's gemm and the LAPACK calls.
extern crate blas_src;
extern crate openblas_src;

pub mod cache;
pub mod classical;
pub mod echo;
mod error;
pub mod linalg;
pub mod quantum;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

pub use classical::{CatMap, LyapunovEstimate, ShearWindow, TorusPoint};
pub use echo::{CoherentState, DecayFit, EchoCurve, FitQuality};
pub use quantum::{HilbertDim, PerturbationKind, PerturbationSpec, Propagator, ScaledStrength};
pub use spectral::{EigenSystem, LdosDistribution, WidthEstimate};
