//! Kernels, h-functions, messages and the passes built from them.

mod hfun;
pub mod marginal;
pub mod optic;
pub mod passes;
pub mod rules;
pub mod sample;
mod spec;

pub use hfun::{HFun, Message};
pub use spec::{
    AffineGaussian, GammaKernel, GaussianDrift, KernelDoc, KernelSpec, ParticleTransition, RateDoc,
    RateFn, SineDrift,
};
