//! Energy decay of the damped wave equation in a box whose horizontal faces
//! trap vertical rays.
//!
//! Modules follow the workflow: [`geometry`] and [`rays`] describe the domain
//! and which rays escape the damping, [`spectral`] and [`fdtd`] evolve
//! solutions, [`packets`] builds the reflected Gaussian packets, and
//! [`decay`] reads rates off energy traces. [`cli`] and [`config`] back the
//! `dampwave` binary.

// NaN must fail validation, so negated comparisons are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod decay;
pub mod error;
pub mod fdtd;
pub mod geometry;
pub mod packets;
pub mod plot;
pub mod quadrature;
pub mod rays;
pub mod spectral;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/domain.md")]
    mod domain {}
    #[doc = include_str!("../../../book/src/rays.md")]
    mod rays {}
    #[doc = include_str!("../../../book/src/galerkin.md")]
    mod galerkin {}
    #[doc = include_str!("../../../book/src/fdtd.md")]
    mod fdtd {}
    #[doc = include_str!("../../../book/src/packets.md")]
    mod packets {}
    #[doc = include_str!("../../../book/src/decay.md")]
    mod decay {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
