//! Spectral analysis of the Dirichlet Laplacian in a conical layer.

pub mod geometry;
pub mod oracles;
pub mod sparse;
pub mod assembly;
pub mod eigensolve;
pub mod analysis;
pub mod cli_io;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/assembly.md")]
    mod assembly {}
    #[doc = include_str!("../../../book/src/eigensolve.md")]
    mod eigensolve {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
