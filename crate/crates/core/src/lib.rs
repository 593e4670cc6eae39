//! Dual-stream wind hazard risk classification.
//!
//! A random forest reads standardized station numerics, a transformer
//! encoder reads the event narrative, and a small meta-classifier makes the
//! final call from their concatenated outputs. See the guide in `book/`.

pub mod cli;
pub mod config;
pub mod digest;
pub mod domain;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod ingest;
pub mod interpret;
pub mod optim;
pub mod synth;
pub mod tabular;
pub mod text;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/numeric-stream.md")]
    mod numeric_stream {}
    #[doc = include_str!("../../../book/src/text-stream.md")]
    mod text_stream {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/interpretability.md")]
    mod interpretability {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
