//! Compiles the guide's code blocks as doc-tests so the book cannot drift from the crate.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/delays.md")]
pub mod delays {}
#[doc = include_str!("../../../book/src/spectrum.md")]
pub mod spectrum {}
#[doc = include_str!("../../../book/src/averaging.md")]
pub mod averaging {}
#[doc = include_str!("../../../book/src/spread.md")]
pub mod spread {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
