//! The guide's chapters as modules, so `cargo test --doc` runs every listing
//! against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("../../../book/src/reading-order.md")]
pub mod reading_order {}
#[doc = include_str!("../../../book/src/annotations.md")]
pub mod annotations {}
#[doc = include_str!("../../../book/src/quality-control.md")]
pub mod quality_control {}
#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
