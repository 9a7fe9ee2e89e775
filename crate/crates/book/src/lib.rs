//! The guide in `book/` compiled as documentation, so `cargo test` runs
//! every code block in it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus {}
#[doc = include_str!("../../../book/src/selection.md")]
pub mod selection {}
#[doc = include_str!("../../../book/src/recording.md")]
pub mod recording {}
#[doc = include_str!("../../../book/src/alignment.md")]
pub mod alignment {}
#[doc = include_str!("../../../book/src/quality.md")]
pub mod quality {}
#[doc = include_str!("../../../book/src/annotation.md")]
pub mod annotation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
