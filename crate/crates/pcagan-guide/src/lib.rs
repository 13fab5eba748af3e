// The book in `book/` is plain mdbook, which cannot compile its listings
// against a workspace crate. Each chapter is pulled in here as the doc
// comment of an empty module so `cargo test --doc -p pcagan-guide` runs
// every listing against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/gaussian_world.md")]
pub mod gaussian_world {}
#[doc = include_str!("../../../book/src/netcore.md")]
pub mod netcore {}
#[doc = include_str!("../../../book/src/regularizers.md")]
pub mod regularizers {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/datasets_cli.md")]
pub mod datasets_cli {}
