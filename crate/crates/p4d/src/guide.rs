//! The book's chapters, included as module docs so every code block in the
//! guide is compiled and run by `cargo test --doc`. The rendered book lives
//! in `book/` at the repository root; this module is what keeps its
//! snippets honest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/scenes.md")]
pub mod scenes {}

#[doc = include_str!("../../../book/src/nnkit.md")]
pub mod nnkit {}

#[doc = include_str!("../../../book/src/teacher.md")]
pub mod teacher {}

#[doc = include_str!("../../../book/src/student.md")]
pub mod student {}

#[doc = include_str!("../../../book/src/distill.md")]
pub mod distill {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
