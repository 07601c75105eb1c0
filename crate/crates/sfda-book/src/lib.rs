//! The guide's chapters, included verbatim as module docs so that every
//! code block in `book/src/*.md` compiles and runs under
//! `cargo test --doc`. The rendered book (`mdbook build book`) and these
//! doc-tests share one source of truth, so snippets cannot rot.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/counting-disagreement.md")]
pub mod counting_disagreement {}

#[doc = include_str!("../../../book/src/tensors-and-gradients.md")]
pub mod tensors_and_gradients {}

#[doc = include_str!("../../../book/src/model-and-losses.md")]
pub mod model_and_losses {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
