//! The guide's chapters, compiled so that `cargo test` runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/divergence.md")]
pub mod divergence {}
#[doc = include_str!("../../../book/src/reward.md")]
pub mod reward {}
#[doc = include_str!("../../../book/src/ppo.md")]
pub mod ppo {}
#[doc = include_str!("../../../book/src/pipelines.md")]
pub mod pipelines {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/sessions.md")]
pub mod sessions {}
