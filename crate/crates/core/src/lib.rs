//! Transformer attention blocks, sequence pooling operators, closed-form
//! bounds on how far a pooled output can move under an input perturbation,
//! and Monte Carlo machinery that checks those bounds.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: dense matrices, operator norms, softmax, Lambert W, seeded streams.
//! * [`model`]: attention heads (dot-product, L2, scaled cosine), center-norm,
//!   feed-forward and Post-LN blocks.
//! * [`pooling`]: average, sum, max, last-token, weighted-average and attention pooling.
//! * [`bounds`]: per-layer constants and the expressivity bound `γ`.
//! * [`empirics`]: perturbation experiments and a finite-difference Jacobian check.
//! * [`trainer`]: frozen-backbone training of learnable pooling on synthetic tasks.

pub mod bounds;
pub mod empirics;
mod error;
pub mod linalg;
pub mod model;
pub mod pooling;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/linalg.md")]
    struct Linalg;
    #[doc = include_str!("../../../book/src/attention.md")]
    struct Attention;
    #[doc = include_str!("../../../book/src/pooling.md")]
    struct Pooling;
    #[doc = include_str!("../../../book/src/bounds.md")]
    struct Bounds;
    #[doc = include_str!("../../../book/src/empirics.md")]
    struct Empirics;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
}
