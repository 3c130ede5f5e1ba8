//! The chapters of the book under `book/src`, one module each, so that
//! `cargo test --doc` runs every snippet against the current library.
//!
//! mdbook cannot link the snippets against a workspace crate on its own.
//! A failing doc-test is reported under the module of its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/free-density.md")]
pub mod free_density {}
#[doc = include_str!("../../../book/src/grid.md")]
pub mod grid {}
#[doc = include_str!("../../../book/src/hardy.md")]
pub mod hardy {}
#[doc = include_str!("../../../book/src/perturbation.md")]
pub mod perturbation {}
#[doc = include_str!("../../../book/src/monte-carlo.md")]
pub mod monte_carlo {}
#[doc = include_str!("../../../book/src/checks.md")]
pub mod checks {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
