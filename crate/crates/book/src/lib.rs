//! The guide under `book/src`, compiled so that every Rust listing in it
//! runs as a doctest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/algebra.md")]
pub mod algebra {}
#[doc = include_str!("../../../book/src/integration.md")]
pub mod integration {}
#[doc = include_str!("../../../book/src/controller.md")]
pub mod controller {}
#[doc = include_str!("../../../book/src/optimal.md")]
pub mod optimal {}
#[doc = include_str!("../../../book/src/linear.md")]
pub mod linear {}
#[doc = include_str!("../../../book/src/taylor_maps.md")]
pub mod taylor_maps {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
