//! Keeps the guide's code samples compiling: every chapter of `book/` is
//! included as a doc comment here, so `cargo test --doc` runs its snippets.
#![cfg(doctest)]

#[doc = include_str!("../../../book/src/introduction.md")]
pub struct Introduction;

#[doc = include_str!("../../../book/src/protocols.md")]
pub struct Protocols;

#[doc = include_str!("../../../book/src/stopping.md")]
pub struct Stopping;

#[doc = include_str!("../../../book/src/chains.md")]
pub struct Chains;

#[doc = include_str!("../../../book/src/payoffs.md")]
pub struct Payoffs;

#[doc = include_str!("../../../book/src/family.md")]
pub struct Family;

#[doc = include_str!("../../../book/src/reduction.md")]
pub struct Reduction;

#[doc = include_str!("../../../book/src/diagnostics.md")]
pub struct Diagnostics;

#[doc = include_str!("../../../book/src/cli.md")]
pub struct Cli;
