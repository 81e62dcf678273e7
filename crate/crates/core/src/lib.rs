//! Behavior-augmented relevance scoring at desk scale.
//!
//! This crate contains the full model stack: a small dense-tensor library
//! with reverse-mode automatic differentiation, click-log mining of behavior
//! neighbors, a micro-transformer text encoder, the dual-tower relevance
//! scorer with neighbor co-attention, its self-supervised objectives,
//! a deterministic training loop, ranking metrics, and a seeded synthetic
//! world generator.
//!
//! The crate is `no_std`-compatible (an allocator is required). File formats,
//! the command-line driver, and wall-clock benchmarking live in the companion
//! `barl-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod graph;
pub mod loss;
pub mod train;
pub mod model;
pub mod numerics;
pub mod text;

pub use error::{CoreError, Result};
