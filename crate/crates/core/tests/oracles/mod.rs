//! Test-only reference implementations, kept independent of the library
//! code paths they check.
#![allow(dead_code)]

pub mod bm25;
pub mod schedule;
