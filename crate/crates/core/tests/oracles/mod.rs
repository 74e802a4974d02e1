//! Brute-force reference implementations shared by integration tests.
#![allow(dead_code)]

pub mod beam;
pub mod bpe;
