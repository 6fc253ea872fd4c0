//! Doped structured matrices.
//!
//! A weight matrix is stored as a structured term (Kronecker product,
//! low-rank factorization, or a hybrid of a dense block and a low-rank
//! block) plus a very sparse additive "doping" term. The crate provides the
//! storage and matvec kernels ([`linalg`]), the doped weight abstraction with
//! co-matrix dropout and MAC/compression accounting ([`doped`]), and the
//! step-indexed training controllers ([`schedules`]).

pub mod doped;
pub mod error;
pub mod linalg;
pub mod schedules;

pub use error::{Error, Result};
