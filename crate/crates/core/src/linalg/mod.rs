//! Dense, CSR and Kronecker-factored storage with straightforward matvec
//! kernels, their gradients, magnitude-pruning masks and a numerical rank
//! utility.
//!
//! Every kernel has a `*_tallied` twin that reports each multiply-accumulate
//! to a [`MacTally`]. The plain versions use [`NoTally`], which compiles
//! away, so the instrumented and production paths are the same loops.

mod csr;
mod dense;
pub mod gemm;
mod kron;
mod mask;
mod rank;
mod scalar;
mod tally;

pub use csr::{matvec_csr, matvec_csr_tallied, CsrMatrix};
pub use dense::{matvec_dense_tallied, DenseMatrix};
pub use kron::{
    kp_expand, kp_expand_with_limit, kp_matvec, kp_matvec_backward, kp_matvec_tallied,
    kp_order_macs, KpOrder, KroneckerPair, KpGradients, DEFAULT_MAX_EXPAND_ELEMENTS,
};
pub use mask::{prune_to_sparsity, PruneMask};
pub use rank::numerical_rank;
pub use scalar::Scalar;
pub use tally::{MacCounter, MacTally, NoTally};
