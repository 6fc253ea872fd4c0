//! Doped weights: `W = α·S + β·(mask ⊙ Ws)` with `S` a Kronecker, low-rank
//! or hybrid structured term and `Ws` an unconstrained term that is pruned
//! towards extreme sparsity during training.
//!
//! Co-matrix dropout ([`CmrMasks`]) independently drops the structured and
//! sparse contributions per output element, so the network cannot lean on
//! doping weights that will later be pruned away. No inverse-keep rescaling
//! is applied; the schedules decay the drop probability to zero before
//! training ends.

mod cmr;
mod sizing;
mod structured;
mod weight;

pub use cmr::{CmrBatchMasks, CmrMasks};
pub use sizing::{hmd_dims_for_budget, hmd_param_count, size_kp_factors, KpShape, KpSizing};
pub use structured::{HybridParts, LowRankPair, StructuredTerm, VariantKind};
pub use weight::{
    make_doped, nnz_target_for_cf, DopedCache, DopedGrads, DopedWeight, MacCount, VariantConfig,
};
