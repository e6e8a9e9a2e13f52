//! Intensity moments, nonclassicality witnesses, s-ordering transforms and
//! the Lee nonclassicality depth.

mod depth;
mod moments;
mod ordering;
mod witness;

pub use depth::{
    default_m_eff, ncd_for_witness, ncd_max, NcdResult, NcdSource, WitnessDepth, WitnessFailure, WitnessKind,
    FALLBACK_M_EFF, GRID_POINTS, S_RESOLUTION, WITNESS_REL_TOL,
};
pub use moments::{
    factorial_moments, factorial_moments_via_stirling, modified_moments, raw_moments, stirling_first_kind,
    stirling_first_kind_with_limit, MomentVector, STIRLING_LIMIT,
};
pub use ordering::{s_ordered_moments, s_ordered_pnd, s_ordered_pnd_rows, OrderingParams, PndKernel};
pub use witness::{
    intensity_witness, probability_witness, probability_witness_slice, probability_witness_terms, witness_set, WitnessIndex, PROB_DUST,
};
