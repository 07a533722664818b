//! Alignment lattices for CTC and RNN-T, exact losses with gradients,
//! enumeration oracles, edit-distance scoring, and the mask-sequence algebra
//! used by mask-predict refinement.

pub mod ctc;
pub mod edit;
pub mod error;
pub mod logspace;
pub mod masking;
pub mod oracle;
pub mod posteriors;
pub mod rnnt;
pub mod vocab;

pub use ctc::{
    best_path_alignment, best_path_decode, compose_hierarchical_loss, ctc_loss,
    intermediate_ctc_loss, CtcLossResult, HierarchicalWeights,
};
pub use edit::{align, edit_distance, error_rate, EditCounts, EditOp, ErrorAccumulator, ErrorRate};
pub use error::{Error, Result};
pub use masking::{
    decay_count, lowest_positions, mask_lowest, sample_training_mask, token_confidences,
    ConfidenceVector, MaskedSequence,
};
pub use oracle::{ctc_brute_force_nll, enumerate_ctc_alignments};
pub use posteriors::FramePosteriors;
pub use rnnt::{
    enumerate_rnnt_paths, rnnt_greedy_decode, rnnt_loss, rnnt_loss_with_grad, rnnt_path_log_prob,
    JointGrid, JointProvider, RnntLossResult,
};
pub use vocab::{
    collapse_ctc, collapse_ctc_ids, collapse_rnnt, Alignment, RnntAlignment, TokenId,
    TokenSequence, Vocabulary, BLANK_ID, MASK_ID,
};
