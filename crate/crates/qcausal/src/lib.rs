//! Standard-library companion to `qcausal-core`: JSON formats, the parallel
//! experiment harness, the lemma checks and the `qcausal` binary.

pub mod format;
pub mod harness;
pub mod lemmas;
