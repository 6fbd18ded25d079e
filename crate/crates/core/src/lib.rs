//! Information-gain fine-tuning of a clinical question policy.
//!
//! A softmax policy over question templates interviews a simulated patient.
//! Each candidate question is rewarded by the expected entropy reduction over
//! still-hidden clinical entities plus a quality bonus, and the policy is
//! updated with a softmax-weighted ranking loss over groups of candidates.
//! Finished interviews are summarized into an HPI and scored by atomic
//! statement precision and recall.

pub mod coverage;
pub mod dialogue;
pub mod embedding;
pub mod eval;
pub mod grpo;
pub mod infogain;
pub mod lexicon;
pub mod policy;
pub mod quality;
pub mod remote;
pub mod reward;
pub mod seed;
pub mod text;
pub mod vignette;
