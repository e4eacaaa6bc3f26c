//! Score-guided audio segmentation and knowledge-gated source separation.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`dsp`] turns audio into 39-dim MFCC+Δ+ΔΔ frames (and STFTs for separation).
//! 2. [`score`] parses MIDI/JSON scores into unit timelines over
//!    {silence, piano, bass, mixture}.
//! 3. [`acoustic_model`] trains per-unit left-to-right GMM-HMMs from the score
//!    timelines, then force-aligns or recognizes unit sequences; [`segmenter`]
//!    scores the resulting boundaries and extracts solo segments.
//! 4. [`mixgen`] builds pseudo-mixtures from the solo segments, [`separator`]
//!    learns NMF templates from them and separates mixtures with masks gated by
//!    the segment (or [`knowledge`] activity) information; [`metrics`] scores it.
//!
//! [`synthsim`] generates labelled synthetic corpora for all of the above.

pub mod acoustic_model;
pub mod dsp;
pub mod knowledge;
pub mod metrics;
pub mod mixgen;
pub mod rng;
pub mod score;
pub mod separator;
pub mod segmenter;
pub mod synthsim;
pub mod wav;
