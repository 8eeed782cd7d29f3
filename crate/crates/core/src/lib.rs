//! Build n-gram language models directly from weighted grammars, and adapt an
//! existing model to new application intents without degrading past usage.
//!
//! The pipeline has two halves:
//!
//! 1. **Grammar to model.** A hand-written grammar (plus entity catalogs) is
//!    compiled into a weighted acceptor FST ([`grammar`], [`wfst`]). Exact
//!    expected fractional n-gram counts are extracted from the FST with a
//!    forward-backward dynamic program ([`counts`]), scaled, and smoothed into
//!    an ARPA-style Katz back-off model ([`lm`]). Sampling sentences from the
//!    FST and training on the sample is available as a baseline.
//! 2. **Model adaptation.** The grammar model is linearly interpolated with a
//!    pre-existing model ([`mixture`]) and the interpolation weights are fit
//!    by constrained optimization ([`optimizer`]): minimize a per-application
//!    loss (negative squared weight, perplexity, or expected word error rate
//!    over n-best lists, see [`asr_eval`]) subject to the loss on past-usage
//!    data not exceeding the baseline's, enforced with a quadratic penalty.
//!
//! [`synth`] generates the randomized FSTs, grammars, and noisy-channel n-best
//! lists used by the test and acceptance suites.

pub mod asr_eval;
pub mod counts;
pub mod grammar;
pub mod lm;
pub mod logmath;
pub mod mixture;
pub mod optimizer;
pub mod synth;
pub mod wfst;

pub use lm::{EvalCorpus, NGramModel, Scorer};
pub use mixture::MixtureModel;
pub use wfst::WeightedFst;
