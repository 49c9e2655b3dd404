//! Memory-bounded incremental clustering for coreference mention streams.
//!
//! The engine keeps at most `tau1` tracked clusters and at most `tau2` stored
//! mentions per cluster. Cache pressure is resolved by statistics-aware
//! eviction (remaining gold mentions during annotated replay, activity rate
//! during blind replay) or by LRU / dual-cache baselines, and oversized
//! clusters are condensed to representative mentions by grouping mention
//! texts and sampling per group.
//!
//! Scoring math is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root pin the double-precision instantiations used by the CLI.

pub mod cli;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod eviction;
pub mod irp;
pub mod metrics;
pub mod model;
pub mod scalar;
mod union_find;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use engine::{run_document, Phase, ReplayOutput, ReplayTrace, StepDecision};
pub use eviction::{EvictionPolicy, ScoreBreakdown};
pub use irp::{InclusionMode, IrpMode, MentionGroups, PronounLexicon};
pub use model::{CacheState, ClusterId, Document, MentionSpan, TrackedCluster};

pub type EngineConfig = engine::EngineConfig<f64>;
pub type EngineConfigF32 = engine::EngineConfig<f32>;
pub type ClassifierKind = engine::ClassifierKind<f64>;
pub type ClassifierKindF32 = engine::ClassifierKind<f32>;
pub type ScoreReport = metrics::ScoreReport<f64>;
pub type ScoreReportF32 = metrics::ScoreReport<f32>;
pub type Prf = metrics::Prf<f64>;
pub type PrfF32 = metrics::Prf<f32>;
