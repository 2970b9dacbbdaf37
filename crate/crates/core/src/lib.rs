//! Core of the ozwoz Wizard-of-Oz prototyping server.
//!
//! The crate is organised around the life of an experiment:
//!
//! - [`model`]: authoring data (stages, utterances, domain data, filters, slot templates).
//! - [`pipeline`]: the ASR/MT/DM/TTS component chain, its mode rules and wizard-task derivation.
//! - [`adapters`]: uniform access to language components, mocks, remote clients and error/delay injection.
//! - [`session`]: the event-sourced live session runtime with deterministic replay.
//! - [`analysis`]: offline metrics over session logs.

pub mod adapters;
pub mod analysis;
pub mod canonical;
pub mod ids;
pub mod model;
pub mod pipeline;
pub mod session;

pub use ids::{AssetRef, ExperimentId, LanguageTag, SessionId, StageId, Timestamp, UtteranceId};
