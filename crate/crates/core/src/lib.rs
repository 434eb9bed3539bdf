//! Direct domain-decomposition solver for sparse symmetric linear systems.
//!
//! The solve proceeds in three phases. Every domain first eliminates its
//! private interior unknowns and produces a dense boundary (Schur/DtN)
//! contribution, an embarrassingly parallel step. The contributions are
//! assembled into a block-sparse reduced matrix indexed by domain, which is
//! factorized by a block LDL^T whose dense kernel invocations form a weighted
//! directed acyclic graph of tasks. That graph is statically mapped onto
//! workers by a list-scheduling heuristic driven by a calibrated cost model,
//! and executed by message-passing workers whose result is bitwise identical
//! to the sequential reference. A final embarrassingly parallel pass recovers
//! the interior unknowns.
//!
//! Modules follow the phases: [`problem`] ingests or generates systems and
//! splits them into domains, [`primal`] owns the per-domain elimination and
//! recovery, [`blockmat`] owns the reduced block matrix and its dense
//! kernels, [`taskgraph`] emits the task DAG, [`costmodel`] weighs it,
//! [`scheduler`] maps it to workers, and [`executor`] runs it.

pub mod blockmat;
pub mod costmodel;
pub mod dense;
pub mod error;
pub mod executor;
pub mod pipeline;
pub mod primal;
pub mod problem;
pub mod scheduler;
pub mod taskgraph;

pub use error::{Error, Result};
