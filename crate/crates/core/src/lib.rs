//! Multi-model annotation with staged consensus and targeted human review.
//!
//! Items flow through the crate in one direction:
//!
//! 1. [`ingest`] loads and samples line-delimited datasets.
//! 2. [`gateway`] renders one prompt per item and queries every model
//!    adapter with it, validating the structured responses.
//! 3. [`consensus`] compares the two primary verdicts, consults the
//!    tiebreaker on disagreement and routes the item.
//! 4. [`review`] finalizes agreed items and queues the rest for humans.
//! 5. [`store`] persists every step as an append-only event log whose fold
//!    is the [`store::RunState`].
//! 6. [`metrics`] scores completed runs against gold labels.
//!
//! [`pipeline`] wires the steps together and [`simulate`] drives the whole
//! pipeline with synthetic model ensembles.

pub mod consensus;
pub mod gateway;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod review;
pub mod seed;
pub mod simulate;
pub mod store;
pub mod taxonomy;

pub use consensus::{AgreementLevel, Consensus, ConsensusOutcome, DivergencePoint, ReviewReason, Route};
pub use gateway::{LabelSpace, ModelRole, ModelSpec, ModelVerdict, TaskSpec, VerdictStatus};
pub use ingest::{ContentItem, DatasetManifest};
pub use metrics::{LevelReport, RunReport};
pub use review::{AnnotationRecord, RecordSource, ReviewCase, ReviewDecision};
pub use store::{Event, EventLog, EventRecord, RunState};
pub use taxonomy::TaxonomyState;
