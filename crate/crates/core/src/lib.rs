//! Decision provenance engine.
//!
//! Records the data flows of interconnected systems into per-domain,
//! hash-chained provenance logs, federates those logs across organizational
//! boundaries, answers accountability queries over the joined graph, and
//! enforces event-condition-action rules at capture time.

pub mod capture;
pub mod model;
pub mod policy;
pub mod query;
pub mod simulator;
pub mod store;
pub mod synth;

pub use model::{mint_id, AttrValue, Attributes, EdgeKind, NodeKind, ProvEdge, ProvNode, QualifiedId, Record, Tick};
pub use store::{ChainStatus, Federation, ProvStore, Resolution, Visibility};
