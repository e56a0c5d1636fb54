//! Scores embedded samples by how much information they carry, selects
//! budgeted goodsets and badsets, replays addition/reduction experiments
//! with a probe classifier, and splits cross-domain training sets by
//! distance to the test domain.

pub mod cli;
pub mod error;
pub mod fixture;
pub mod fsutil;
pub mod iei;
pub mod ood;
pub mod probe;
pub mod selection;
pub mod simulate;
pub mod store;

pub use error::{Error, ErrorKind, Result};
pub use iei::{ClassPrototypes, Indicator, ScoreTable};
pub use ood::{MigrationDistances, MigrationSplit};
pub use probe::{ProbeConfig, ProbeKind, ProbeModel};
pub use selection::{BudgetKind, BudgetScheme, ClassStats, Direction, SelectionPlan};
pub use simulate::{CurveRecord, LoopConfig, LoopMode};
pub use store::{DomainTag, EmbeddingTable};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
