//! Synthetic tasks, corruptions, streams, event labels and metrics.

mod build;
mod corrupt;
mod data;
mod events;
mod metrics;
mod report;

pub use build::*;
pub use corrupt::*;
pub use data::*;
pub use events::*;
pub use metrics::*;
pub use report::*;
