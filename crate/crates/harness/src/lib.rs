//! Batch runs, ED comparisons and figure tables on top of `spinml-core`.

pub mod config;
pub mod error;
pub mod figures;
pub mod presets;
pub mod run;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
pub use figures::{emit_figure_data, Figure};
pub use run::{compare_with_ed, run_relaxation, RunOptions, RunResults};
