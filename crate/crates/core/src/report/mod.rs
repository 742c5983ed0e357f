//! Result persistence and SVG plots.

mod plots;
mod results;

pub use plots::{charts, render_plots, Chart, Series, PLOT_FILES};
pub use results::{
    compute_aggregates, read_results, seed_dir, trials_jsonl, write_bundle, write_results,
    Aggregates, MemoryReport, ResultsBundle, RunMeta, ENGINE_VERSION,
};
