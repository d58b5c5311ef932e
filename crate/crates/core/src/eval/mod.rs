//! Stratified k-fold cross-validation over representations and architectures.

pub mod folds;
pub mod grid;
pub mod pipeline;
pub mod report;

pub use folds::{accuracy, make_folds, FoldPlan, DEFAULT_FOLDS};
pub use grid::{grid_cells, run_grid};
pub use pipeline::{
    comparison_row, derive_seed, fit_representation, fold_plans, gather_matrix, run_cell, run_cell_with_plans,
    run_fold, run_table, Cell, EvalSettings, Fitted, FoldEvent, FoldObserver, LogObserver, Representation,
    SampleSource,
};
pub use report::{csv_header, read_csv, summary_line, write_csv, write_json, CvReport};
