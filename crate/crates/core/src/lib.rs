pub mod bspline;
pub mod cli;
pub mod design;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod lasso;
pub mod report;
pub mod simlab;

pub use bspline::{eval_basis, eval_spline, make_basis, penalty_gram, BSplineBasis, SplineFunction};
pub use cli::ingest_dataset;
pub use design::{center, penalty_root, predictor_inner_products, DesignSystem, FunctionalDataset};
pub use error::{Error, Result};
pub use estimator::{
    bic_score, default_kappa_grid, default_lambda_grid, effective_df, extract_cutoff, fit_ngb,
    fit_smoothing_spline, lambda_to_tau, objective_value, penalty_value, theta_step, tune_fit,
    weight_step, NestedGroups, NgbConfig, NgbFit, WeightMode,
};
pub use inference::{bootstrap_band, BootstrapBand};
pub use lasso::{solve_weighted_lasso, solve_weighted_lasso_gram, LassoProblem};
pub use report::{
    fmt_float, to_report_json, write_atomic, write_json_atomic, FitReport, REPORT_GRID_POINTS,
};
pub use simlab::{
    ise_against, mise, run_study, scenario_beta, simulate_dataset, simulate_full,
    ReplicateRecord, Scenario, SimulatedData, SimulationReport, StudyConfig,
};
