//! Sparse functional additive regression.
//!
//! A scalar response is regressed on many functional predictors observed on
//! a common grid. Each predictor is reduced to basis scores; the linear
//! variant fits `f_j = Theta_j eta_j` with a group penalty on `||f_j||`, the
//! single-index variant fits `f_j = g_j(Theta_j eta_j)` with spline links.

pub mod basis;
pub mod bspline;
pub mod error;
pub mod io;
pub mod linear;
pub mod model;
pub mod nonlinear;
pub mod penalty;
pub mod simulation;
pub mod tuning;

pub use basis::{
    center_response, make_basis, project_all, project_curves, BasisKind, BasisSpec, BasisSystem, CurveSet,
    FunctionalDataset, ScoreMatrix, TimeGrid,
};
pub use error::{FarError, Result};
pub use linear::{block_update, fit_at_lambda, lambda_path, predict_linear, BlockFactor, FitPath, LinearFar, LinearFarModel, SolverOptions};
pub use model::FarModel;
pub use nonlinear::{fit_nonlinear, threshold_model, NonlinearFarModel, NonlinearFit, NonlinearOptions};
pub use penalty::{PenaltyFamily, PenaltySpec};
pub use simulation::{run_study, SelectionMetrics, SimConfig, SimTruth, StudyResult, StudySettings};
pub use tuning::{tune_cv, tune_validation, LambdaRule, Method, TieBreak, TuningReport, TuningRule};
