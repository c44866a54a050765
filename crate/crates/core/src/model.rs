use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::{CurveSet, ScoreMatrix};
use crate::error::Result;
use crate::linear::LinearFarModel;
use crate::nonlinear::NonlinearFarModel;

/// A fitted model of either kind; this is the on-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FarModel {
    Linear(LinearFarModel),
    Nonlinear(NonlinearFarModel),
}

impl FarModel {
    pub fn active_set(&self) -> &[usize] {
        match self {
            Self::Linear(m) => &m.active_set,
            Self::Nonlinear(m) => &m.active_set,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Self::Linear(m) => m.lambda,
            Self::Nonlinear(m) => m.lambda,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Self::Linear(m) => m.p(),
            Self::Nonlinear(m) => m.p(),
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            Self::Linear(m) => m.converged,
            Self::Nonlinear(m) => m.converged,
        }
    }

    pub fn fitted_values(&self) -> Vec<f64> {
        match self {
            Self::Linear(m) => m.fitted_values(),
            Self::Nonlinear(m) => m.fitted_values(),
        }
    }

    pub fn predict(&self, curves: &CurveSet) -> Result<DVector<f64>> {
        match self {
            Self::Linear(m) => m.predict(curves),
            Self::Nonlinear(m) => m.predict(curves),
        }
    }

    pub fn predict_scores(&self, scores: &[ScoreMatrix]) -> Result<DVector<f64>> {
        match self {
            Self::Linear(m) => m.predict_scores(scores),
            Self::Nonlinear(m) => m.predict_scores(scores),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
