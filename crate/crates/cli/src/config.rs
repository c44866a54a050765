use std::fs;
use std::path::{Path, PathBuf};

use far_core::basis::BasisKind;
use far_core::penalty::PenaltyFamily;
use far_core::simulation::{SimConfig, StudySettings};
use far_core::tuning::TuningMode;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// An integer or a list of integers, written as `6`, `[5, 6]`, `"5,6,7"` or `"5..10"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntList {
    One(usize),
    Many(Vec<usize>),
    Text(String),
}

impl IntList {
    pub fn values(&self) -> Result<Vec<usize>, CliError> {
        match self {
            Self::One(v) => Ok(vec![*v]),
            Self::Many(v) if v.is_empty() => Err(CliError::Config("empty candidate list".into())),
            Self::Many(v) => Ok(v.clone()),
            Self::Text(s) => parse_int_list(s),
        }
    }
}

pub fn parse_int_list(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Config(format!("cannot parse integer list `{s}`"));
    let s = s.trim();
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    let out = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// A fixed penalty level or `"path"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Value(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Fixed(f64),
    Path,
}

impl LambdaSetting {
    pub fn resolve(&self) -> Result<Lambda, CliError> {
        let v = match self {
            Self::Value(v) => *v,
            Self::Text(s) if s.trim().eq_ignore_ascii_case("path") => return Ok(Lambda::Path),
            Self::Text(s) => s
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("--lambda expects a number or `path`, got `{s}`")))?,
        };
        if !v.is_finite() || v < 0.0 {
            return Err(CliError::Config(format!("penalty level must be finite and nonnegative, got {v}")));
        }
        Ok(Lambda::Fixed(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    #[default]
    Linear,
    Nonlinear,
}

/// Settings for `fit`, `tune` and `predict`. Every field is optional in the
/// file; command-line flags take precedence.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Option<MethodKind>,
    pub penalty: Option<String>,
    pub basis: Option<String>,
    pub q: Option<IntList>,
    pub d: Option<IntList>,
    pub lambda: Option<LambdaSetting>,
    pub grid_size: Option<usize>,
    /// Coordinate sweep cap per penalty level.
    pub max_sweeps: Option<usize>,
    pub tuning: Option<TuningMode>,
    pub threshold: Option<bool>,
    pub seed: Option<u64>,
    pub curves: Option<PathBuf>,
    pub response: Option<PathBuf>,
    pub validation_curves: Option<PathBuf>,
    pub validation_response: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Settings for `simulate`: the scenario plus the study method, in the
/// core library's own serialized form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub simulation: SimConfig,
    pub study: StudySettings,
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
}

impl RunConfig {
    pub fn method(&self) -> MethodKind {
        self.method.unwrap_or_default()
    }

    pub fn family(&self) -> Result<PenaltyFamily, CliError> {
        self.penalty
            .as_deref()
            .unwrap_or("scad")
            .parse()
            .map_err(|e: far_core::FarError| CliError::Config(e.to_string()))
    }

    pub fn basis_kind(&self) -> Result<BasisKind, CliError> {
        self.basis
            .as_deref()
            .unwrap_or("spline")
            .parse()
            .map_err(|e: far_core::FarError| CliError::Config(e.to_string()))
    }

    pub fn q_list(&self, default: &[usize]) -> Result<Vec<usize>, CliError> {
        let q = self.q.as_ref().map_or_else(|| Ok(default.to_vec()), IntList::values)?;
        if q.contains(&0) {
            return Err(CliError::Config("basis dimension q must be at least 1".into()));
        }
        Ok(q)
    }

    pub fn d_list(&self, default: &[usize]) -> Result<Vec<usize>, CliError> {
        let d = self.d.as_ref().map_or_else(|| Ok(default.to_vec()), IntList::values)?;
        if self.method() == MethodKind::Nonlinear {
            if let Some(bad) = d.iter().find(|&&d| d < 4) {
                return Err(CliError::Config(format!("link dimension d must be at least 4, got {bad}")));
            }
        }
        Ok(d)
    }

    pub fn lambda(&self) -> Result<Lambda, CliError> {
        self.lambda
            .as_ref()
            .map_or(Ok(Lambda::Path), LambdaSetting::resolve)
    }

    pub fn has_validation(&self) -> Result<bool, CliError> {
        match (&self.validation_curves, &self.validation_response) {
            (Some(_), Some(_)) => Ok(true),
            (None, None) => Ok(false),
            _ => Err(CliError::Config(
                "validation curves and validation responses must be given together".into(),
            )),
        }
    }

    /// Validation set when one is supplied, otherwise 5-fold CV, unless the
    /// config names a mode.
    pub fn tuning_mode(&self) -> Result<TuningMode, CliError> {
        Ok(match self.tuning {
            Some(mode) => mode,
            None if self.has_validation()? => TuningMode::ValidationSet,
            None => TuningMode::KFoldCv { k: 5 },
        })
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
        field
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("missing required input `{name}`")))
    }
}
