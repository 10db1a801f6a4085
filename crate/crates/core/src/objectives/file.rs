//! Versioned TOML description of an objective and its constants.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{LogisticData, ObjectiveKind, ObjectiveSpec};
use crate::error::{Error, Result};

pub const OBJECTIVE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveFile {
    pub format_version: u32,
    pub name: String,
    /// `quadratic`, `logcosh` or `logistic`.
    pub kind: String,
    pub dim: usize,
    pub lipschitz_l: f64,
    pub grad_bound_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_radius: Option<f64>,
    pub noise_sigma2: f64,
    pub f_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race_threshold: Option<f64>,
    /// Dataset CSV path, relative to the objective file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub init_point: Vec<f64>,
}

impl ObjectiveFile {
    pub fn from_spec(spec: &ObjectiveSpec) -> Self {
        ObjectiveFile {
            format_version: OBJECTIVE_FORMAT_VERSION,
            name: spec.name.clone(),
            kind: spec.kind.tag().to_string(),
            dim: spec.dim,
            lipschitz_l: spec.lipschitz_l,
            grad_bound_m: spec.grad_bound_m,
            domain_radius: spec.domain_radius,
            noise_sigma2: spec.noise_sigma2,
            f_star: spec.f_star,
            race_threshold: spec.race_threshold,
            dataset: None,
            generator_seed: None,
            notes: None,
            init_point: spec.init_point.clone(),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("objective file serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ObjectiveFile = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1) as u64)
                .unwrap_or(0);
            Error::parse(line, e.message().to_string())
        })?;
        if file.format_version != OBJECTIVE_FORMAT_VERSION {
            return Err(Error::argument(format!(
                "unsupported objective format_version {}",
                file.format_version
            )));
        }
        Ok(file)
    }

    /// Loads an objective file and, for `logistic`, the dataset it points at.
    pub fn load(path: &Path) -> Result<ObjectiveSpec> {
        let file = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        let data = match (&file.kind[..], &file.dataset) {
            ("logistic", Some(rel)) => {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                Some(LogisticData::from_csv_path(&base.join(rel))?)
            }
            ("logistic", None) => {
                return Err(Error::argument("logistic objective file needs a dataset path"))
            }
            _ => None,
        };
        file.into_spec(data)
    }

    pub fn into_spec(self, data: Option<LogisticData>) -> Result<ObjectiveSpec> {
        let kind = match (&self.kind[..], data) {
            ("quadratic", _) => ObjectiveKind::Quadratic,
            ("logcosh", _) => ObjectiveKind::LogCosh,
            ("logistic", Some(d)) => {
                if d.dim() != self.dim {
                    return Err(Error::argument("dataset dimension differs from objective dim"));
                }
                ObjectiveKind::Logistic(Arc::new(d))
            }
            ("logistic", None) => return Err(Error::argument("logistic objective needs a dataset")),
            (other, _) => return Err(Error::argument(format!("unknown objective kind '{other}'"))),
        };
        if self.init_point.len() != self.dim {
            return Err(Error::argument("init_point length differs from dim"));
        }
        let nonneg = [self.lipschitz_l, self.grad_bound_m, self.noise_sigma2];
        if nonneg.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::argument("objective constants must be finite and >= 0"));
        }
        Ok(ObjectiveSpec {
            name: self.name,
            kind,
            dim: self.dim,
            lipschitz_l: self.lipschitz_l,
            grad_bound_m: self.grad_bound_m,
            domain_radius: self.domain_radius,
            noise_sigma2: self.noise_sigma2,
            f_star: self.f_star,
            init_point: self.init_point,
            race_threshold: self.race_threshold,
        })
    }
}
