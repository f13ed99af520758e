use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::column::{validate_identifier, DType};

/// Rows per `run` frame when a function gives no hint.
pub const DEFAULT_BATCH_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Model,
    Metric,
    Distill,
    Transform,
}

impl FunctionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FunctionKind::Model => "model",
            FunctionKind::Metric => "metric",
            FunctionKind::Distill => "distill",
            FunctionKind::Transform => "transform",
        }
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One function as declared by a plugin during the handshake.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionManifest {
    pub name: String,
    pub kind: FunctionKind,
    /// Opaque; any change invalidates cached results.
    pub version: String,
    /// Distills only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depends_on_model: Option<bool>,
    /// Distills only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dtype: Option<DType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size_hint: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("function `{name}`: {message}")]
pub struct ManifestError {
    pub name: String,
    pub message: String,
}

impl FunctionManifest {
    pub fn validate(&self) -> Result<(), ManifestError> {
        let err = |message: &str| ManifestError { name: self.name.clone(), message: message.to_string() };
        validate_identifier("function", &self.name).map_err(|e| err(&e.to_string()))?;
        if self.batch_size_hint == Some(0) {
            return Err(err("batch_size_hint must be positive"));
        }
        let is_distill = self.kind == FunctionKind::Distill;
        if is_distill != self.depends_on_model.is_some() {
            return Err(err("depends_on_model is required for distills and only for distills"));
        }
        if is_distill != self.output_dtype.is_some() {
            return Err(err("output_dtype is required for distills and only for distills"));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size_hint.unwrap_or(DEFAULT_BATCH_SIZE)
    }

    pub fn depends_on_model(&self) -> bool {
        self.depends_on_model == Some(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn distill() -> FunctionManifest {
        FunctionManifest {
            name: "amplitude".into(),
            kind: FunctionKind::Distill,
            version: "1".into(),
            depends_on_model: Some(false),
            output_dtype: Some(DType::Continuous),
            batch_size_hint: None,
        }
    }

    #[test]
    fn kind_specific_fields() {
        assert!(distill().validate().is_ok());
        assert!(FunctionManifest { depends_on_model: None, ..distill() }.validate().is_err());
        assert!(FunctionManifest { output_dtype: None, ..distill() }.validate().is_err());
        let model = FunctionManifest {
            kind: FunctionKind::Model,
            depends_on_model: None,
            output_dtype: None,
            ..distill()
        };
        assert!(model.validate().is_ok());
        assert!(FunctionManifest { depends_on_model: Some(true), ..model.clone() }.validate().is_err());
        assert!(FunctionManifest { batch_size_hint: Some(0), ..model.clone() }.validate().is_err());
        assert!(FunctionManifest { name: "a::b".into(), ..model }.validate().is_err());
    }

    #[test]
    fn json_shape() {
        let json = serde_json::to_string(&distill()).unwrap();
        assert_eq!(
            json,
            r#"{"name":"amplitude","kind":"distill","version":"1","depends_on_model":false,"output_dtype":"continuous"}"#
        );
        assert_eq!(distill().batch_size(), DEFAULT_BATCH_SIZE);
    }
}
