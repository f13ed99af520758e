//! Column typing and the canonical column-id scheme.
//!
//! Every column in a project is addressed by a canonical id that encodes its
//! origin and, where relevant, the model and transform it was computed for:
//!
//! | origin  | id                                         |
//! |---------|--------------------------------------------|
//! | raw     | `raw::<name>`                              |
//! | label   | `label::<name>`                            |
//! | id      | `id::<name>`                               |
//! | output  | `output::<model>::<transform>`             |
//! | distill | `distill::<fn>[::<model>[::<transform>]]`  |
//!
//! The untransformed data uses the transform id [`BASE_TRANSFORM`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Transform id used for the original, untransformed instances.
pub const BASE_TRANSFORM: &str = "none";

const SEP: &str = "::";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Continuous,
    Nominal,
    Boolean,
    Datetime,
    String,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::Continuous => "continuous",
            DType::Nominal => "nominal",
            DType::Boolean => "boolean",
            DType::Datetime => "datetime",
            DType::String => "string",
        }
    }

    /// Continuous and datetime columns are ordered; the rest are not.
    pub fn is_ordered(self) -> bool {
        matches!(self, DType::Continuous | DType::Datetime)
    }

    pub fn is_textual(self) -> bool {
        matches!(self, DType::Nominal | DType::String)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuous" => Ok(DType::Continuous),
            "nominal" => Ok(DType::Nominal),
            "boolean" => Ok(DType::Boolean),
            "datetime" => Ok(DType::Datetime),
            "string" => Ok(DType::String),
            other => Err(ModelError::InvalidColumnId(format!("unknown dtype `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Raw,
    Distill,
    Output,
    Label,
    Id,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Raw => "raw",
            Origin::Distill => "distill",
            Origin::Output => "output",
            Origin::Label => "label",
            Origin::Id => "id",
        }
    }
}

/// Structured form of a canonical column id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnKey {
    pub origin: Origin,
    /// Column name for raw/label/id/distill columns; the model id for outputs.
    pub name: String,
    pub model_scope: Option<String>,
    pub transform_scope: Option<String>,
}

impl ColumnKey {
    pub fn raw(name: impl Into<String>) -> Self {
        Self::plain(Origin::Raw, name)
    }

    pub fn label(name: impl Into<String>) -> Self {
        Self::plain(Origin::Label, name)
    }

    pub fn id(name: impl Into<String>) -> Self {
        Self::plain(Origin::Id, name)
    }

    fn plain(origin: Origin, name: impl Into<String>) -> Self {
        ColumnKey { origin, name: name.into(), model_scope: None, transform_scope: None }
    }

    pub fn output(model: impl Into<String>, transform: impl Into<String>) -> Self {
        let model = model.into();
        ColumnKey {
            origin: Origin::Output,
            name: model.clone(),
            model_scope: Some(model),
            transform_scope: Some(transform.into()),
        }
    }

    /// A distill column. Model-independent distills span every row; model-dependent
    /// ones are scoped to one (model, transform) pair like model outputs.
    pub fn distill(function: impl Into<String>, scope: Option<(&str, &str)>) -> Self {
        ColumnKey {
            origin: Origin::Distill,
            name: function.into(),
            model_scope: scope.map(|(m, _)| m.to_string()),
            transform_scope: scope.map(|(_, t)| t.to_string()),
        }
    }

    pub fn to_id(&self) -> String {
        let mut id = format!("{}{SEP}", self.origin.as_str());
        match self.origin {
            Origin::Output => {
                id.push_str(self.model_scope.as_deref().unwrap_or(&self.name));
                id.push_str(SEP);
                id.push_str(self.transform_scope.as_deref().unwrap_or(BASE_TRANSFORM));
            }
            _ => {
                id.push_str(&self.name);
                if let Some(model) = &self.model_scope {
                    id.push_str(SEP);
                    id.push_str(model);
                }
                if let Some(transform) = &self.transform_scope {
                    id.push_str(SEP);
                    id.push_str(transform);
                }
            }
        }
        id
    }

    pub fn parse(id: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::InvalidColumnId(id.to_string());
        let parts: Vec<&str> = id.split(SEP).collect();
        if parts.iter().skip(1).any(|p| p.is_empty()) {
            return Err(bad());
        }
        let origin = match parts[0] {
            "raw" => Origin::Raw,
            "label" => Origin::Label,
            "id" => Origin::Id,
            "output" => Origin::Output,
            "distill" => Origin::Distill,
            _ => return Err(bad()),
        };
        let owned = |s: &str| s.to_string();
        match (origin, parts.len()) {
            (Origin::Raw | Origin::Label | Origin::Id, 2) => Ok(Self::plain(origin, parts[1])),
            (Origin::Output, 3) => Ok(Self::output(parts[1], parts[2])),
            (Origin::Distill, 2..=4) => Ok(ColumnKey {
                origin,
                name: owned(parts[1]),
                model_scope: parts.get(2).copied().map(owned),
                transform_scope: parts.get(3).copied().map(owned),
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_id())
    }
}

/// Checks that a user-supplied identifier (model, transform, function name) can be
/// embedded in a canonical column id.
pub fn validate_identifier(kind: &str, ident: &str) -> Result<(), ModelError> {
    if ident.is_empty()
        || ident.contains(SEP)
        || ident.starts_with(':')
        || ident.ends_with(':')
        || ident.chars().any(char::is_control)
    {
        return Err(ModelError::InvalidIdentifier { kind: kind.to_string(), value: ident.to_string() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDescriptor {
    pub id: String,
    pub display_name: String,
    pub dtype: DType,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_scope: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_scope: Option<String>,
}

impl ColumnDescriptor {
    pub fn new(key: &ColumnKey, dtype: DType) -> Self {
        let display_name = match key.origin {
            Origin::Output => format!(
                "{} output ({})",
                key.name,
                key.transform_scope.as_deref().unwrap_or(BASE_TRANSFORM)
            ),
            _ => key.name.clone(),
        };
        ColumnDescriptor {
            id: key.to_id(),
            display_name,
            dtype,
            origin: key.origin,
            model_scope: key.model_scope.clone(),
            transform_scope: key.transform_scope.clone(),
        }
    }

    pub fn key(&self) -> ColumnKey {
        ColumnKey {
            origin: self.origin,
            name: match self.origin {
                Origin::Output => self.model_scope.clone().unwrap_or_default(),
                _ => ColumnKey::parse(&self.id).map(|k| k.name).unwrap_or_default(),
            },
            model_scope: self.model_scope.clone(),
            transform_scope: self.transform_scope.clone(),
        }
    }

    /// Checks the origin/scope invariants and that `id` agrees with the scopes.
    pub fn validate(&self) -> Result<(), ModelError> {
        let key = ColumnKey::parse(&self.id)?;
        let consistent = key.origin == self.origin
            && key.model_scope == self.model_scope
            && key.transform_scope == self.transform_scope;
        let scope_ok = match self.origin {
            Origin::Output => self.model_scope.is_some() && self.transform_scope.is_some(),
            Origin::Raw | Origin::Label | Origin::Id => {
                self.model_scope.is_none() && self.transform_scope.is_none()
            }
            Origin::Distill => self.model_scope.is_some() || self.transform_scope.is_none(),
        };
        if consistent && scope_ok {
            Ok(())
        } else {
            Err(ModelError::InvalidColumnId(self.id.clone()))
        }
    }

    /// Whether the column's values depend on a model.
    pub fn is_model_scoped(&self) -> bool {
        self.model_scope.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_ids() {
        assert_eq!(ColumnKey::raw("amplitude").to_id(), "raw::amplitude");
        assert_eq!(ColumnKey::output("m1", BASE_TRANSFORM).to_id(), "output::m1::none");
        assert_eq!(ColumnKey::distill("amp", None).to_id(), "distill::amp");
        assert_eq!(
            ColumnKey::distill("wer", Some(("m1", "white_noise"))).to_id(),
            "distill::wer::m1::white_noise"
        );
    }

    #[test]
    fn parse_rejects_garbage() {
        for bad in ["", "raw", "raw::", "foo::x", "output::m1", "raw::a::b", "distill::a::b::c::d"] {
            assert!(ColumnKey::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn descriptor_invariants() {
        let d = ColumnDescriptor::new(&ColumnKey::output("m1", "none"), DType::Nominal);
        assert!(d.validate().is_ok());
        let mut broken = d.clone();
        broken.model_scope = None;
        assert!(broken.validate().is_err());
        let raw = ColumnDescriptor::new(&ColumnKey::raw("x"), DType::Continuous);
        assert!(raw.validate().is_ok());
        assert_eq!(raw.key(), ColumnKey::raw("x"));
    }

    #[test]
    fn identifiers_cannot_contain_separator() {
        assert!(validate_identifier("model", "m::1").is_err());
        assert!(validate_identifier("model", "").is_err());
        assert!(validate_identifier("model", "resnet-50").is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn ident() -> impl Strategy<Value = String> {
            "[a-zA-Z0-9_ .-]{1,12}"
        }

        fn key() -> impl Strategy<Value = ColumnKey> {
            prop_oneof![
                ident().prop_map(ColumnKey::raw),
                ident().prop_map(ColumnKey::label),
                ident().prop_map(ColumnKey::id),
                (ident(), ident()).prop_map(|(m, t)| ColumnKey::output(m, t)),
                ident().prop_map(|f| ColumnKey::distill(f, None)),
                (ident(), ident(), ident())
                    .prop_map(|(f, m, t)| ColumnKey::distill(f, Some((&m, &t)))),
            ]
        }

        proptest! {
            #[test]
            fn canonical_id_round_trips(k in key()) {
                let parsed = ColumnKey::parse(&k.to_id()).unwrap();
                prop_assert_eq!(&parsed, &k);
                let d = ColumnDescriptor::new(&k, DType::String);
                prop_assert!(d.validate().is_ok());
                prop_assert_eq!(d.key(), k);
            }
        }
    }
}
