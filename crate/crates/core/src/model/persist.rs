//! Canonical JSON for persisted objects.
//!
//! Every document carries a leading `"version"` field followed by the object's
//! fields in declaration order. Output is pretty-printed with two-space indents
//! and a trailing newline, so identical objects always produce identical bytes.

use serde::de::DeserializeOwned;
use serde::Serialize;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("malformed JSON: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("document has no `version` field")]
    MissingVersion,
    #[error("unsupported document version {0} (expected {FORMAT_VERSION})")]
    UnknownVersion(u64),
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    version: u64,
    #[serde(flatten)]
    body: &'a T,
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(&Envelope { version: FORMAT_VERSION, body: value })
        .expect("persisted types serialize infallibly");
    text.push('\n');
    text
}

pub fn from_canonical_json<T: DeserializeOwned>(text: &str) -> Result<T, PersistError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        None => Err(PersistError::MissingVersion),
        Some(FORMAT_VERSION) => Ok(T::deserialize(value)?),
        Some(other) => Err(PersistError::UnknownVersion(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::objects::{BehavioralTest, Comparator, Report, ReportEntry, Slice};
    use crate::model::predicate::{CompareOp, FilterPredicate, Literal};
    use proptest::prelude::*;

    fn quiet_audio() -> Slice {
        Slice::new(
            "quiet audio",
            FilterPredicate::leaf("raw::amplitude", CompareOp::Lt, Literal::Number(0.04)),
            Some("audio properties".into()),
        )
    }

    #[test]
    fn slice_round_trip() {
        let slice = quiet_audio();
        let text = to_canonical_json(&slice);
        assert!(text.starts_with("{\n  \"version\": 1,\n  \"slice_id\""));
        let back: Slice = from_canonical_json(&text).unwrap();
        assert_eq!(back, slice);
        assert_eq!(to_canonical_json(&back), text);
    }

    #[test]
    fn unknown_version_rejected() {
        let mut value: serde_json::Value = serde_json::from_str(&to_canonical_json(&quiet_audio())).unwrap();
        value["version"] = 999.into();
        let err = from_canonical_json::<Slice>(&value.to_string()).unwrap_err();
        assert!(matches!(err, PersistError::UnknownVersion(999)));
        assert!(matches!(
            from_canonical_json::<Slice>("{\"name\": 1}").unwrap_err(),
            PersistError::MissingVersion
        ));
        assert!(matches!(from_canonical_json::<Slice>("{oops").unwrap_err(), PersistError::Malformed(_)));
    }

    #[test]
    fn test_and_predicate_round_trip() {
        let t = BehavioralTest::new("slice-1", "accuracy", Some("white_noise".into()), Comparator::Gt, 0.7);
        assert_eq!(from_canonical_json::<BehavioralTest>(&to_canonical_json(&t)).unwrap(), t);
        let p = FilterPredicate::Or {
            children: vec![
                FilterPredicate::All,
                FilterPredicate::leaf("raw::x", CompareOp::IsMissing, Literal::None),
            ],
        };
        assert_eq!(from_canonical_json::<FilterPredicate>(&to_canonical_json(&p)).unwrap(), p);
    }

    fn entry() -> impl Strategy<Value = ReportEntry> {
        (
            "[a-z]{1,8}",
            prop_oneof![Just("accuracy".to_string()), Just("error_rate".to_string())],
            proptest::option::of("[a-z_]{1,8}"),
            proptest::option::of((prop_oneof![Just(Comparator::Gt), Just(Comparator::Le)], -1e6f64..1e6)),
        )
            .prop_map(|(slice, metric, transform, test)| ReportEntry {
                test: test.map(|(c, t)| BehavioralTest::new(&slice, &metric, transform.clone(), c, t)),
                slice_id: slice,
                metric_id: metric,
                transform_id: transform,
            })
    }

    proptest! {
        #[test]
        fn report_round_trip_preserves_order(name in ".{0,20}", entries in proptest::collection::vec(entry(), 0..8)) {
            let mut report = Report::new(name);
            report.entries = entries;
            let text = to_canonical_json(&report);
            let back: Report = from_canonical_json(&text).unwrap();
            prop_assert_eq!(&back, &report);
            prop_assert_eq!(to_canonical_json(&back), text);
        }
    }
}
