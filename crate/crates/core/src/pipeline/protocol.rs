//! Plugin wire protocol: one JSON object per line over the plugin's stdin/stdout.
//!
//! ```text
//! host   -> {"type":"hello","protocol":1}
//! plugin -> {"type":"manifest","protocol":1,"functions":[...]}
//! host   -> {"type":"run","task_id":"...","function":"...","kind":"...","options":{...},"rows":[...]}
//! plugin -> {"type":"result","task_id":"...","values":[...]}      model, distill
//!           {"type":"result","task_id":"...","files":[...]}       transform
//!           {"type":"result","task_id":"...","scalar":0.5}        metric
//!           {"type":"error","task_id":"...","message":"..."}
//! ```
//!
//! Each row object carries `id`, `file` and one entry per metadata column keyed by
//! column id. The plugin exits when its stdin closes. Anything it writes to stderr
//! is kept for diagnostics.

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value as Json};

use super::manifest::{FunctionKind, FunctionManifest};

pub const PROTOCOL_VERSION: u32 = 1;

/// Paths and column ids a function needs; passed in every `run` frame.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunOptions {
    /// Root directory that row `file` references are relative to.
    pub data_path: String,
    pub id_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    /// Model output column for the task's (model, transform) scope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_column: Option<String>,
    /// Transforms write their files here and return names relative to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Private per-function working directory.
    pub scratch_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
}

pub type Row = Map<String, Json>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFrame {
    pub task_id: String,
    pub function: String,
    pub kind: FunctionKind,
    pub options: RunOptions,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultFrame {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Json>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<Vec<Option<String>>>,
    /// `Some(Json::Null)` when the plugin sent `"scalar": null`.
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "present")]
    pub scalar: Option<Json>,
}

fn present<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Json>, D::Error> {
    Json::deserialize(d).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Frame {
    Hello { protocol: u32 },
    Manifest { protocol: u32, functions: Vec<FunctionManifest> },
    Run(RunFrame),
    Result(ResultFrame),
    Error { task_id: String, message: String },
}

impl Frame {
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("frames always serialize")
    }

    pub fn decode(line: &str) -> Result<Frame, String> {
        serde_json::from_str(line).map_err(|e| format!("malformed frame: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hello_bytes() {
        assert_eq!(Frame::Hello { protocol: 1 }.encode(), r#"{"type":"hello","protocol":1}"#);
    }

    #[test]
    fn run_bytes() {
        let mut row = Row::new();
        row.insert("id".into(), json!("a1"));
        row.insert("file".into(), json!("a1.txt"));
        row.insert("raw::amplitude".into(), json!(0.01));
        let frame = Frame::Run(RunFrame {
            task_id: "model:m1@none#0".into(),
            function: "transcriber".into(),
            kind: FunctionKind::Model,
            options: RunOptions {
                data_path: "/data".into(),
                id_column: "id::id".into(),
                label_column: Some("label::label".into()),
                output_column: Some("output::m1::none".into()),
                scratch_dir: "/cache/_scratch/transcriber".into(),
                model: Some("m1".into()),
                transform: Some("none".into()),
                ..Default::default()
            },
            rows: vec![row],
        });
        assert_eq!(
            frame.encode(),
            concat!(
                r#"{"type":"run","task_id":"model:m1@none#0","function":"transcriber","kind":"model","#,
                r#""options":{"data_path":"/data","id_column":"id::id","label_column":"label::label","#,
                r#""output_column":"output::m1::none","scratch_dir":"/cache/_scratch/transcriber","#,
                r#""model":"m1","transform":"none"},"#,
                r#""rows":[{"file":"a1.txt","id":"a1","raw::amplitude":0.01}]}"#
            )
        );
        assert_eq!(Frame::decode(&frame.encode()).unwrap(), frame);
    }

    #[test]
    fn result_variants() {
        let f = Frame::decode(r#"{"type":"result","task_id":"t","values":["a",null,1.5]}"#).unwrap();
        assert_eq!(
            f,
            Frame::Result(ResultFrame { task_id: "t".into(), values: Some(vec![json!("a"), Json::Null, json!(1.5)]), ..Default::default() })
        );
        let f = Frame::decode(r#"{"type":"result","task_id":"t","scalar":null}"#).unwrap();
        assert!(matches!(f, Frame::Result(ResultFrame { scalar: Some(Json::Null), .. })));
        let f = Frame::decode(r#"{"type":"result","task_id":"t"}"#).unwrap();
        assert!(matches!(f, Frame::Result(ResultFrame { scalar: None, values: None, files: None, .. })));
        let f = Frame::decode(r#"{"type":"error","task_id":"t","message":"boom"}"#).unwrap();
        assert_eq!(f, Frame::Error { task_id: "t".into(), message: "boom".into() });
    }

    #[test]
    fn malformed() {
        assert!(Frame::decode("not json{").is_err());
        assert!(Frame::decode(r#"{"type":"bogus"}"#).is_err());
        assert!(Frame::decode(r#"{"type":"result"}"#).is_err());
    }
}
