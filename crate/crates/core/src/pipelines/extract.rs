//! Schema-driven extraction over document units, and CSV export.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{require_vars, PipelineError};
use crate::llm::{complete_structured, ExtractionSchema, LlmBackend, PromptTemplate, StructuredError, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub source_path: String,
    pub unit_index: usize,
    pub unit_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed,
}

impl RecordStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::Ok => "ok",
            RecordStatus::Failed => "failed",
        }
    }
}

/// Exactly one of `record` and `violations` is set, matching `status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub unit_ref: Unit,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations: Option<Vec<Violation>>,
    /// Backend calls spent on this unit.
    pub attempts: u32,
}

/// Runs `template` (which must use exactly `{unit}`) over every unit in
/// order. A unit that never yields a valid reply, or whose backend call
/// fails, becomes a failed record; the batch always completes.
pub fn extract(
    units: &[Unit],
    template: &PromptTemplate,
    schema: &ExtractionSchema,
    llm: &dyn LlmBackend,
    max_retries: u32,
) -> Result<Vec<ExtractionRecord>, PipelineError> {
    require_vars(template, &["unit"])?;
    let mut out = Vec::with_capacity(units.len());
    for unit in units {
        let prompt = template.render([("unit", unit.unit_text.as_str())])?;
        let (status, record, violations, attempts) = match complete_structured(&prompt, schema, llm, max_retries) {
            Ok(o) => (RecordStatus::Ok, Some(o.record), None, o.attempts),
            Err(StructuredError::Failure { violations, attempts, .. }) => {
                (RecordStatus::Failed, None, Some(violations), attempts)
            }
            Err(StructuredError::Backend(e)) => {
                tracing::warn!(unit = unit.unit_index, source = %unit.source_path, error = %e, "extraction call failed");
                let v = vec![Violation::Backend { message: e.to_string() }];
                (RecordStatus::Failed, None, Some(v), 1)
            }
        };
        out.push(ExtractionRecord {
            unit_ref: unit.clone(),
            status,
            record,
            violations,
            attempts,
        });
    }
    Ok(out)
}

fn cell(value: Option<&Value>) -> String {
    match value {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map_or_else(|| v.to_string(), str::to_string))
            .collect::<Vec<_>>()
            .join("; "),
        Some(other) => other.to_string(),
    }
}

/// CSV with header `source_path, unit_index, status, <schema fields>`;
/// failed rows leave the schema columns empty. RFC 4180 quoting, CRLF
/// line ends, UTF-8 without a byte-order mark.
pub fn write_csv<W: Write>(records: &[ExtractionRecord], schema: &ExtractionSchema, out: W) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
    let mut header = vec!["source_path", "unit_index", "status"];
    header.extend(schema.fields().iter().map(|f| f.name.as_str()));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.unit_ref.source_path.clone(),
            r.unit_ref.unit_index.to_string(),
            r.status.as_str().to_string(),
        ];
        for f in schema.fields() {
            row.push(cell(r.record.as_ref().and_then(|m| m.get(&f.name))));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(records: &[ExtractionRecord], schema: &ExtractionSchema, path: &Path) -> Result<(), PipelineError> {
    write_csv(records, schema, File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FieldType, SchemaField, StubBackend};
    use crate::pipelines::templates;

    fn schema() -> ExtractionSchema {
        ExtractionSchema::new(vec![
            SchemaField::new("name", FieldType::String, true, ""),
            SchemaField::new("tags", FieldType::StringList, false, ""),
        ])
        .unwrap()
    }

    fn units(n: usize) -> Vec<Unit> {
        (0..n)
            .map(|i| Unit {
                source_path: "doc.txt".into(),
                unit_index: i,
                unit_text: format!("unit {i}"),
            })
            .collect()
    }

    fn template() -> PromptTemplate {
        PromptTemplate::new(templates::EXTRACT).unwrap()
    }

    #[test]
    fn three_valid_units_in_order() {
        let stub = StubBackend::canned([r#"{"name":"a"}"#, r#"{"name":"b"}"#, r#"{"name":"c"}"#]);
        let recs = extract(&units(3), &template(), &schema(), &stub, 2).unwrap();
        let names: Vec<_> = recs.iter().map(|r| r.record.as_ref().unwrap()["name"].clone()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert!(stub.call_log()[1].prompt.contains("unit 1"));
        assert!(extract(&[], &template(), &schema(), &stub, 2).unwrap().is_empty());
    }

    #[test]
    fn persistent_failure_is_recorded_not_raised() {
        let ok = r#"{"name":"x"}"#;
        let stub = StubBackend::canned([ok, "bad", "bad", "bad", ok]);
        let recs = extract(&units(3), &template(), &schema(), &stub, 2).unwrap();
        let status: Vec<_> = recs.iter().map(|r| r.status).collect();
        assert_eq!(status, [RecordStatus::Ok, RecordStatus::Failed, RecordStatus::Ok]);
        assert_eq!(recs[1].attempts, 3);
        assert!(recs[1].record.is_none() && recs[1].violations.is_some());
        assert!(recs[0].violations.is_none());
        assert_eq!(stub.call_count(), 5);
    }

    #[test]
    fn csv_layout_and_quoting() {
        let mut buf = Vec::new();
        write_csv(&[], &schema(), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "source_path,unit_index,status,name,tags\r\n");

        let stub = StubBackend::canned([r#"{"name":"Smith, Ada","tags":["x","y \"z\""]}"#, "no"]);
        let recs = extract(&units(2), &template(), &schema(), &stub, 0).unwrap();
        let mut buf = Vec::new();
        write_csv(&recs, &schema(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "source_path,unit_index,status,name,tags\r\n\
             doc.txt,0,ok,\"Smith, Ada\",\"x; y \"\"z\"\"\"\r\n\
             doc.txt,1,failed,,\r\n"
        );
        assert!(!text.starts_with('\u{feff}'));
    }
}
