//! Field schemas, validation of model replies against them, and the
//! re-prompting loop that asks again after a bad reply.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{CompletionRequest, LlmBackend, LlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    String,
    Integer,
    Number,
    Boolean,
    StringList,
}

impl FieldType {
    pub fn name(self) -> &'static str {
        match self {
            FieldType::String => "string",
            FieldType::Integer => "integer",
            FieldType::Number => "number",
            FieldType::Boolean => "boolean",
            FieldType::StringList => "string_list",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaField {
    pub name: String,
    #[serde(rename = "type")]
    pub field_type: FieldType,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

impl SchemaField {
    pub fn new(name: &str, field_type: FieldType, required: bool, description: &str) -> Self {
        SchemaField {
            name: name.into(),
            field_type,
            required,
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ExtractionSchema {
    fields: Vec<SchemaField>,
}

impl<'de> Deserialize<'de> for ExtractionSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let fields = Vec::<SchemaField>::deserialize(d)?;
        ExtractionSchema::new(fields).map_err(serde::de::Error::custom)
    }
}

fn is_snake_case(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl ExtractionSchema {
    pub fn new(fields: Vec<SchemaField>) -> Result<Self, String> {
        if fields.is_empty() {
            return Err("schema has no fields".into());
        }
        for (i, f) in fields.iter().enumerate() {
            if !is_snake_case(&f.name) {
                return Err(format!("field name '{}' is not snake_case", f.name));
            }
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(format!("field name '{}' appears twice", f.name));
            }
        }
        Ok(ExtractionSchema { fields })
    }

    pub fn fields(&self) -> &[SchemaField] {
        &self.fields
    }

    /// Instruction block appended to prompts.
    pub fn describe(&self) -> String {
        let mut out = String::from("Respond with a single JSON object with these fields:\n");
        for f in &self.fields {
            let req = if f.required { "required" } else { "optional" };
            out.push_str(&format!("- {} ({}, {})", f.name, f.field_type.name(), req));
            if !f.description.is_empty() {
                out.push_str(&format!(": {}", f.description));
            }
            out.push('\n');
        }
        out.push_str("Output only the JSON object, with no other text.");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    #[error("no JSON object found in the reply")]
    NoJsonFound,
    #[error("reply is not valid JSON: {message}")]
    InvalidJson { message: String },
    #[error("required field '{field}' is missing")]
    Missing { field: String },
    #[error("field '{field}' must be of type {expected}")]
    WrongType { field: String, expected: String },
    /// The backend call itself failed; no reply was validated.
    #[error("backend call failed: {message}")]
    Backend { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validated {
    /// Schema fields only, keyed by name.
    pub record: Map<String, Value>,
    /// Names of ignored fields not in the schema.
    pub warnings: Vec<String>,
}

/// First `{...}` block whose braces balance, ignoring braces inside JSON
/// strings.
pub fn first_json_object(raw: &str) -> Option<&str> {
    let bytes = raw.as_bytes();
    let mut from = 0;
    while let Some(rel) = raw[from..].find('{') {
        let start = from + rel;
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&raw[start..=i]);
                    }
                }
                _ => {}
            }
        }
        from = start + 1;
    }
    None
}

fn check_type(value: &Value, ty: FieldType) -> Option<Value> {
    match ty {
        FieldType::String => value.is_string().then(|| value.clone()),
        FieldType::Boolean => value.is_boolean().then(|| value.clone()),
        FieldType::Number => value.is_number().then(|| value.clone()),
        FieldType::Integer => {
            if value.is_i64() || value.is_u64() {
                Some(value.clone())
            } else {
                let f = value.as_f64()?;
                (f.fract() == 0.0 && f.abs() < 9.007_199_254_740_992e15).then(|| Value::from(f as i64))
            }
        }
        FieldType::StringList => {
            let items = value.as_array()?;
            items.iter().all(Value::is_string).then(|| value.clone())
        }
    }
}

/// Checks `raw` against `schema`, collecting every violation. A `null`
/// value counts as absent.
pub fn validate_structured(raw: &str, schema: &ExtractionSchema) -> Result<Validated, Vec<Violation>> {
    let json = first_json_object(raw).ok_or_else(|| vec![Violation::NoJsonFound])?;
    let obj: Map<String, Value> = serde_json::from_str(json).map_err(|e| {
        vec![Violation::InvalidJson {
            message: e.to_string(),
        }]
    })?;
    let mut record = Map::new();
    let mut violations = Vec::new();
    for f in &schema.fields {
        match obj.get(&f.name) {
            None | Some(Value::Null) => {
                if f.required {
                    violations.push(Violation::Missing { field: f.name.clone() });
                }
            }
            Some(v) => match check_type(v, f.field_type) {
                Some(v) => {
                    record.insert(f.name.clone(), v);
                }
                None => violations.push(Violation::WrongType {
                    field: f.name.clone(),
                    expected: f.field_type.name().into(),
                }),
            },
        }
    }
    if !violations.is_empty() {
        return Err(violations);
    }
    let warnings = obj
        .keys()
        .filter(|k| !schema.fields.iter().any(|f| &f.name == *k))
        .map(|k| format!("ignored unknown field '{k}'"))
        .collect();
    Ok(Validated { record, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuredOutput {
    pub record: Map<String, Value>,
    pub warnings: Vec<String>,
    /// Backend calls made, including the successful one.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StructuredError {
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("no valid reply after {attempts} attempts")]
    Failure {
        last_raw: String,
        violations: Vec<Violation>,
        attempts: u32,
    },
}

fn retry_prompt(base: &str, violations: &[Violation]) -> String {
    let mut out = format!("{base}\n\nYour previous reply was rejected:\n");
    for v in violations {
        out.push_str(&format!("- {v}\n"));
    }
    out.push_str("Reply again with only the corrected JSON object.");
    out
}

/// Asks for a reply matching `schema`, re-prompting with the violations
/// after each invalid reply. Makes at most `1 + max_retries` calls; backend
/// errors end the loop at once.
pub fn complete_structured(
    prompt: &str,
    schema: &ExtractionSchema,
    backend: &dyn LlmBackend,
    max_retries: u32,
) -> Result<StructuredOutput, StructuredError> {
    let base = format!("{prompt}\n\n{}", schema.describe());
    let mut request = CompletionRequest::new(base.clone());
    let mut attempts = 0;
    loop {
        attempts += 1;
        let raw = backend.complete(&request)?.text;
        match validate_structured(&raw, schema) {
            Ok(v) => {
                return Ok(StructuredOutput {
                    record: v.record,
                    warnings: v.warnings,
                    attempts,
                })
            }
            Err(violations) if attempts > max_retries => {
                return Err(StructuredError::Failure {
                    last_raw: raw,
                    violations,
                    attempts,
                })
            }
            Err(violations) => request.prompt = retry_prompt(&base, &violations),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::StubBackend;
    use serde_json::json;

    fn name_schema() -> ExtractionSchema {
        ExtractionSchema::new(vec![SchemaField::new("name", FieldType::String, true, "person name")]).unwrap()
    }

    #[test]
    fn schema_names_are_checked() {
        let f = |n: &str| SchemaField::new(n, FieldType::String, false, "");
        assert!(ExtractionSchema::new(vec![f("ok_name"), f("x2")]).is_ok());
        assert!(ExtractionSchema::new(vec![f("Bad")]).is_err());
        assert!(ExtractionSchema::new(vec![f("")]).is_err());
        assert!(ExtractionSchema::new(vec![f("a"), f("a")]).is_err());
        let parsed: Result<ExtractionSchema, _> = serde_json::from_str(r#"[{"name":"A b","type":"string"}]"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn validation_examples() {
        let s = name_schema();
        let v = validate_structured(r#"{"name":"Ada"}"#, &s).unwrap();
        assert_eq!(Value::Object(v.record), json!({"name": "Ada"}));
        assert_eq!(
            validate_structured(r#"Sure! {"name": 5}"#, &s).unwrap_err(),
            vec![Violation::WrongType {
                field: "name".into(),
                expected: "string".into()
            }]
        );
        assert_eq!(validate_structured("no braces here", &s).unwrap_err(), vec![Violation::NoJsonFound]);
    }

    #[test]
    fn violations_are_collected_not_short_circuited() {
        let s = ExtractionSchema::new(vec![
            SchemaField::new("a", FieldType::Integer, true, ""),
            SchemaField::new("b", FieldType::StringList, true, ""),
            SchemaField::new("c", FieldType::Boolean, true, ""),
            SchemaField::new("d", FieldType::Number, false, ""),
        ])
        .unwrap();
        let err = validate_structured(r#"{"a": 1.5, "b": ["x", 2], "d": null, "e": 1}"#, &s).unwrap_err();
        assert_eq!(err.len(), 3);
        let ok = validate_structured(r#"{"a": 2.0, "b": [], "c": false, "zz": 0}"#, &s).unwrap();
        assert_eq!(ok.record["a"], json!(2));
        assert_eq!(ok.warnings, vec!["ignored unknown field 'zz'".to_string()]);
    }

    #[test]
    fn brace_scanning() {
        assert_eq!(first_json_object(r#"x {"a":"}"} y {"b":1}"#), Some(r#"{"a":"}"}"#));
        assert_eq!(first_json_object(r#"{"a":{"b":"\"{"}} tail"#), Some(r#"{"a":{"b":"\"{"}}"#));
        assert_eq!(first_json_object("{ unclosed"), None);
        assert_eq!(first_json_object("} {\"k\":1}"), Some("{\"k\":1}"));
    }

    #[test]
    fn retry_accounting() {
        let s = name_schema();
        let one = StubBackend::canned([r#"{"name":"Ada"}"#]);
        assert_eq!(complete_structured("who?", &s, &one, 2).unwrap().attempts, 1);
        assert_eq!(one.call_count(), 1);

        let two = StubBackend::canned(["nope", r#"{"name":"Ada"}"#]);
        assert_eq!(complete_structured("who?", &s, &two, 2).unwrap().attempts, 2);
        let log = two.call_log();
        assert_eq!(log.len(), 2);
        assert!(log[0].prompt.contains("name (string, required): person name"));
        assert!(log[1].prompt.contains("no JSON object found"));

        let never = StubBackend::canned(["nope"]);
        match complete_structured("who?", &s, &never, 2) {
            Err(StructuredError::Failure { attempts, last_raw, .. }) => {
                assert_eq!(attempts, 3);
                assert_eq!(last_raw, "nope");
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(never.call_count(), 3);
    }

    #[test]
    fn backend_errors_are_not_retried() {
        let empty = StubBackend::canned(Vec::<String>::new());
        assert!(matches!(
            complete_structured("q", &name_schema(), &empty, 5),
            Err(StructuredError::Backend(_))
        ));
        assert_eq!(empty.call_count(), 1);
    }
}
