//! Minimal JSON-schema validation (the draft-07 subset the shipped
//! schema uses: type, properties, required, items, enum, anyOf, $ref
//! into #/definitions). Enough to pin the report format without pulling
//! in a full validator.

use serde_json::Value;

/// The versioned report schema shipped with the crate.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

pub fn report_schema() -> Value {
    serde_json::from_str(REPORT_SCHEMA).expect("embedded schema parses")
}

/// Validate `value` against `schema`; returns the list of violations as
/// "path: message" strings (empty = valid).
pub fn validate(value: &Value, schema: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    let root = schema.clone();
    walk(value, schema, &root, "$", &mut errors);
    errors
}

fn resolve<'a>(schema: &'a Value, root: &'a Value) -> &'a Value {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        if let Some(path) = r.strip_prefix("#/") {
            let mut cur = root;
            for seg in path.split('/') {
                match cur.get(seg) {
                    Some(next) => cur = next,
                    None => return schema,
                }
            }
            return cur;
        }
    }
    schema
}

fn type_matches(value: &Value, ty: &str) -> bool {
    match ty {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "boolean" => value.is_boolean(),
        "null" => value.is_null(),
        "number" => value.is_number(),
        "integer" => value.as_i64().is_some() || value.as_u64().is_some(),
        _ => false,
    }
}

fn walk(value: &Value, schema: &Value, root: &Value, path: &str, errors: &mut Vec<String>) {
    let schema = resolve(schema, root);

    if let Some(any) = schema.get("anyOf").and_then(Value::as_array) {
        let matched = any.iter().any(|s| {
            let mut sub = Vec::new();
            walk(value, s, root, path, &mut sub);
            sub.is_empty()
        });
        if !matched {
            errors.push(format!("{path}: no anyOf branch matched"));
        }
        return;
    }

    if let Some(enums) = schema.get("enum").and_then(Value::as_array) {
        if !enums.contains(value) {
            errors.push(format!("{path}: value not in enum"));
        }
        return;
    }

    match schema.get("type") {
        Some(Value::String(ty)) => {
            if !type_matches(value, ty) {
                errors.push(format!("{path}: expected {ty}"));
                return;
            }
        }
        Some(Value::Array(tys)) => {
            if !tys
                .iter()
                .filter_map(Value::as_str)
                .any(|ty| type_matches(value, ty))
            {
                errors.push(format!("{path}: type mismatch"));
                return;
            }
        }
        _ => {}
    }

    if let Some(obj) = value.as_object() {
        if let Some(req) = schema.get("required").and_then(Value::as_array) {
            for key in req.iter().filter_map(Value::as_str) {
                if !obj.contains_key(key) {
                    errors.push(format!("{path}: missing required '{key}'"));
                }
            }
        }
        if let Some(props) = schema.get("properties").and_then(Value::as_object) {
            for (key, sub) in props {
                if let Some(v) = obj.get(key) {
                    walk(v, sub, root, &format!("{path}.{key}"), errors);
                }
            }
        }
    }

    if let Some(arr) = value.as_array() {
        if let Some(items) = schema.get("items") {
            for (i, v) in arr.iter().enumerate() {
                walk(v, items, root, &format!("{path}[{i}]"), errors);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_parses() {
        let s = report_schema();
        assert_eq!(s["type"], "object");
    }

    #[test]
    fn validator_catches_missing_and_wrong_types() {
        let schema: Value = serde_json::json!({
            "type": "object",
            "required": ["a", "b"],
            "properties": {
                "a": {"type": "number"},
                "b": {"type": "array", "items": {"type": "integer"}},
                "c": {"enum": ["x", "y"]}
            }
        });
        let good: Value = serde_json::json!({"a": 1.5, "b": [1, 2], "c": "x"});
        assert!(validate(&good, &schema).is_empty());
        let bad: Value = serde_json::json!({"a": "no", "b": [1.5], "c": "z"});
        let errs = validate(&bad, &schema);
        assert_eq!(errs.len(), 3, "{errs:?}");
        let missing: Value = serde_json::json!({"a": 1.0});
        assert_eq!(validate(&missing, &schema).len(), 1);
    }

    #[test]
    fn anyof_and_ref() {
        let schema: Value = serde_json::json!({
            "type": "object",
            "properties": {
                "x": {"anyOf": [{"type": "null"}, {"$ref": "#/definitions/pt"}]}
            },
            "definitions": {
                "pt": {"type": "object", "required": ["v"], "properties": {"v": {"type": "number"}}}
            }
        });
        assert!(validate(&serde_json::json!({"x": null}), &schema).is_empty());
        assert!(validate(&serde_json::json!({"x": {"v": 3.0}}), &schema).is_empty());
        assert!(!validate(&serde_json::json!({"x": {"w": 3.0}}), &schema).is_empty());
    }
}
