//! Structural schemas for model outputs.
//!
//! A [`Schema`] is both the contract handed to the model (exported as JSON
//! schema) and the validator applied to its reply. Collection-level rules
//! such as "every id exactly once" are expressed with [`KeyRule`] so that
//! violations feed the repair loop like any other validation error.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value};

/// What a free-text string is expected to look like. Only affects mock
/// generation and the exported description.
#[derive(Debug, Clone, PartialEq)]
pub enum TextHint {
    Title,
    Sentence,
    Question,
    /// Describes the first attached image.
    ImageDescription,
    /// A verbatim contiguous excerpt of the given text.
    ExcerptOf(String),
    /// A passage taken from the given text, possibly lightly paraphrased.
    PassageOf(String),
    /// A rewrite of the given text.
    RewriteOf(String),
    /// An image or video generation prompt.
    VisualPrompt,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KeyRule {
    /// Items carry distinct values in this field.
    UniqueBy(String),
    /// The id arrays (or id strings) in this field, taken over all items,
    /// contain every value of the field's enum exactly once.
    PartitionBy(String),
    /// As `PartitionBy` but ids may be omitted.
    DisjointBy(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Schema {
    String {
        enum_values: Option<Vec<String>>,
        min_len: usize,
        hint: TextHint,
    },
    Integer {
        min: Option<i64>,
        max: Option<i64>,
    },
    Number {
        min: Option<f64>,
        max: Option<f64>,
    },
    Boolean,
    Array {
        items: Box<Schema>,
        min: usize,
        max: Option<usize>,
        unique: bool,
        key: Option<KeyRule>,
    },
    Object {
        fields: Vec<(String, Schema)>,
    },
}

impl Schema {
    pub fn text(hint: TextHint) -> Schema {
        Schema::String {
            enum_values: None,
            min_len: 1,
            hint,
        }
    }

    pub fn one_of<S: AsRef<str>>(values: &[S]) -> Schema {
        Schema::String {
            enum_values: Some(values.iter().map(|v| v.as_ref().to_string()).collect()),
            min_len: 1,
            hint: TextHint::Sentence,
        }
    }

    pub fn int(min: i64, max: i64) -> Schema {
        Schema::Integer {
            min: Some(min),
            max: Some(max),
        }
    }

    pub fn array(items: Schema, min: usize, max: Option<usize>) -> Schema {
        Schema::Array {
            items: Box::new(items),
            min,
            max,
            unique: false,
            key: None,
        }
    }

    /// Array of distinct strings drawn from `values`.
    pub fn id_set<S: AsRef<str>>(values: &[S], min: usize, max: Option<usize>) -> Schema {
        Schema::Array {
            items: Box::new(Schema::one_of(values)),
            min,
            max,
            unique: true,
            key: None,
        }
    }

    /// Array that must be an ordering of exactly `values`.
    pub fn permutation<S: AsRef<str>>(values: &[S]) -> Schema {
        Schema::id_set(values, values.len(), Some(values.len()))
    }

    pub fn object(fields: Vec<(&str, Schema)>) -> Schema {
        Schema::Object {
            fields: fields.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    /// Sets the key rule on an array schema.
    pub fn keyed(self, rule: KeyRule) -> Schema {
        match self {
            Schema::Array {
                items, min, max, unique, ..
            } => Schema::Array {
                items,
                min,
                max,
                unique,
                key: Some(rule),
            },
            other => other,
        }
    }

    pub fn field(&self, name: &str) -> Option<&Schema> {
        match self {
            Schema::Object { fields } => fields.iter().find(|(k, _)| k == name).map(|(_, s)| s),
            _ => None,
        }
    }

    /// Enum domain of a string schema or of the items of a string array.
    pub fn id_domain(&self) -> Option<&[String]> {
        match self {
            Schema::String {
                enum_values: Some(v), ..
            } => Some(v),
            Schema::Array { items, .. } => items.id_domain(),
            _ => None,
        }
    }

    /// Structural checks that must hold before any provider call.
    pub fn check_well_formed(&self) -> Result<(), String> {
        self.well_formed("$")
    }

    fn well_formed(&self, path: &str) -> Result<(), String> {
        match self {
            Schema::String {
                enum_values: Some(v), ..
            } => {
                if v.is_empty() {
                    return Err(format!("{path}: empty enum"));
                }
                let distinct: BTreeSet<&String> = v.iter().collect();
                if distinct.len() != v.len() {
                    return Err(format!("{path}: duplicate enum values"));
                }
                Ok(())
            }
            Schema::String { .. } | Schema::Boolean => Ok(()),
            Schema::Integer {
                min: Some(a),
                max: Some(b),
            } if a > b => Err(format!("{path}: min {a} > max {b}")),
            Schema::Integer { .. } => Ok(()),
            Schema::Number { min, max } => match (min, max) {
                (Some(a), Some(b)) if a > b || a.is_nan() || b.is_nan() => Err(format!("{path}: bad range")),
                _ => Ok(()),
            },
            Schema::Array {
                items,
                min,
                max,
                unique,
                key,
            } => {
                if let Some(max) = max {
                    if min > max {
                        return Err(format!("{path}: min {min} > max {max}"));
                    }
                }
                if *unique {
                    if let Some(domain) = items.id_domain() {
                        if domain.len() < *min {
                            return Err(format!(
                                "{path}: {min} distinct items required but only {} allowed values",
                                domain.len()
                            ));
                        }
                    }
                }
                if let Some(rule) = key {
                    let field = match rule {
                        KeyRule::UniqueBy(f) | KeyRule::PartitionBy(f) | KeyRule::DisjointBy(f) => f,
                    };
                    let Some(fs) = items.field(field) else {
                        return Err(format!("{path}: key field {field:?} missing from items"));
                    };
                    if !matches!(rule, KeyRule::UniqueBy(_)) && fs.id_domain().is_none() {
                        return Err(format!("{path}: key field {field:?} has no id domain"));
                    }
                }
                items.well_formed(&format!("{path}[]"))
            }
            Schema::Object { fields } => {
                let mut seen = BTreeSet::new();
                for (k, v) in fields {
                    if !seen.insert(k) {
                        return Err(format!("{path}: duplicate field {k:?}"));
                    }
                    v.well_formed(&format!("{path}.{k}"))?;
                }
                Ok(())
            }
        }
    }

    /// Validates a value, reporting the first failure with its JSON path.
    pub fn validate(&self, value: &Value) -> Result<(), String> {
        self.check(value, "$")
    }

    fn check(&self, value: &Value, path: &str) -> Result<(), String> {
        match self {
            Schema::String {
                enum_values,
                min_len,
                hint,
            } => {
                let s = value.as_str().ok_or_else(|| format!("{path}: expected string"))?;
                if s.trim().chars().count() < *min_len {
                    return Err(format!("{path}: string shorter than {min_len}"));
                }
                if let Some(values) = enum_values {
                    if !values.iter().any(|v| v == s) {
                        return Err(format!("{path}: {s:?} is not one of the allowed values"));
                    }
                }
                if let TextHint::ExcerptOf(text) = hint {
                    if !text.contains(s) {
                        return Err(format!("{path}: not a verbatim excerpt of the source text"));
                    }
                }
                Ok(())
            }
            Schema::Integer { min, max } => {
                let n = value.as_i64().ok_or_else(|| format!("{path}: expected integer"))?;
                if min.is_some_and(|m| n < m) || max.is_some_and(|m| n > m) {
                    return Err(format!("{path}: {n} out of range"));
                }
                Ok(())
            }
            Schema::Number { min, max } => {
                let n = value.as_f64().ok_or_else(|| format!("{path}: expected number"))?;
                if min.is_some_and(|m| n < m) || max.is_some_and(|m| n > m) {
                    return Err(format!("{path}: {n} out of range"));
                }
                Ok(())
            }
            Schema::Boolean => value.as_bool().map(|_| ()).ok_or_else(|| format!("{path}: expected boolean")),
            Schema::Array {
                items,
                min,
                max,
                unique,
                key,
            } => {
                let arr = value.as_array().ok_or_else(|| format!("{path}: expected array"))?;
                if arr.len() < *min {
                    return Err(format!("{path}: {} items, at least {min} required", arr.len()));
                }
                if let Some(max) = max {
                    if arr.len() > *max {
                        return Err(format!("{path}: {} items, at most {max} allowed", arr.len()));
                    }
                }
                for (i, item) in arr.iter().enumerate() {
                    items.check(item, &format!("{path}[{i}]"))?;
                }
                if *unique {
                    let mut seen = BTreeSet::new();
                    for (i, item) in arr.iter().enumerate() {
                        if !seen.insert(item.to_string()) {
                            return Err(format!("{path}[{i}]: duplicate item {item}"));
                        }
                    }
                }
                match key {
                    Some(rule) => check_key_rule(rule, items, arr, path),
                    None => Ok(()),
                }
            }
            Schema::Object { fields } => {
                let obj = value.as_object().ok_or_else(|| format!("{path}: expected object"))?;
                for (k, s) in fields {
                    let v = obj.get(k).ok_or_else(|| format!("{path}.{k}: missing field"))?;
                    s.check(v, &format!("{path}.{k}"))?;
                }
                Ok(())
            }
        }
    }

    /// JSON-schema rendering handed to live providers.
    pub fn to_json_schema(&self) -> Value {
        match self {
            Schema::String {
                enum_values,
                min_len,
                hint,
            } => {
                let mut m = Map::new();
                m.insert("type".into(), json!("string"));
                if let Some(v) = enum_values {
                    m.insert("enum".into(), json!(v));
                }
                if *min_len > 0 {
                    m.insert("minLength".into(), json!(min_len));
                }
                let desc = match hint {
                    TextHint::Title => "a short title",
                    TextHint::Sentence => "one or two sentences",
                    TextHint::Question => "a question",
                    TextHint::ImageDescription => "a description of the attached image",
                    TextHint::ExcerptOf(_) => "a verbatim excerpt of the source text",
                    TextHint::PassageOf(_) => "the part of the source text that belongs here",
                    TextHint::RewriteOf(_) => "a rewritten version of the original text",
                    TextHint::VisualPrompt => "a detailed visual generation prompt",
                };
                if enum_values.is_none() {
                    m.insert("description".into(), json!(desc));
                }
                Value::Object(m)
            }
            Schema::Integer { min, max } => {
                let mut m = Map::new();
                m.insert("type".into(), json!("integer"));
                if let Some(v) = min {
                    m.insert("minimum".into(), json!(v));
                }
                if let Some(v) = max {
                    m.insert("maximum".into(), json!(v));
                }
                Value::Object(m)
            }
            Schema::Number { min, max } => {
                let mut m = Map::new();
                m.insert("type".into(), json!("number"));
                if let Some(v) = min {
                    m.insert("minimum".into(), json!(v));
                }
                if let Some(v) = max {
                    m.insert("maximum".into(), json!(v));
                }
                Value::Object(m)
            }
            Schema::Boolean => json!({"type": "boolean"}),
            Schema::Array {
                items,
                min,
                max,
                unique,
                key,
            } => {
                let mut m = Map::new();
                m.insert("type".into(), json!("array"));
                m.insert("items".into(), items.to_json_schema());
                m.insert("minItems".into(), json!(min));
                if let Some(v) = max {
                    m.insert("maxItems".into(), json!(v));
                }
                if *unique {
                    m.insert("uniqueItems".into(), json!(true));
                }
                match key {
                    Some(KeyRule::UniqueBy(f)) => {
                        m.insert("x-unique-by".into(), json!(f));
                    }
                    Some(KeyRule::PartitionBy(f)) => {
                        m.insert("x-partition-by".into(), json!(f));
                    }
                    Some(KeyRule::DisjointBy(f)) => {
                        m.insert("x-disjoint-by".into(), json!(f));
                    }
                    None => {}
                }
                Value::Object(m)
            }
            Schema::Object { fields } => {
                let props: Map<String, Value> = fields.iter().map(|(k, s)| (k.clone(), s.to_json_schema())).collect();
                let required: Vec<&String> = fields.iter().map(|(k, _)| k).collect();
                json!({
                    "type": "object",
                    "properties": props,
                    "required": required,
                    "additionalProperties": false,
                })
            }
        }
    }
}

fn ids_in(value: &Value) -> Vec<String> {
    match value {
        Value::String(s) => vec![s.clone()],
        Value::Array(a) => a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
        _ => Vec::new(),
    }
}

fn check_key_rule(rule: &KeyRule, items: &Schema, arr: &[Value], path: &str) -> Result<(), String> {
    match rule {
        KeyRule::UniqueBy(field) => {
            let mut seen = BTreeSet::new();
            for (i, item) in arr.iter().enumerate() {
                let v = item.get(field).map(Value::to_string).unwrap_or_default();
                if !seen.insert(v.clone()) {
                    return Err(format!("{path}[{i}].{field}: duplicate value {v}"));
                }
            }
            Ok(())
        }
        KeyRule::PartitionBy(field) | KeyRule::DisjointBy(field) => {
            let mut count: BTreeMap<String, usize> = BTreeMap::new();
            for item in arr {
                for id in item.get(field).map(ids_in).unwrap_or_default() {
                    *count.entry(id).or_default() += 1;
                }
            }
            if let Some((id, _)) = count.iter().find(|(_, n)| **n > 1) {
                return Err(format!("{path}: {id} assigned more than once across {field}"));
            }
            if matches!(rule, KeyRule::PartitionBy(_)) {
                let domain = items.field(field).and_then(Schema::id_domain).unwrap_or(&[]);
                let missing: Vec<&String> = domain.iter().filter(|d| !count.contains_key(*d)).collect();
                if !missing.is_empty() {
                    let list: Vec<&str> = missing.iter().map(|s| s.as_str()).collect();
                    return Err(format!("{path}: ids not assigned: {}", list.join(", ")));
                }
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grouping(ids: &[&str]) -> Schema {
        Schema::array(
            Schema::object(vec![
                ("title", Schema::text(TextHint::Title)),
                ("shot_ids", Schema::id_set(ids, 1, None)),
            ]),
            1,
            None,
        )
        .keyed(KeyRule::PartitionBy("shot_ids".into()))
    }

    #[test]
    fn partition_rule_reports_missing_and_duplicate_ids() {
        let s = grouping(&["a", "b", "c"]);
        let ok = json!([{"title": "x", "shot_ids": ["a", "c"]}, {"title": "y", "shot_ids": ["b"]}]);
        assert!(s.validate(&ok).is_ok());
        let missing = json!([{"title": "x", "shot_ids": ["a"]}]);
        assert!(s.validate(&missing).unwrap_err().contains("b, c"));
        let dup = json!([{"title": "x", "shot_ids": ["a", "b"]}, {"title": "y", "shot_ids": ["b", "c"]}]);
        assert!(s.validate(&dup).unwrap_err().contains("more than once"));
    }

    #[test]
    fn permutation_rejects_drops_duplicates_and_inventions() {
        let s = Schema::permutation(&["a", "b", "c"]);
        assert!(s.validate(&json!(["c", "a", "b"])).is_ok());
        assert!(s.validate(&json!(["a", "b"])).is_err());
        assert!(s.validate(&json!(["a", "a", "b"])).is_err());
        assert!(s.validate(&json!(["a", "b", "z"])).unwrap_err().contains("$[2]"));
    }

    #[test]
    fn malformed_schemas_are_caught() {
        assert!(Schema::array(Schema::Boolean, 3, Some(2)).check_well_formed().is_err());
        assert!(Schema::one_of::<&str>(&[]).check_well_formed().is_err());
        assert!(Schema::id_set(&["a"], 2, None).check_well_formed().is_err());
        let bad_key = Schema::array(Schema::object(vec![("x", Schema::Boolean)]), 0, None).keyed(KeyRule::UniqueBy("y".into()));
        assert!(bad_key.check_well_formed().is_err());
        assert!(grouping(&["a"]).check_well_formed().is_ok());
    }

    #[test]
    fn paths_point_at_failing_field() {
        let s = Schema::object(vec![(
            "items",
            Schema::array(Schema::object(vec![("n", Schema::int(0, 3))]), 0, None),
        )]);
        let err = s.validate(&json!({"items": [{"n": 1}, {"n": 9}]})).unwrap_err();
        assert!(err.starts_with("$.items[1].n"), "{err}");
    }

    #[test]
    fn excerpt_must_be_verbatim() {
        let s = Schema::text(TextHint::ExcerptOf("the quick brown fox".into()));
        assert!(s.validate(&json!("quick brown")).is_ok());
        assert!(s.validate(&json!("quick fox")).is_err());
    }

    #[test]
    fn json_schema_export_keeps_rules() {
        let j = grouping(&["a"]).to_json_schema();
        assert_eq!(j["x-partition-by"], "shot_ids");
        assert_eq!(j["items"]["properties"]["shot_ids"]["items"]["enum"], json!(["a"]));
    }
}
