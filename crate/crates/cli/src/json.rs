use ndarray::{ArrayView1, ArrayView2};
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u64 = 1;

const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds to 12 significant digits; non-finite values become `"inf"`,
/// `"-inf"` or `"nan"`.
pub fn num(v: f64) -> Value {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    let rounded: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v)
        .parse()
        .unwrap_or(v);
    // Avoid "-0.0" in output.
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    serde_json::Number::from_f64(rounded).map_or(Value::Null, Value::Number)
}

pub fn vector(v: ArrayView1<'_, f64>) -> Value {
    v.iter().map(|&x| num(x)).collect()
}

pub fn matrix(m: ArrayView2<'_, f64>) -> Value {
    m.rows().into_iter().map(vector).collect()
}

/// Applies [`num`] to every float in an arbitrary value, leaving integers
/// and strings alone.
pub fn normalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => num(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(items) => items.into_iter().map(normalize).collect(),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, normalize(v))).collect()),
        other => other,
    }
}

/// Object holding `schema_version` plus `fields`. Keys serialize sorted.
pub fn document(fields: Vec<(&str, Value)>) -> Value {
    let mut map = Map::new();
    map.insert("schema_version".into(), SCHEMA_VERSION.into());
    for (k, v) in fields {
        map.insert(k.into(), v);
    }
    Value::Object(map)
}
