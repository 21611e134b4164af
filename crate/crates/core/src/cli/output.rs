use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use crate::measure::GridMeasure;
use crate::numfmt::g17;

use super::CliError;

/// Pretty JSON with every float printed as `%.17g`; non-finite floats
/// become `null`.
pub fn to_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

fn write_value(out: &mut String, value: &Value, depth: usize) {
    let pad = |out: &mut String, d: usize| out.push_str(&"  ".repeat(d));
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().expect("f64 number");
                out.push_str(&if x.is_finite() { g17(x) } else { "null".into() });
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                pad(out, depth + 1);
                write_value(out, item, depth + 1);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (k, (key, item)) in map.iter().enumerate() {
                pad(out, depth + 1);
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, depth + 1);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push('}');
        }
    }
}

/// Floats that serde_json would refuse (NaN, infinities) as `null`.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    let file = File::create(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(BufWriter::new(file))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(io_at(path))
}

pub fn write_measure(path: &Path, measure: &GridMeasure) -> Result<(), CliError> {
    measure.save_csv(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })
}

/// Header row then one row per record, floats as `%.17g`.
pub fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|&x| g17(x))).map_err(csv_err)?;
    }
    w.flush().map_err(io_at(path))
}

/// Runs a `write_csv`-style exporter into `path`.
pub fn write_with<F>(path: &Path, export: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    export(&mut w).and_then(|_| w.flush()).map_err(io_at(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_use_seventeen_digits() {
        let v = json!({"a": 0.1, "b": [1, 2.5], "c": null, "d": "x\"y", "e": {}});
        let text = to_json(&v);
        assert!(text.contains("\"a\": 0.10000000000000001"));
        assert!(text.contains("2.5"));
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["d"], "x\"y");
        assert_eq!(to_json(&json!({"n": num(f64::NAN)})), "{\n  \"n\": null\n}\n");
    }
}
