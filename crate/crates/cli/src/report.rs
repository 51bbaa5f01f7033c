//! CSV and JSON report emission. Every CSV gets a sibling `.json` with the
//! same fields; both are written atomically (temp file + rename).

use std::path::Path;

use serde_json::Value;
use specnorm::data::write_atomically;
use specnorm::error::Result;

/// Rows as (header, records); fields are pre-formatted strings so the CSV
/// column layout stays frozen.
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    fn to_json(&self, extra: &[(&str, Value)]) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, Value> = self
                    .header
                    .iter()
                    .zip(row)
                    .map(|(k, v)| ((*k).to_string(), cell_to_json(v)))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        let mut obj = serde_json::Map::new();
        obj.insert("rows".to_string(), Value::Array(rows));
        for (k, v) in extra {
            obj.insert((*k).to_string(), v.clone());
        }
        Value::Object(obj)
    }

    /// Write `<path>` as CSV and `<path>.json` with the same fields plus any
    /// summary extras.
    pub fn write(&self, path: &Path, extra: &[(&str, Value)]) -> Result<()> {
        write_atomically(path, self.to_csv().as_bytes())?;
        let json_path = sibling_json(path);
        let text = serde_json::to_string_pretty(&self.to_json(extra)).expect("valid json");
        write_atomically(&json_path, text.as_bytes())?;
        Ok(())
    }
}

pub fn sibling_json(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".json");
    std::path::PathBuf::from(name)
}

fn cell_to_json(cell: &str) -> Value {
    if cell.is_empty() {
        return Value::Null;
    }
    if let Ok(n) = cell.parse::<f64>() {
        if let Some(num) = serde_json::Number::from_f64(n) {
            return Value::Number(num);
        }
    }
    Value::String(cell.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_is_frozen() {
        let mut t = Table::new(vec!["a", "b"]);
        t.push(vec!["1".into(), "x".into()]);
        assert_eq!(t.to_csv(), "a,b\n1,x\n");
    }

    #[test]
    fn json_mirrors_fields() {
        let mut t = Table::new(vec!["value"]);
        t.push(vec!["2.5".into()]);
        let json = t.to_json(&[("note", Value::String("hi".into()))]);
        assert_eq!(json["rows"][0]["value"], 2.5);
        assert_eq!(json["note"], "hi");
    }
}
