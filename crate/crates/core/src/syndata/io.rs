//! JSON-lines dataset files.
//!
//! The first line is a header record
//! `{"format":"fnode-panel","version":1,"obs_dim":..,"generator":..,"seed":..,"meta":{..}}`,
//! followed by one record per trajectory
//! `{"id":..,"label":..|null,"times":[..],"values":[[..],..],"meta":{..}}`.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{PanelDataset, Trajectory};
use crate::error::{Error, Result};
use crate::json;

const FORMAT: &str = "fnode-panel";
const VERSION: u64 = 1;

pub fn write_dataset(data: &PanelDataset) -> String {
    let mut out = String::new();
    let header = json!({
        "format": FORMAT,
        "version": VERSION,
        "obs_dim": data.obs_dim,
        "generator": data.generator,
        "seed": data.seed,
        "meta": data.meta,
    });
    json::write_value(&mut out, &header);
    out.push('\n');
    for t in &data.trajectories {
        let record = json!({
            "id": t.id,
            "label": t.label,
            "times": json::floats(&t.times),
            "values": Value::Array(t.values.iter().map(|v| json::floats(v)).collect()),
            "meta": t.meta,
        });
        json::write_value(&mut out, &record);
        out.push('\n');
    }
    out
}

/// Writes atomically via a sibling temporary file.
pub fn save_dataset(data: &PanelDataset, path: &Path) -> Result<()> {
    crate::fsio::write_atomic(path, write_dataset(data).as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<PanelDataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn parse_dataset(text: &str, origin: &str) -> Result<PanelDataset> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines
        .next()
        .ok_or_else(|| err(1, "empty file, expected a header record".into()))?;
    let header: Map<String, Value> = serde_json::from_str(htext).map_err(|e| err(hline, format!("header: {e}")))?;
    if header.get("format").and_then(Value::as_str) != Some(FORMAT) {
        return Err(err(hline, format!("header `format` must be \"{FORMAT}\"")));
    }
    if header.get("version").and_then(Value::as_u64) != Some(VERSION) {
        return Err(err(hline, format!("unsupported version, expected {VERSION}")));
    }
    let obs_dim = header
        .get("obs_dim")
        .and_then(Value::as_u64)
        .ok_or_else(|| err(hline, "header missing integer `obs_dim`".into()))? as usize;
    let generator = header
        .get("generator")
        .and_then(Value::as_str)
        .unwrap_or("external")
        .to_string();
    let seed = header.get("seed").and_then(Value::as_u64);
    let meta = header.get("meta").cloned().unwrap_or(Value::Object(Map::new()));

    let mut trajectories = Vec::new();
    for (line, body) in lines {
        let rec: Map<String, Value> = serde_json::from_str(body).map_err(|e| err(line, e.to_string()))?;
        let t = parse_record(&rec).map_err(|m| err(line, m))?;
        if t.obs_dim() != obs_dim {
            return Err(err(
                line,
                format!("observation dimension {} does not match header {obs_dim}", t.obs_dim()),
            ));
        }
        t.validate().map_err(|e| err(line, e.to_string()))?;
        trajectories.push(t);
    }
    if trajectories.is_empty() {
        return Err(err(hline, "no trajectory records".into()));
    }
    Ok(PanelDataset {
        trajectories,
        obs_dim,
        generator,
        seed,
        meta,
    })
}

fn float_array(v: &Value, what: &str) -> std::result::Result<Vec<f64>, String> {
    v.as_array()
        .ok_or_else(|| format!("`{what}` must be an array"))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| format!("`{what}` holds a non-number")))
        .collect()
}

fn parse_record(rec: &Map<String, Value>) -> std::result::Result<Trajectory, String> {
    let id = rec.get("id").and_then(Value::as_u64).ok_or("missing integer `id`")? as usize;
    let label = match rec.get("label") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or("`label` must be an integer or null")? as usize),
    };
    let times = float_array(rec.get("times").ok_or("missing `times`")?, "times")?;
    let values = rec
        .get("values")
        .and_then(Value::as_array)
        .ok_or("missing array `values`")?
        .iter()
        .map(|row| float_array(row, "values"))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Trajectory {
        id,
        label,
        times,
        values,
        meta: rec.get("meta").cloned().unwrap_or(Value::Object(Map::new())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syndata::{generate_set_a, SineConfig};

    #[test]
    fn round_trip_is_exact() {
        let data = generate_set_a(&SineConfig {
            n_per_class: 3,
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let text = write_dataset(&data);
        let back = parse_dataset(&text, "mem").unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let err = parse_dataset("", "empty.jsonl").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn mixed_dimensions_are_rejected_with_line() {
        let text = concat!(
            r#"{"format":"fnode-panel","version":1,"obs_dim":1,"generator":"x","seed":null,"meta":{}}"#,
            "\n",
            r#"{"id":0,"label":null,"times":[0.0,1.0],"values":[[1.0],[2.0]],"meta":{}}"#,
            "\n",
            r#"{"id":1,"label":null,"times":[0.0,1.0],"values":[[1.0,3.0],[2.0,4.0]],"meta":{}}"#,
            "\n"
        );
        let err = parse_dataset(text, "mixed").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn malformed_record_reports_line() {
        let text = concat!(
            r#"{"format":"fnode-panel","version":1,"obs_dim":1,"generator":"x","seed":null,"meta":{}}"#,
            "\n",
            "{not json}\n"
        );
        assert!(matches!(parse_dataset(text, "bad"), Err(Error::Parse { line: 2, .. })));
    }
}
