use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::Format;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Writes `<stem>.csv` or `<stem>.json` depending on `format`.
pub fn write_records<T: Serialize>(dir: &Path, stem: &str, format: Format, rows: &[T]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv"))).map_err(|e| CliError::Io(e.to_string()))?;
            for r in rows {
                w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
            }
            w.flush()?;
        }
        Format::Json => {
            let text = serde_json::to_string_pretty(rows).map_err(|e| CliError::Io(e.to_string()))?;
            std::fs::write(dir.join(format!("{stem}.json")), text + "\n")?;
        }
    }
    Ok(())
}

/// Writes `summary.json`, stamping the schema version and experiment name.
pub fn write_summary(dir: &Path, experiment: &str, mut summary: Value) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    if let Value::Object(map) = &mut summary {
        map.insert("schema".into(), SCHEMA_VERSION.into());
        map.insert("experiment".into(), experiment.into());
    }
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), text + "\n")?;
    Ok(())
}
