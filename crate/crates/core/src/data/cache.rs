//! Instance cache: JSON Lines. The first line is a header object
//! `{"format":"forecast-instances","version":1,"count":N}`; each following
//! line is one serialized `PredictionInstance`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, PredictionInstance};

pub const INSTANCE_FORMAT: &str = "forecast-instances";
pub const INSTANCE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    count: usize,
}

pub fn write_instances(path: &Path, instances: &[PredictionInstance]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        format: INSTANCE_FORMAT.into(),
        version: INSTANCE_FORMAT_VERSION,
        count: instances.len(),
    };
    let json = |e: serde_json::Error| DataError::Cache(e.to_string());
    writeln!(w, "{}", serde_json::to_string(&header).map_err(json)?)?;
    for inst in instances {
        writeln!(w, "{}", serde_json::to_string(inst).map_err(json)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_instances(path: &Path) -> Result<Vec<PredictionInstance>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().ok_or_else(|| DataError::Cache("empty cache file".into()))??;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| DataError::Cache(format!("bad header: {e}")))?;
    if header.format != INSTANCE_FORMAT {
        return Err(DataError::Cache(format!("unexpected format tag {:?}", header.format)));
    }
    if header.version != INSTANCE_FORMAT_VERSION {
        return Err(DataError::Cache(format!("unsupported version {}", header.version)));
    }
    let mut out = Vec::with_capacity(header.count);
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = serde_json::from_str(&line).map_err(|e| DataError::Cache(format!("line {}: {e}", n + 2)))?;
        out.push(inst);
    }
    if out.len() != header.count {
        return Err(DataError::Cache(format!("header promises {} instances, found {}", header.count, out.len())));
    }
    Ok(out)
}
