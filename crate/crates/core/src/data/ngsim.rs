use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{DataError, Sample, Track};

/// Where a field lives in a delimited row: by header name (case-insensitive)
/// or by zero-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    /// Bare integers are positions; anything else is a header name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.trim().to_string()),
        })
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnRef::Name(n) => f.write_str(n),
            ColumnRef::Index(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub vehicle_id: ColumnRef,
    pub frame: ColumnRef,
    pub x: ColumnRef,
    pub y: ColumnRef,
    pub lane: ColumnRef,
}

impl Default for ColumnMap {
    /// The NGSIM column names. Headerless NGSIM text files are handled by
    /// falling back to the standard column positions.
    fn default() -> Self {
        ColumnMap {
            vehicle_id: ColumnRef::Name("Vehicle_ID".into()),
            frame: ColumnRef::Name("Frame_ID".into()),
            x: ColumnRef::Name("Local_X".into()),
            y: ColumnRef::Name("Local_Y".into()),
            lane: ColumnRef::Name("Lane_ID".into()),
        }
    }
}

const NGSIM_POSITIONS: [(&str, usize); 5] = [
    ("vehicle_id", 0),
    ("frame_id", 1),
    ("local_x", 4),
    ("local_y", 5),
    ("lane_id", 13),
];

impl ColumnMap {
    fn fields(&self) -> [(&'static str, &ColumnRef); 5] {
        [
            ("vehicle_id", &self.vehicle_id),
            ("frame", &self.frame),
            ("x", &self.x),
            ("y", &self.y),
            ("lane", &self.lane),
        ]
    }

    fn resolve(&self, header: Option<&[String]>) -> Result<[usize; 5], DataError> {
        let mut out = [0; 5];
        for (slot, (_, col)) in out.iter_mut().zip(self.fields()) {
            *slot = match (col, header) {
                (ColumnRef::Index(i), _) => *i,
                (ColumnRef::Name(name), Some(h)) => h
                    .iter()
                    .position(|c| c.eq_ignore_ascii_case(name))
                    .ok_or_else(|| DataError::MissingColumn(name.clone()))?,
                (ColumnRef::Name(name), None) => NGSIM_POSITIONS
                    .iter()
                    .find(|(n, _)| n.eq_ignore_ascii_case(name))
                    .map(|&(_, i)| i)
                    .ok_or_else(|| DataError::MissingColumn(name.clone()))?,
            };
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedFile {
    /// Sorted by vehicle id.
    pub tracks: Vec<Track>,
    /// Rows skipped for missing or malformed fields, or duplicate frames.
    pub dropped_rows: usize,
}

pub fn parse_ngsim(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<ParsedFile, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_ngsim_str(&text, columns)
}

fn split_row(line: &str) -> Vec<String> {
    if line.contains(',') {
        line.split(',').map(|f| f.trim().to_string()).collect()
    } else {
        line.split_whitespace().map(str::to_string).collect()
    }
}

/// Parses comma- or whitespace-delimited rows. Lines starting with `#` are
/// comments. The first data line is a header when any field is non-numeric.
pub fn parse_ngsim_str(text: &str, columns: &ColumnMap) -> Result<ParsedFile, DataError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#')).peekable();
    let header = match lines.peek() {
        Some(first) => {
            let fields = split_row(first);
            if fields.iter().any(|f| f.parse::<f64>().is_err()) {
                lines.next();
                Some(fields)
            } else {
                None
            }
        }
        None => None,
    };
    let idx = columns.resolve(header.as_deref())?;

    let mut by_vehicle: BTreeMap<u32, BTreeMap<u32, Sample>> = BTreeMap::new();
    let mut dropped = 0;
    for line in lines {
        let fields = split_row(line);
        let get = |i: usize| fields.get(i).filter(|f| !f.is_empty()).map(String::as_str);
        let parsed = (|| {
            let vid = get(idx[0])?.parse::<f64>().ok()?;
            let frame = get(idx[1])?.parse::<f64>().ok()?;
            let x = get(idx[2])?.parse::<f64>().ok()?;
            let y = get(idx[3])?.parse::<f64>().ok()?;
            let lane = get(idx[4])?.parse::<f64>().ok()?;
            let integral = |v: f64| v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64;
            if !(integral(vid) && integral(frame) && integral(lane) && lane >= 1.0 && x.is_finite() && y.is_finite()) {
                return None;
            }
            Some((vid as u32, Sample { frame: frame as u32, x, y, lane: lane as u32 }))
        })();
        match parsed {
            Some((vid, s)) => {
                let frames = by_vehicle.entry(vid).or_default();
                if frames.insert(s.frame, s).is_some() {
                    dropped += 1;
                }
            }
            None => dropped += 1,
        }
    }
    let tracks = by_vehicle
        .into_iter()
        .map(|(vid, frames)| Track::new(vid, frames.into_values().collect()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ParsedFile {
        tracks,
        dropped_rows: dropped,
    })
}

/// Writes tracks as a comma-delimited file with NGSIM column names. Values
/// use the shortest round-trip decimal form.
pub fn write_ngsim<W: Write>(tracks: &[Track], mut out: W) -> std::io::Result<()> {
    writeln!(out, "# forecast-ngsim v1")?;
    writeln!(out, "Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID")?;
    for t in tracks {
        for s in t.samples() {
            writeln!(out, "{},{},{:?},{:?},{}", t.vehicle_id, s.frame, s.x, s.y, s.lane)?;
        }
    }
    Ok(())
}
