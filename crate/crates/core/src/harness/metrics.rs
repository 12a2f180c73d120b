//! Training telemetry and its CSV form.
//!
//! The metrics file is CSV with exactly this header:
//!
//! ```text
//! meta_iteration,meta_loss,avg_reward,success_rate,level,mean_intrinsic,wall_time
//! ```
//!
//! `meta_iteration` starts at 1. Floats use shortest round-trip formatting.
//! `wall_time` is seconds since the run started, or `0` when wall-clock
//! logging is disabled (the default, which keeps files byte-reproducible).

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 7] = [
    "meta_iteration",
    "meta_loss",
    "avg_reward",
    "success_rate",
    "level",
    "mean_intrinsic",
    "wall_time",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub meta_iteration: usize,
    pub meta_loss: f64,
    pub avg_reward: f64,
    pub success_rate: f64,
    pub level: usize,
    pub mean_intrinsic: f64,
    pub wall_time: f64,
}

pub fn to_csv_string(records: &[MetricsRecord]) -> Result<String> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| Error::parse("metrics", e.to_string()))?;
    for r in records {
        writer
            .serialize(r)
            .map_err(|e| Error::parse("metrics", e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::parse("metrics", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let text = to_csv_string(records)?;
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Parses metrics CSV text, reporting malformed rows with their line number.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse("line 1", e.to_string()))?
        .clone();
    if header.is_empty() {
        return Err(Error::parse("line 1", "empty metrics file"));
    }
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::parse(
            "line 1",
            format!("expected header '{}'", CSV_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<MetricsRecord>() {
        let record = row.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line().to_string())
                .unwrap_or_else(|| "?".into());
            Error::parse(format!("line {line}"), e.to_string())
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(i: usize) -> MetricsRecord {
        MetricsRecord {
            meta_iteration: i,
            meta_loss: 1.0 / (i as f64 + 3.0),
            avg_reward: -5.25 + i as f64 * 0.1,
            success_rate: 0.45,
            level: 1 + i / 3,
            mean_intrinsic: 0.0,
            wall_time: 0.0,
        }
    }

    #[test]
    fn header_and_rows() {
        let text = to_csv_string(&[record(1), record(2)]).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "meta_iteration,meta_loss,avg_reward,success_rate,level,mean_intrinsic,wall_time"
        );
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut text = to_csv_string(&[record(1), record(2)]).unwrap();
        text.push_str("3,abc,0,0,1,0,0\n");
        let err = parse_csv(&text).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
        assert!(parse_csv("").is_err());
        assert!(parse_csv("a,b\n1,2\n").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(
            rows in prop::collection::vec(
                (-1e6f64..1e6, -1e3f64..1e3, 0.0f64..=1.0, 1usize..6, 0.0f64..10.0, 0.0f64..1e4),
                0..20,
            )
        ) {
            let records: Vec<MetricsRecord> = rows
                .iter()
                .enumerate()
                .map(|(i, &(loss, reward, success, level, intrinsic, wall))| MetricsRecord {
                    meta_iteration: i + 1,
                    meta_loss: loss,
                    avg_reward: reward,
                    success_rate: success,
                    level,
                    mean_intrinsic: intrinsic,
                    wall_time: wall,
                })
                .collect();
            let text = to_csv_string(&records).unwrap();
            prop_assert_eq!(parse_csv(&text).unwrap(), records);
        }
    }
}
