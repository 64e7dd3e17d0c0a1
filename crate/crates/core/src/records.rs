//! Canonical response and rating record formats (CSV and JSONL).
//!
//! CSV files carry the canonical columns only. JSONL lines add `hit_id`,
//! `is_test` and `boost`, which the study service needs for its log.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ResponseValue, Triplet};
use crate::quality::SequenceKey;
use crate::reconstruction::ResponseSet;

pub type Timestamp = DateTime<Utc>;

pub const TRIPLET_COLUMNS: [&str; 9] =
    ["source_id", "distortion_type", "i", "j", "k", "response", "time_stamp", "time_used", "worker_id"];
pub const DCR_COLUMNS: [&str; 7] =
    ["source_id", "distortion_type", "distortion_level", "rating", "time_stamp", "time_used", "worker_id"];

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

/// ISO-8601 UTC with millisecond precision, e.g. `2024-05-01T12:00:00.250Z`.
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s).map(|t| t.with_timezone(&Utc))
}

/// Rounds to the millisecond grid used by every serialized timestamp.
pub fn truncate_millis(t: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp_millis(t.timestamp_millis()).unwrap_or(t)
}

/// Rounds seconds to the 3 decimals written in CSV.
pub fn round_time_used(seconds: f64) -> f64 {
    (seconds * 1000.0).round() / 1000.0
}

mod millis {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_timestamp(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        parse_timestamp(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub source_id: String,
    pub distortion_type: String,
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub response: ResponseValue,
    #[serde(with = "millis")]
    pub time_stamp: DateTime<Utc>,
    pub time_used: f64,
    pub worker_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub hit_id: String,
    #[serde(default)]
    pub is_test: bool,
    /// Boost label such as `amplify+zoom`; empty for plain trials.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub boost: String,
}

impl TripletRecord {
    pub fn triplet(&self) -> Triplet {
        Triplet::new(self.i, self.j, self.k)
    }

    pub fn key(&self) -> SequenceKey {
        SequenceKey::new(self.source_id.clone(), self.distortion_type.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcrRecord {
    pub source_id: String,
    pub distortion_type: String,
    pub distortion_level: usize,
    /// 0 (imperceptible) to 4 (very annoying); `None` when skipped.
    pub rating: Option<u8>,
    #[serde(with = "millis")]
    pub time_stamp: DateTime<Utc>,
    pub time_used: f64,
    pub worker_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub hit_id: String,
    #[serde(default)]
    pub is_test: bool,
}

impl DcrRecord {
    pub fn key(&self) -> SequenceKey {
        SequenceKey::new(self.source_id.clone(), self.distortion_type.clone())
    }
}

pub fn write_triplet_csv<W: Write>(out: W, records: &[TripletRecord]) -> Result<(), RecordError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIPLET_COLUMNS)?;
    for r in records {
        w.write_record([
            r.source_id.clone(),
            r.distortion_type.clone(),
            r.i.to_string(),
            r.j.to_string(),
            r.k.to_string(),
            r.response.as_str().to_string(),
            format_timestamp(&r.time_stamp),
            format!("{:.3}", r.time_used),
            r.worker_id.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dcr_csv<W: Write>(out: W, records: &[DcrRecord]) -> Result<(), RecordError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DCR_COLUMNS)?;
    for r in records {
        w.write_record([
            r.source_id.clone(),
            r.distortion_type.clone(),
            r.distortion_level.to_string(),
            r.rating.map_or_else(String::new, |v| v.to_string()),
            format_timestamp(&r.time_stamp),
            format!("{:.3}", r.time_used),
            r.worker_id.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn column_index(headers: &csv::StringRecord, names: &[&str]) -> Result<Vec<usize>, RecordError> {
    names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h.trim() == *n)
                .ok_or_else(|| RecordError::Invalid { line: 1, message: format!("missing column {n}") })
        })
        .collect()
}

fn parse_field<T: std::str::FromStr>(raw: &str, name: &str, line: usize) -> Result<T, RecordError>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse().map_err(|e| RecordError::Invalid { line, message: format!("{name} = {raw:?}: {e}") })
}

fn parse_time(raw: &str, line: usize) -> Result<DateTime<Utc>, RecordError> {
    parse_timestamp(raw.trim())
        .map_err(|e| RecordError::Invalid { line, message: format!("time_stamp = {raw:?}: {e}") })
}

/// Reads triplet records; columns are located by header name, extra columns are ignored.
pub fn read_triplet_csv<R: Read>(input: R) -> Result<Vec<TripletRecord>, RecordError> {
    let mut rdr = csv::Reader::from_reader(input);
    let idx = column_index(rdr.headers()?, &TRIPLET_COLUMNS)?;
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let line = n + 2;
        let f = |c: usize| row.get(idx[c]).unwrap_or("");
        out.push(TripletRecord {
            source_id: f(0).to_string(),
            distortion_type: f(1).to_string(),
            i: parse_field(f(2), "i", line)?,
            j: parse_field(f(3), "j", line)?,
            k: parse_field(f(4), "k", line)?,
            response: parse_field(f(5), "response", line)?,
            time_stamp: parse_time(f(6), line)?,
            time_used: parse_field(f(7), "time_used", line)?,
            worker_id: f(8).to_string(),
            hit_id: String::new(),
            is_test: false,
            boost: String::new(),
        });
    }
    Ok(out)
}

pub fn read_dcr_csv<R: Read>(input: R) -> Result<Vec<DcrRecord>, RecordError> {
    let mut rdr = csv::Reader::from_reader(input);
    let idx = column_index(rdr.headers()?, &DCR_COLUMNS)?;
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let line = n + 2;
        let f = |c: usize| row.get(idx[c]).unwrap_or("");
        let rating = match f(3).trim() {
            "" => None,
            raw => {
                let v: u8 = parse_field(raw, "rating", line)?;
                if v > 4 {
                    return Err(RecordError::Invalid { line, message: format!("rating {v} above 4") });
                }
                Some(v)
            }
        };
        out.push(DcrRecord {
            source_id: f(0).to_string(),
            distortion_type: f(1).to_string(),
            distortion_level: parse_field(f(2), "distortion_level", line)?,
            rating,
            time_stamp: parse_time(f(4), line)?,
            time_used: parse_field(f(5), "time_used", line)?,
            worker_id: f(6).to_string(),
            hit_id: String::new(),
            is_test: false,
        });
    }
    Ok(out)
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, records: &[T]) -> Result<(), RecordError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(input: R) -> Result<Vec<T>, RecordError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| RecordError::Invalid { line: n + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "ndjson"))
}

/// Reads triplet records from `.csv` or `.jsonl` by extension.
pub fn load_triplet_records(path: &Path) -> Result<Vec<TripletRecord>, RecordError> {
    let file = std::fs::File::open(path)?;
    if is_jsonl(path) {
        read_jsonl(std::io::BufReader::new(file))
    } else {
        read_triplet_csv(file)
    }
}

pub fn load_dcr_records(path: &Path) -> Result<Vec<DcrRecord>, RecordError> {
    let file = std::fs::File::open(path)?;
    if is_jsonl(path) {
        read_jsonl(std::io::BufReader::new(file))
    } else {
        read_dcr_csv(file)
    }
}

pub fn save_triplet_records(path: &Path, records: &[TripletRecord]) -> Result<(), RecordError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if is_jsonl(path) {
        write_jsonl(file, records)
    } else {
        write_triplet_csv(file, records)
    }
}

/// Groups triplet answers per sequence. Test questions are dropped unless
/// `include_tests`; the stimulus count is the largest index seen plus one.
pub fn group_responses<'a>(
    records: impl IntoIterator<Item = &'a TripletRecord>,
    include_tests: bool,
) -> BTreeMap<SequenceKey, ResponseSet> {
    let mut out: BTreeMap<SequenceKey, ResponseSet> = BTreeMap::new();
    for r in records {
        if r.is_test && !include_tests {
            continue;
        }
        let set = out.entry(r.key()).or_default();
        set.stimulus_count = set.stimulus_count.max(r.i.max(r.j).max(r.k) + 1);
        set.records.push((r.triplet(), r.response));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TripletRecord> {
        let t0 = parse_timestamp("2024-03-01T10:00:00.125Z").unwrap();
        (0..5)
            .map(|n| TripletRecord {
                source_id: "img, \"1\"".into(),
                distortion_type: "lens_blur".into(),
                i: n,
                j: 0,
                k: n + 2,
                response: [ResponseValue::Left, ResponseValue::Right, ResponseValue::NotSure, ResponseValue::Skipped]
                    [n % 4],
                time_stamp: t0 + chrono::Duration::milliseconds(1500 * n as i64),
                time_used: round_time_used(1.0 + n as f64 * 0.3337),
                worker_id: format!("w{n}"),
                hit_id: String::new(),
                is_test: false,
                boost: String::new(),
            })
            .collect()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let recs = sample();
        let mut buf = Vec::new();
        write_triplet_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("source_id,distortion_type,i,j,k,response,time_stamp,time_used,worker_id\n"));
        assert!(text.contains(",2024-03-01T10:00:00.125Z,1.000,w0"));
        let back = read_triplet_csv(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
        let mut again = Vec::new();
        write_triplet_csv(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn jsonl_round_trip_keeps_extras() {
        let mut recs = sample();
        recs[1].is_test = true;
        recs[2].boost = "amplify".into();
        recs[3].hit_id = "hit-7".into();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        let back: Vec<TripletRecord> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn dcr_round_trip_with_skips() {
        let t = parse_timestamp("2024-03-01T10:00:00Z").unwrap();
        let recs: Vec<DcrRecord> = (0..6)
            .map(|n| DcrRecord {
                source_id: "s".into(),
                distortion_type: "jpeg".into(),
                distortion_level: n,
                rating: (n < 5).then_some(n as u8),
                time_stamp: t,
                time_used: 2.5,
                worker_id: "w".into(),
                hit_id: String::new(),
                is_test: false,
            })
            .collect();
        let mut buf = Vec::new();
        write_dcr_csv(&mut buf, &recs).unwrap();
        assert_eq!(read_dcr_csv(buf.as_slice()).unwrap(), recs);
        let bad = "source_id,distortion_type,distortion_level,rating,time_stamp,time_used,worker_id\ns,j,1,7,2024-03-01T10:00:00Z,1,w\n";
        assert!(matches!(read_dcr_csv(bad.as_bytes()), Err(RecordError::Invalid { line: 2, .. })));
    }

    #[test]
    fn reader_reports_line_and_missing_columns() {
        let missing = "source_id,i,j,k\n";
        assert!(matches!(read_triplet_csv(missing.as_bytes()), Err(RecordError::Invalid { line: 1, .. })));
        let bad = "source_id,distortion_type,i,j,k,response,time_stamp,time_used,worker_id\na,b,1,0,2,maybe,2024-03-01T10:00:00Z,1,w\n";
        assert!(matches!(read_triplet_csv(bad.as_bytes()), Err(RecordError::Invalid { line: 2, .. })));
    }

    #[test]
    fn grouping_skips_tests() {
        let mut recs = sample();
        recs[0].is_test = true;
        let g = group_responses(&recs, false);
        let set = &g[&recs[0].key()];
        assert_eq!(set.records.len(), 4);
        assert_eq!(set.stimulus_count, 7);
        assert_eq!(group_responses(&recs, true)[&recs[0].key()].records.len(), 5);
    }
}
