//! File formats: canonical interaction CSV, learner profile CSV and JSON
//! helpers.
//!
//! Canonical interaction header:
//! `user_id,exercise_id,skill_id,timestamp,correct,mastery_before,mastery_after`.
//! `timestamp` is an integer epoch value or an ISO-8601 string (converted to
//! Unix milliseconds); missing mastery is an empty field.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Interaction, LearnerProfile};

pub const INTERACTION_HEADER: [&str; 7] = [
    "user_id",
    "exercise_id",
    "skill_id",
    "timestamp",
    "correct",
    "mastery_before",
    "mastery_after",
];

/// An unparsed interaction row. Numeric fields are kept as text so that
/// malformed values can be reported per record instead of failing the file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub row: u64,
    pub user_id: String,
    pub exercise_id: String,
    pub skill_id: String,
    pub timestamp: String,
    pub correct: String,
    pub mastery_before: String,
    pub mastery_after: String,
}

pub fn parse_timestamp(text: &str) -> Option<i64> {
    let s = text.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp_millis());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp_millis());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp_millis())
}

pub fn parse_bool(text: &str) -> Option<bool> {
    match text.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" => Some(true),
        "0" | "false" | "f" | "no" => Some(false),
        _ => None,
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn column_indices(headers: &csv::StringRecord, wanted: &[&str], path: &Path) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| {
                Error::InvalidRecord(format!("{}: missing column `{name}`", path.display()))
            })
        })
        .collect()
}

/// Reads a canonical interaction file without interpreting numeric fields.
pub fn read_raw_records(path: &Path) -> Result<Vec<RawRecord>> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers()?.clone();
    let idx = column_indices(&headers, &INTERACTION_HEADER, path)?;
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |k: usize| record.get(idx[k]).unwrap_or("").to_string();
        out.push(RawRecord {
            row: row as u64,
            user_id: field(0),
            exercise_id: field(1),
            skill_id: field(2),
            timestamp: field(3),
            correct: field(4),
            mastery_before: field(5),
            mastery_after: field(6),
        });
    }
    Ok(out)
}

/// Reads an already preprocessed canonical file. Any missing or malformed
/// field is an error; `row` is the data-row position in the file.
pub fn read_interactions(path: &Path) -> Result<Vec<Interaction>> {
    read_raw_records(path)?
        .into_iter()
        .map(|raw| {
            crate::preprocess::parse_record(&raw)
                .map_err(|e| Error::InvalidRecord(format!("{}: {e}", path.display())))
        })
        .collect()
}

pub fn write_interactions(path: &Path, interactions: &[Interaction]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(INTERACTION_HEADER)?;
    for i in interactions {
        w.write_record([
            i.user_id.as_str(),
            i.exercise_id.as_str(),
            i.skill_id.as_str(),
            &i.timestamp.to_string(),
            if i.correct { "1" } else { "0" },
            &i.mastery_before.to_string(),
            &i.mastery_after.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_profiles(path: &Path) -> Result<Vec<LearnerProfile>> {
    let mut reader = open_reader(path)?;
    let mut out = Vec::new();
    for record in reader.deserialize() {
        let profile: LearnerProfile = record?;
        profile.validate()?;
        out.push(profile);
    }
    Ok(out)
}

pub fn write_profiles(path: &Path, profiles: &[LearnerProfile]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for p in profiles {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_integer_and_iso() {
        assert_eq!(parse_timestamp("1700000000"), Some(1_700_000_000));
        assert_eq!(parse_timestamp("1970-01-01T00:00:01Z"), Some(1000));
        assert_eq!(parse_timestamp("1970-01-01 00:00:02.5"), Some(2500));
        assert_eq!(parse_timestamp("1970-01-02"), Some(86_400_000));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn booleans() {
        assert_eq!(parse_bool("1"), Some(true));
        assert_eq!(parse_bool("FALSE"), Some(false));
        assert_eq!(parse_bool("2"), None);
    }

    #[test]
    fn missing_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "user_id,exercise_id\nu,e\n").unwrap();
        let err = read_raw_records(&p).unwrap_err();
        assert!(err.to_string().contains("skill_id"));
    }
}
