//! Adapter from the ASSISTments 2017 longitudinal export to the canonical
//! interaction and profile files.
//!
//! The export is action-level with student-level columns repeated on every
//! row. Column names are configurable; defaults follow the public release.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::RawRecord;
use crate::model::LearnerProfile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssistmentsColumns {
    pub user_id: String,
    pub exercise_id: String,
    pub skill_id: String,
    pub timestamp: String,
    pub correct: String,
    pub mastery_before: String,
    pub mastery_after: String,
    pub academic_year: String,
    pub school: String,
    pub gender: String,
    /// Source columns of the ten continuous profile features, in canonical
    /// order.
    pub continuous: [String; 10],
}

impl Default for AssistmentsColumns {
    fn default() -> Self {
        let s = |x: &str| x.to_string();
        AssistmentsColumns {
            user_id: s("studentId"),
            exercise_id: s("problemId"),
            skill_id: s("skill"),
            timestamp: s("startTime"),
            correct: s("correct"),
            mastery_before: s("Ln-1"),
            mastery_after: s("Ln"),
            academic_year: s("SY ASSISTments Usage"),
            school: s("SchoolId"),
            gender: s("InferredGender"),
            continuous: [
                s("AveKnow"),
                s("AveCorrect"),
                s("MCAS"),
                s("AveResConf"),
                s("AveResFrust"),
                s("AveResBored"),
                s("AveResEngcon"),
                s("AveCarelessness"),
                s("AveResGaming"),
                s("AveResOfftask"),
            ],
        }
    }
}

pub const UNKNOWN_CATEGORY: &str = "unknown";

#[derive(Clone, Debug, Default)]
pub struct Converted {
    pub records: Vec<RawRecord>,
    /// One per learner, from their first row, ordered by id.
    pub profiles: Vec<LearnerProfile>,
}

fn parse_feature(text: &str) -> Option<f64> {
    let t = text.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads the export. Interaction fields are passed through as text so that
/// preprocessing reports malformed values; categorical columns that are
/// absent from the file become `unknown`. Negative placeholder values in
/// continuous columns are treated as missing.
pub fn convert(path: &Path, columns: &AssistmentsColumns) -> Result<Converted> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        find(name).ok_or_else(|| {
            Error::InvalidRecord(format!("{}: missing column `{name}`", path.display()))
        })
    };
    let idx = [
        required(&columns.user_id)?,
        required(&columns.exercise_id)?,
        required(&columns.skill_id)?,
        required(&columns.timestamp)?,
        required(&columns.correct)?,
        required(&columns.mastery_before)?,
        required(&columns.mastery_after)?,
    ];
    let categorical = [
        find(&columns.academic_year),
        find(&columns.school),
        find(&columns.gender),
    ];
    let continuous: Vec<Option<usize>> = columns.continuous.iter().map(|c| find(c)).collect();

    let mut out = Converted::default();
    let mut profiles: BTreeMap<String, LearnerProfile> = BTreeMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |k: Option<usize>| k.and_then(|k| record.get(k)).unwrap_or("").to_string();
        let raw = RawRecord {
            row: row as u64,
            user_id: field(Some(idx[0])),
            exercise_id: field(Some(idx[1])),
            skill_id: field(Some(idx[2])),
            timestamp: field(Some(idx[3])),
            correct: field(Some(idx[4])),
            mastery_before: field(Some(idx[5])),
            mastery_after: field(Some(idx[6])),
        };
        if !raw.user_id.is_empty() && !profiles.contains_key(&raw.user_id) {
            let cat = |k: usize| {
                let v = field(categorical[k]);
                if v.is_empty() {
                    UNKNOWN_CATEGORY.to_string()
                } else {
                    v
                }
            };
            let num = |k: usize| {
                continuous[k]
                    .and_then(|c| record.get(c))
                    .and_then(parse_feature)
                    .filter(|v| *v >= 0.0)
            };
            profiles.insert(
                raw.user_id.clone(),
                LearnerProfile {
                    user_id: raw.user_id.clone(),
                    academic_year: cat(0),
                    school: cat(1),
                    gender: cat(2),
                    avg_knowledge_mastery: num(0),
                    overall_correctness: num(1),
                    mcas_score: num(2),
                    confusion: num(3),
                    frustration: num(4),
                    boredom: num(5),
                    engaged_concentration: num(6),
                    carelessness: num(7),
                    gaming: num(8),
                    off_task: num(9),
                },
            );
        }
        out.records.push(raw);
    }
    out.profiles = profiles.into_values().collect();
    Ok(out)
}
