//! Cleaning, patient deduplication and conforming of staged records.

mod clean;
mod conform;
mod dedup;

use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::SourceKind;

pub use clean::{parse_decimal_scaled, title_case, validate_and_clean, Cleaned};
pub use conform::{
    age_in_years, conform, CancerKey, ConformOutput, ConformedRow, DimensionRegistry, LabEvent,
    LocationKey, TreatmentEvent, TreatmentMember,
};
pub use dedup::{dedup_merge_patients, replay_merge, MergeLogEntry, MERGE_FIELDS};

pub const DEFAULT_NATIONAL_ID_PATTERN: &str = "^[0-9]{14}$";

#[derive(Debug, Clone)]
pub struct TransformConfig {
    pub national_id_pattern: Regex,
    /// Reference date for "date of birth not in the future".
    pub today: NaiveDate,
}

impl TransformConfig {
    pub fn new(pattern: &str, today: NaiveDate) -> Result<Self> {
        let national_id_pattern = Regex::new(pattern)
            .map_err(|e| Error::InvalidConfig(format!("national id pattern: {e}")))?;
        Ok(TransformConfig {
            national_id_pattern,
            today,
        })
    }
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig::new(DEFAULT_NATIONAL_ID_PATTERN, Utc::now().date_naive())
            .expect("default pattern compiles")
    }
}

/// Where a record came from: staging batch, source and line (or file index).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceRef {
    pub batch_id: u64,
    pub source_id: String,
    pub kind: SourceKind,
    pub line_no: u64,
}

impl fmt::Display for SourceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}:{}", self.source_id, self.batch_id, self.line_no)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectCode {
    BadId,
    BadDate,
    BadEnum,
    NegativeCost,
    OrphanRef,
    DobAfterEvent,
}

impl RejectCode {
    pub const ALL: [RejectCode; 6] = [
        RejectCode::BadId,
        RejectCode::BadDate,
        RejectCode::BadEnum,
        RejectCode::NegativeCost,
        RejectCode::OrphanRef,
        RejectCode::DobAfterEvent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectCode::BadId => "BAD_ID",
            RejectCode::BadDate => "BAD_DATE",
            RejectCode::BadEnum => "BAD_ENUM",
            RejectCode::NegativeCost => "NEGATIVE_COST",
            RejectCode::OrphanRef => "ORPHAN_REF",
            RejectCode::DobAfterEvent => "DOB_AFTER_EVENT",
        }
    }
}

impl fmt::Display for RejectCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectEntry {
    pub source: SourceRef,
    pub reason_code: RejectCode,
    pub detail: String,
}

impl RejectEntry {
    pub(crate) fn new(source: &SourceRef, reason_code: RejectCode, detail: impl Into<String>) -> Self {
        RejectEntry {
            source: source.clone(),
            reason_code,
            detail: detail.into(),
        }
    }
}

/// Writes reject entries as `source_id,line_no,reason_code,detail`.
pub fn write_rejects_csv<W: std::io::Write>(out: W, rejects: &[RejectEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source_id", "line_no", "reason_code", "detail"])?;
    for r in rejects {
        w.write_record([
            r.source.source_id.as_str(),
            &r.source.line_no.to_string(),
            r.reason_code.as_str(),
            r.detail.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("rejects.csv", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanPatient {
    pub source: SourceRef,
    pub national_id: String,
    pub full_name: Option<String>,
    pub gender: String,
    pub date_of_birth: NaiveDate,
    pub marital_status: Option<String>,
    pub city: Option<String>,
    pub governorate: Option<String>,
    pub occupation: Option<String>,
    pub blood_group: Option<String>,
    pub race: Option<String>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanDiagnosis {
    pub source: SourceRef,
    pub national_id: String,
    pub diagnosis_date: NaiveDate,
    pub cancer_site: String,
    pub cancer_type: String,
    pub stage: String,
    pub doctor_id: String,
    pub as_of: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanTreatment {
    pub source: SourceRef,
    pub national_id: String,
    pub treatment_date: NaiveDate,
    pub category: String,
    pub drug_code: String,
    pub drug_name: String,
    pub cost_millis: i64,
    pub outcome: String,
    pub doctor_id: String,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanLab {
    pub source: SourceRef,
    pub national_id: String,
    pub test_type: String,
    pub test_date: NaiveDate,
    pub value_micros: i64,
    pub unit: String,
    pub abnormal: bool,
    pub as_of: DateTime<Utc>,
}

/// Deduplicated demographic master record, one per national id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientMasterRecord {
    pub national_id: String,
    pub full_name: Option<String>,
    pub gender: String,
    pub date_of_birth: NaiveDate,
    pub marital_status: Option<String>,
    pub city: Option<String>,
    pub governorate: Option<String>,
    pub occupation: Option<String>,
    pub blood_group: Option<String>,
    pub race: Option<String>,
    pub updated_at: DateTime<Utc>,
}
