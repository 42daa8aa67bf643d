use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::{
    CleanDiagnosis, CleanLab, CleanPatient, CleanTreatment, RejectCode, RejectEntry, SourceRef,
    TransformConfig,
};
use crate::ingest::{normalize_test_type, RawRecord, StagingBatch};
use crate::schema::{SourceKind, BLOOD_GROUPS, MARITAL_STATUSES, OUTCOMES, STAGES, TEST_TYPES};

/// Clean records of one or more batches, partitioned by kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cleaned {
    pub patients: Vec<CleanPatient>,
    pub diagnoses: Vec<CleanDiagnosis>,
    pub treatments: Vec<CleanTreatment>,
    pub labs: Vec<CleanLab>,
    pub rejects: Vec<RejectEntry>,
}

impl Cleaned {
    pub fn clean_count(&self) -> usize {
        self.patients.len() + self.diagnoses.len() + self.treatments.len() + self.labs.len()
    }

    pub fn extend(&mut self, other: Cleaned) {
        self.patients.extend(other.patients);
        self.diagnoses.extend(other.diagnoses);
        self.treatments.extend(other.treatments);
        self.labs.extend(other.labs);
        self.rejects.extend(other.rejects);
    }
}

type Check<T> = Result<T, (RejectCode, String)>;

pub fn validate_and_clean(batch: &StagingBatch, config: &TransformConfig) -> Cleaned {
    let mut out = Cleaned::default();
    for raw in &batch.records {
        let source = SourceRef {
            batch_id: batch.batch_id,
            source_id: raw.source_id.clone(),
            kind: batch.source.kind,
            line_no: raw.line_no,
        };
        let outcome = match batch.source.kind {
            SourceKind::Patients => clean_patient(raw, &source, config).map(|p| out.patients.push(p)),
            SourceKind::Diagnoses => clean_diagnosis(raw, &source, config, batch.source.as_of)
                .map(|d| out.diagnoses.push(d)),
            SourceKind::Treatments => {
                clean_treatment(raw, &source, config).map(|t| out.treatments.push(t))
            }
            SourceKind::LabResults => {
                clean_lab(raw, &source, config, batch.source.as_of).map(|l| out.labs.push(l))
            }
        };
        if let Err((code, detail)) = outcome {
            out.rejects.push(RejectEntry::new(&source, code, detail));
        }
    }
    out
}

fn clean_patient(raw: &RawRecord, source: &SourceRef, config: &TransformConfig) -> Check<CleanPatient> {
    let national_id = national_id(raw, config)?;
    let date_of_birth = date(raw, "date_of_birth")?;
    if date_of_birth > config.today {
        return Err((
            RejectCode::BadDate,
            format!("date_of_birth {date_of_birth} is in the future"),
        ));
    }
    let gender = match raw.get("gender").trim().to_lowercase().as_str() {
        "m" | "male" => "M".to_string(),
        "f" | "female" => "F".to_string(),
        other => return Err((RejectCode::BadEnum, format!("gender '{other}'"))),
    };
    let marital_status = optional(raw, "marital_status")
        .map(|m| enum_member(&m.to_lowercase(), &MARITAL_STATUSES, "marital_status"))
        .transpose()?;
    let blood_group = optional(raw, "blood_group")
        .map(|b| {
            let b = b.replace(' ', "");
            let b = if b.eq_ignore_ascii_case("unknown") {
                "unknown".to_string()
            } else {
                b.to_uppercase()
            };
            enum_member(&b, &BLOOD_GROUPS, "blood_group")
        })
        .transpose()?;
    Ok(CleanPatient {
        source: source.clone(),
        national_id,
        full_name: optional(raw, "full_name").map(|n| title_case(&n)),
        gender,
        date_of_birth,
        marital_status,
        city: optional(raw, "city").map(|c| title_case(&c)),
        governorate: optional(raw, "governorate").map(|g| title_case(&g)),
        occupation: optional(raw, "occupation").map(|o| o.to_lowercase()),
        blood_group,
        race: optional(raw, "race").map(|r| r.to_lowercase()),
        updated_at: timestamp(raw, "updated_at")?,
    })
}

fn clean_diagnosis(
    raw: &RawRecord,
    source: &SourceRef,
    config: &TransformConfig,
    as_of: DateTime<Utc>,
) -> Check<CleanDiagnosis> {
    let national_id = national_id(raw, config)?;
    let diagnosis_date = date(raw, "diagnosis_date")?;
    let cancer_site = code(raw, "cancer_site")?;
    let cancer_type = code(raw, "cancer_type")?;
    let stage = normalize_stage(raw.get("stage"))
        .ok_or_else(|| (RejectCode::BadEnum, format!("stage '{}'", raw.get("stage"))))?;
    Ok(CleanDiagnosis {
        source: source.clone(),
        national_id,
        diagnosis_date,
        cancer_site,
        cancer_type,
        stage,
        doctor_id: raw.get("doctor_id").trim().to_string(),
        as_of,
    })
}

fn clean_treatment(raw: &RawRecord, source: &SourceRef, config: &TransformConfig) -> Check<CleanTreatment> {
    let national_id = national_id(raw, config)?;
    let treatment_date = date(raw, "treatment_date")?;
    let category = normalize_category(raw.get("treatment_category")).ok_or_else(|| {
        (
            RejectCode::BadEnum,
            format!("treatment_category '{}'", raw.get("treatment_category")),
        )
    })?;
    let drug_code = raw.get("drug_code").trim().to_uppercase();
    if drug_code.is_empty() {
        return Err((RejectCode::BadEnum, "empty drug_code".into()));
    }
    let cost_text = raw.get("cost").trim();
    let cost_millis = parse_decimal_scaled(cost_text, 3)
        .ok_or_else(|| (RejectCode::BadEnum, format!("cost '{cost_text}' is not a decimal amount")))?;
    if cost_millis < 0 {
        return Err((RejectCode::NegativeCost, format!("cost {cost_text}")));
    }
    let outcome = match raw.get("outcome").trim().to_lowercase() {
        o if o.is_empty() => "ongoing".to_string(),
        o => enum_member(&o, &OUTCOMES, "outcome")?,
    };
    Ok(CleanTreatment {
        source: source.clone(),
        national_id,
        treatment_date,
        category,
        drug_code,
        drug_name: raw.get("drug_name").trim().to_string(),
        cost_millis,
        outcome,
        doctor_id: raw.get("doctor_id").trim().to_string(),
        updated_at: timestamp(raw, "updated_at")?,
    })
}

fn clean_lab(
    raw: &RawRecord,
    source: &SourceRef,
    config: &TransformConfig,
    as_of: DateTime<Utc>,
) -> Check<CleanLab> {
    let national_id = national_id(raw, config)?;
    let test_type = normalize_test_type(raw.get("test_type"));
    if !TEST_TYPES.contains(&test_type.as_str()) {
        return Err((RejectCode::BadEnum, format!("test_type '{}'", raw.get("test_type"))));
    }
    let test_date = date(raw, "test_date")?;
    let value_text = raw.get("value").trim();
    let value_micros = parse_decimal_scaled(value_text, 6)
        .ok_or_else(|| (RejectCode::BadEnum, format!("value '{value_text}' is not a decimal")))?;
    let abnormal = match raw.get("abnormal").trim().to_lowercase().as_str() {
        "true" | "yes" | "1" | "y" => true,
        "false" | "no" | "0" | "n" => false,
        other => return Err((RejectCode::BadEnum, format!("abnormal '{other}'"))),
    };
    Ok(CleanLab {
        source: source.clone(),
        national_id,
        test_type,
        test_date,
        value_micros,
        unit: raw.get("unit").trim().to_string(),
        abnormal,
        as_of,
    })
}

fn national_id(raw: &RawRecord, config: &TransformConfig) -> Check<String> {
    let id = raw.get("national_id").trim();
    if config.national_id_pattern.is_match(id) {
        Ok(id.to_string())
    } else {
        Err((RejectCode::BadId, format!("national_id '{id}'")))
    }
}

fn date(raw: &RawRecord, field: &str) -> Check<NaiveDate> {
    let text = raw.get(field).trim();
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map_err(|_| (RejectCode::BadDate, format!("{field} '{text}'")))
}

fn timestamp(raw: &RawRecord, field: &str) -> Check<DateTime<Utc>> {
    let text = raw.get(field).trim();
    DateTime::parse_from_rfc3339(text)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| (RejectCode::BadDate, format!("{field} '{text}'")))
}

fn optional(raw: &RawRecord, field: &str) -> Option<String> {
    let v = collapse_whitespace(raw.get(field));
    (!v.is_empty()).then_some(v)
}

fn code(raw: &RawRecord, field: &str) -> Check<String> {
    let v = collapse_whitespace(raw.get(field)).to_lowercase().replace(' ', "_");
    if v.is_empty() || v.contains('/') {
        Err((RejectCode::BadEnum, format!("{field} '{}'", raw.get(field))))
    } else {
        Ok(v)
    }
}

fn enum_member(value: &str, allowed: &[&str], field: &str) -> Check<String> {
    if allowed.contains(&value) {
        Ok(value.to_string())
    } else {
        Err((RejectCode::BadEnum, format!("{field} '{value}'")))
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn normalize_stage(raw: &str) -> Option<String> {
    let s = raw.trim().to_uppercase();
    let s = s.strip_prefix("STAGE").map(str::trim).unwrap_or(&s);
    let roman = match s {
        "1" => "I",
        "2" => "II",
        "3" => "III",
        "4" => "IV",
        other => other,
    };
    STAGES.contains(&roman).then(|| roman.to_string())
}

fn normalize_category(raw: &str) -> Option<String> {
    let s = raw.trim().to_lowercase();
    let first = s.split_whitespace().next().unwrap_or("");
    let canonical = match first {
        "chemotherapy" | "chemo" => "chemotherapy",
        "radiotherapy" | "radiation" => "radiotherapy",
        "biological" | "biologic" | "antibiotic" => "biological",
        _ => return None,
    };
    Some(canonical.to_string())
}

/// Title-cases a name: first letter of each word (after space, hyphen or
/// apostrophe) upper, the rest lower. Whitespace is collapsed.
pub fn title_case(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut start = true;
    for c in collapse_whitespace(s).chars() {
        if start {
            out.extend(c.to_uppercase());
        } else {
            out.extend(c.to_lowercase());
        }
        start = matches!(c, ' ' | '-' | '\'');
    }
    out
}

/// Parses a plain decimal (`-12.5`, `400`, `0.125`) into an integer scaled by
/// `10^scale`, exactly. More fractional digits than `scale` is an error.
pub fn parse_decimal_scaled(s: &str, scale: u32) -> Option<i64> {
    let (negative, body) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
        || frac_part.len() > scale as usize
    {
        return None;
    }
    let int: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let mut frac: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().ok()? };
    frac = frac.checked_mul(10i64.pow(scale - frac_part.len() as u32))?;
    let magnitude = int.checked_mul(10i64.pow(scale))?.checked_add(frac)?;
    Some(if negative { -magnitude } else { magnitude })
}
