use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{CleanPatient, PatientMasterRecord, SourceRef};

/// Fields resolved by the per-field merge rule, in record order.
pub const MERGE_FIELDS: [&str; 10] = [
    "full_name",
    "gender",
    "date_of_birth",
    "marital_status",
    "city",
    "governorate",
    "occupation",
    "blood_group",
    "race",
    "updated_at",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeLogEntry {
    pub national_id: String,
    /// For each merged field, the record its value was taken from.
    pub surviving_fields_from: IndexMap<String, SourceRef>,
    /// All duplicate records, most recent first.
    pub merged_record_refs: Vec<SourceRef>,
    pub merged_at: DateTime<Utc>,
}

/// Collapses patient records to one master record per national id.
///
/// Records of one id are ordered most recent first (`updated_at`, then later
/// batch, then larger line number). Every field takes its value from the
/// first record in that order where it is non-empty.
pub fn dedup_merge_patients(
    records: &[CleanPatient],
    merged_at: DateTime<Utc>,
) -> (Vec<PatientMasterRecord>, Vec<MergeLogEntry>) {
    let mut groups: IndexMap<&str, Vec<&CleanPatient>> = IndexMap::new();
    for r in records {
        groups.entry(r.national_id.as_str()).or_default().push(r);
    }

    let mut masters = Vec::with_capacity(groups.len());
    let mut log = Vec::new();
    for (national_id, mut group) in groups {
        group.sort_by(|a, b| recency_key(b).cmp(&recency_key(a)));
        let newest = group[0];
        let mut master = to_master(newest);
        let mut provenance = IndexMap::new();
        for field in MERGE_FIELDS {
            let donor = group
                .iter()
                .copied()
                .find(|r| has_field(r, field))
                .unwrap_or(newest);
            copy_field(&mut master, donor, field);
            provenance.insert(field.to_string(), donor.source.clone());
        }
        if group.len() > 1 {
            log.push(MergeLogEntry {
                national_id: national_id.to_string(),
                surviving_fields_from: provenance,
                merged_record_refs: group.iter().map(|r| r.source.clone()).collect(),
                merged_at,
            });
        }
        masters.push(master);
    }
    (masters, log)
}

/// Rebuilds a merged record from the field provenance in its log entry.
/// Returns `None` if a referenced record is missing from `records`.
pub fn replay_merge(entry: &MergeLogEntry, records: &[CleanPatient]) -> Option<PatientMasterRecord> {
    let find = |r: &SourceRef| records.iter().find(|p| &p.source == r && p.national_id == entry.national_id);
    let first = find(entry.merged_record_refs.first()?)?;
    let mut master = to_master(first);
    for (field, source) in &entry.surviving_fields_from {
        copy_field(&mut master, find(source)?, field);
    }
    Some(master)
}

fn recency_key(r: &CleanPatient) -> (DateTime<Utc>, u64, u64) {
    (r.updated_at, r.source.batch_id, r.source.line_no)
}

fn to_master(r: &CleanPatient) -> PatientMasterRecord {
    PatientMasterRecord {
        national_id: r.national_id.clone(),
        full_name: r.full_name.clone(),
        gender: r.gender.clone(),
        date_of_birth: r.date_of_birth,
        marital_status: r.marital_status.clone(),
        city: r.city.clone(),
        governorate: r.governorate.clone(),
        occupation: r.occupation.clone(),
        blood_group: r.blood_group.clone(),
        race: r.race.clone(),
        updated_at: r.updated_at,
    }
}

fn has_field(r: &CleanPatient, field: &str) -> bool {
    match field {
        "full_name" => r.full_name.is_some(),
        "marital_status" => r.marital_status.is_some(),
        "city" => r.city.is_some(),
        "governorate" => r.governorate.is_some(),
        "occupation" => r.occupation.is_some(),
        "blood_group" => r.blood_group.is_some(),
        "race" => r.race.is_some(),
        _ => true,
    }
}

fn copy_field(m: &mut PatientMasterRecord, r: &CleanPatient, field: &str) {
    match field {
        "full_name" => m.full_name = r.full_name.clone(),
        "gender" => m.gender = r.gender.clone(),
        "date_of_birth" => m.date_of_birth = r.date_of_birth,
        "marital_status" => m.marital_status = r.marital_status.clone(),
        "city" => m.city = r.city.clone(),
        "governorate" => m.governorate = r.governorate.clone(),
        "occupation" => m.occupation = r.occupation.clone(),
        "blood_group" => m.blood_group = r.blood_group.clone(),
        "race" => m.race = r.race.clone(),
        "updated_at" => m.updated_at = r.updated_at,
        _ => unreachable!("unknown merge field {field}"),
    }
}

impl PatientMasterRecord {
    /// Re-expresses a master record as a clean input record, for feeding
    /// merge output back through the merge.
    pub fn as_clean(&self, source: SourceRef) -> CleanPatient {
        CleanPatient {
            source,
            national_id: self.national_id.clone(),
            full_name: self.full_name.clone(),
            gender: self.gender.clone(),
            date_of_birth: self.date_of_birth,
            marital_status: self.marital_status.clone(),
            city: self.city.clone(),
            governorate: self.governorate.clone(),
            occupation: self.occupation.clone(),
            blood_group: self.blood_group.clone(),
            race: self.race.clone(),
            updated_at: self.updated_at,
        }
    }
}
