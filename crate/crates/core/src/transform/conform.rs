use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::{
    CleanDiagnosis, CleanLab, CleanTreatment, PatientMasterRecord, RejectCode, RejectEntry, SourceRef,
};
use crate::schema::age_band_label;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CancerKey {
    pub site: String,
    pub cancer_type: String,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocationKey {
    pub governorate: String,
    pub city: String,
}

impl LocationKey {
    pub fn of(patient: &PatientMasterRecord) -> Self {
        LocationKey {
            governorate: patient.governorate.clone().unwrap_or_else(|| "Unknown".into()),
            city: patient.city.clone().unwrap_or_else(|| "Unknown".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TreatmentMember {
    pub drug_code: String,
    pub category: String,
    pub drug_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentEvent {
    pub source: SourceRef,
    pub national_id: String,
    pub event_date: NaiveDate,
    pub age_at_event_years: u32,
    pub age_band: String,
    pub cancer: CancerKey,
    pub treatment: TreatmentMember,
    pub location: LocationKey,
    pub cost_millis: i64,
    pub death_flag: u8,
    pub remission_flag: u8,
    /// Source timestamp compared against the load watermark.
    pub source_ts: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabEvent {
    pub source: SourceRef,
    pub national_id: String,
    pub event_date: NaiveDate,
    pub age_at_event_years: u32,
    pub age_band: String,
    pub test_type: String,
    pub location: LocationKey,
    pub value_micros: i64,
    pub abnormal_flag: u8,
    pub source_ts: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fact_kind", rename_all = "snake_case")]
pub enum ConformedRow {
    #[serde(rename = "treatment_event")]
    Treatment(TreatmentEvent),
    #[serde(rename = "lab_result")]
    Lab(LabEvent),
}

impl ConformedRow {
    pub fn source(&self) -> &SourceRef {
        match self {
            ConformedRow::Treatment(t) => &t.source,
            ConformedRow::Lab(l) => &l.source,
        }
    }
}

/// Dimension members discovered by conforming, keyed by natural key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionRegistry {
    pub patients: BTreeMap<String, PatientMasterRecord>,
    pub cancers: BTreeSet<CancerKey>,
    /// Keyed by drug code; attributes from the most recent row.
    pub treatments: BTreeMap<String, TreatmentMember>,
    pub locations: BTreeSet<LocationKey>,
    pub tests: BTreeSet<String>,
    pub age_bands: BTreeSet<String>,
    pub dates: BTreeSet<NaiveDate>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformOutput {
    pub rows: Vec<ConformedRow>,
    /// Event rejects (treatments and labs).
    pub rejects: Vec<RejectEntry>,
    /// Diagnoses that could not be attached to a patient.
    pub diagnosis_rejects: Vec<RejectEntry>,
    pub registry: DimensionRegistry,
}

/// Whole years elapsed from `birth` to `on`; a 29 February birthday falls on
/// 1 March in common years.
pub fn age_in_years(birth: NaiveDate, on: NaiveDate) -> u32 {
    let mut years = on.year() - birth.year();
    if (on.month(), on.day()) < (birth.month(), birth.day()) {
        years -= 1;
    }
    years.max(0) as u32
}

pub fn conform(
    diagnoses: &[CleanDiagnosis],
    treatments: &[CleanTreatment],
    labs: &[CleanLab],
    masters: &[PatientMasterRecord],
) -> ConformOutput {
    let mut out = ConformOutput::default();
    let patients: HashMap<&str, &PatientMasterRecord> =
        masters.iter().map(|m| (m.national_id.as_str(), m)).collect();
    for m in masters {
        out.registry.patients.insert(m.national_id.clone(), m.clone());
        out.registry.locations.insert(LocationKey::of(m));
    }

    let mut by_patient: HashMap<&str, Vec<&CleanDiagnosis>> = HashMap::new();
    for d in diagnoses {
        let Some(p) = patients.get(d.national_id.as_str()) else {
            out.diagnosis_rejects.push(RejectEntry::new(
                &d.source,
                RejectCode::OrphanRef,
                format!("unknown national_id {}", d.national_id),
            ));
            continue;
        };
        if d.diagnosis_date < p.date_of_birth {
            out.diagnosis_rejects.push(RejectEntry::new(
                &d.source,
                RejectCode::DobAfterEvent,
                format!("diagnosed {} before birth {}", d.diagnosis_date, p.date_of_birth),
            ));
            continue;
        }
        out.registry.cancers.insert(cancer_key(d));
        by_patient.entry(d.national_id.as_str()).or_default().push(d);
    }
    for list in by_patient.values_mut() {
        list.sort_by(|a, b| (a.diagnosis_date, &a.source).cmp(&(b.diagnosis_date, &b.source)));
    }

    let mut treatment_attrs: BTreeMap<String, (DateTime<Utc>, &SourceRef, TreatmentMember)> = BTreeMap::new();
    for t in treatments {
        let patient = match attach(&patients, &t.national_id, t.treatment_date, &t.source) {
            Ok(p) => p,
            Err(r) => {
                out.rejects.push(r);
                continue;
            }
        };
        let Some(diagnosis) = by_patient
            .get(t.national_id.as_str())
            .and_then(|list| diagnosis_for(list, t.treatment_date))
        else {
            out.rejects.push(RejectEntry::new(
                &t.source,
                RejectCode::OrphanRef,
                format!("no diagnosis on record for {}", t.national_id),
            ));
            continue;
        };
        let member = TreatmentMember {
            drug_code: t.drug_code.clone(),
            category: t.category.clone(),
            drug_name: t.drug_name.clone(),
        };
        let newer = treatment_attrs
            .get(&t.drug_code)
            .is_none_or(|(ts, src, _)| (t.updated_at, &t.source) > (*ts, *src));
        if newer {
            treatment_attrs.insert(t.drug_code.clone(), (t.updated_at, &t.source, member.clone()));
        }
        let age = age_in_years(patient.date_of_birth, t.treatment_date);
        let row = TreatmentEvent {
            source: t.source.clone(),
            national_id: t.national_id.clone(),
            event_date: t.treatment_date,
            age_at_event_years: age,
            age_band: age_band_label(age).to_string(),
            cancer: cancer_key(diagnosis),
            treatment: member,
            location: LocationKey::of(patient),
            cost_millis: t.cost_millis,
            death_flag: u8::from(t.outcome == "death"),
            remission_flag: u8::from(t.outcome == "remission"),
            source_ts: t.updated_at,
        };
        out.registry.dates.insert(row.event_date);
        out.registry.age_bands.insert(row.age_band.clone());
        out.rows.push(ConformedRow::Treatment(row));
    }
    out.registry.treatments = treatment_attrs
        .into_iter()
        .map(|(code, (_, _, member))| (code, member))
        .collect();

    for l in labs {
        let patient = match attach(&patients, &l.national_id, l.test_date, &l.source) {
            Ok(p) => p,
            Err(r) => {
                out.rejects.push(r);
                continue;
            }
        };
        let age = age_in_years(patient.date_of_birth, l.test_date);
        let row = LabEvent {
            source: l.source.clone(),
            national_id: l.national_id.clone(),
            event_date: l.test_date,
            age_at_event_years: age,
            age_band: age_band_label(age).to_string(),
            test_type: l.test_type.clone(),
            location: LocationKey::of(patient),
            value_micros: l.value_micros,
            abnormal_flag: u8::from(l.abnormal),
            source_ts: l.as_of,
        };
        out.registry.dates.insert(row.event_date);
        out.registry.age_bands.insert(row.age_band.clone());
        out.registry.tests.insert(row.test_type.clone());
        out.rows.push(ConformedRow::Lab(row));
    }
    out
}

fn attach<'a>(
    patients: &HashMap<&str, &'a PatientMasterRecord>,
    national_id: &str,
    event_date: NaiveDate,
    source: &SourceRef,
) -> Result<&'a PatientMasterRecord, RejectEntry> {
    let patient = patients.get(national_id).ok_or_else(|| {
        RejectEntry::new(source, RejectCode::OrphanRef, format!("unknown national_id {national_id}"))
    })?;
    if event_date < patient.date_of_birth {
        return Err(RejectEntry::new(
            source,
            RejectCode::DobAfterEvent,
            format!("event {event_date} precedes birth {}", patient.date_of_birth),
        ));
    }
    Ok(patient)
}

/// Latest diagnosis on or before the event, else the earliest on record.
fn diagnosis_for<'a>(sorted: &[&'a CleanDiagnosis], event_date: NaiveDate) -> Option<&'a CleanDiagnosis> {
    sorted
        .iter()
        .rev()
        .find(|d| d.diagnosis_date <= event_date)
        .or_else(|| sorted.first())
        .copied()
}

fn cancer_key(d: &CleanDiagnosis) -> CancerKey {
    CancerKey {
        site: d.cancer_site.clone(),
        cancer_type: d.cancer_type.clone(),
        stage: d.stage.clone(),
    }
}
