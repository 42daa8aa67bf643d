//! Applying conformed rows to the star schema: surrogate-key assignment,
//! Type-1 dimension overwrite and watermark-gated fact upsert.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Datelike, NaiveDate, Utc};

use super::manifest::TableCounts;
use super::tables::{
    date_key, DimAgeBand, DimCancer, DimDate, DimLocation, DimPatient, DimTest, DimTreatment, FactLab,
    FactTreatment, StarSchema,
};
use crate::schema::{SourceKind, AGE_BANDS};
use crate::transform::{CancerKey, ConformedRow, DimensionRegistry, LocationKey, PatientMasterRecord};

/// Placeholder stored for absent optional dimension attributes.
pub const UNKNOWN: &str = "unknown";

/// Provenance recorded in the load manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadContext {
    pub batch_ids: Vec<u64>,
}

#[derive(Debug, Default)]
pub(crate) struct LoadOutcome {
    pub tables: BTreeMap<String, TableCounts>,
    pub watermarks: BTreeMap<SourceKind, DateTime<Utc>>,
}

fn next_sk(sks: &[i64]) -> i64 {
    sks.iter().copied().max().unwrap_or(0) + 1
}

fn or_unknown(v: &Option<String>) -> String {
    v.clone().unwrap_or_else(|| UNKNOWN.to_string())
}

fn index_of<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>) -> HashMap<K, usize> {
    keys.enumerate().map(|(i, k)| (k, i)).collect()
}

pub(crate) fn seed_age_bands(bands: &mut DimAgeBand) {
    for (_, _, label) in AGE_BANDS {
        if !bands.band_label.iter().any(|l| l == label) {
            let sk = next_sk(&bands.sk);
            bands.sk.push(sk);
            bands.band_label.push(label.to_string());
        }
    }
}

fn patient_attrs(m: &PatientMasterRecord) -> [String; 6] {
    [
        or_unknown(&m.full_name),
        m.gender.clone(),
        or_unknown(&m.marital_status),
        or_unknown(&m.blood_group),
        or_unknown(&m.race),
        or_unknown(&m.occupation),
    ]
}

fn load_patients(p: &mut DimPatient, registry: &DimensionRegistry, c: &mut TableCounts) -> HashMap<String, i64> {
    let idx = index_of(p.national_id.iter().cloned());
    for m in registry.patients.values() {
        let [full_name, gender, marital, blood, race, occupation] = patient_attrs(m);
        match idx.get(&m.national_id) {
            Some(&i) => {
                let stored = [
                    &p.full_name[i],
                    &p.gender[i],
                    &p.marital_status[i],
                    &p.blood_group[i],
                    &p.race[i],
                    &p.occupation[i],
                ];
                if stored == [&full_name, &gender, &marital, &blood, &race, &occupation] {
                    c.skipped += 1;
                    continue;
                }
                p.full_name[i] = full_name;
                p.gender[i] = gender;
                p.marital_status[i] = marital;
                p.blood_group[i] = blood;
                p.race[i] = race;
                p.occupation[i] = occupation;
                c.updated += 1;
            }
            None => {
                p.sk.push(next_sk(&p.sk));
                p.national_id.push(m.national_id.clone());
                p.full_name.push(full_name);
                p.gender.push(gender);
                p.marital_status.push(marital);
                p.blood_group.push(blood);
                p.race.push(race);
                p.occupation.push(occupation);
                c.inserted += 1;
            }
        }
    }
    p.national_id.iter().cloned().zip(p.sk.iter().copied()).collect()
}

fn load_cancers(d: &mut DimCancer, registry: &DimensionRegistry, c: &mut TableCounts) -> HashMap<CancerKey, i64> {
    let key = |d: &DimCancer, i: usize| CancerKey {
        site: d.site[i].clone(),
        cancer_type: d.cancer_type[i].clone(),
        stage: d.stage[i].clone(),
    };
    let mut idx: HashMap<CancerKey, i64> = (0..d.len()).map(|i| (key(d, i), d.sk[i])).collect();
    for k in &registry.cancers {
        if idx.contains_key(k) {
            c.skipped += 1;
            continue;
        }
        let sk = next_sk(&d.sk);
        d.sk.push(sk);
        d.site.push(k.site.clone());
        d.cancer_type.push(k.cancer_type.clone());
        d.stage.push(k.stage.clone());
        idx.insert(k.clone(), sk);
        c.inserted += 1;
    }
    idx
}

fn load_treatments(d: &mut DimTreatment, registry: &DimensionRegistry, c: &mut TableCounts) -> HashMap<String, i64> {
    let idx = index_of(d.drug_code.iter().cloned());
    for (code, m) in &registry.treatments {
        match idx.get(code) {
            Some(&i) if d.category[i] == m.category && d.drug_name[i] == m.drug_name => c.skipped += 1,
            Some(&i) => {
                d.category[i] = m.category.clone();
                d.drug_name[i] = m.drug_name.clone();
                c.updated += 1;
            }
            None => {
                d.sk.push(next_sk(&d.sk));
                d.category.push(m.category.clone());
                d.drug_code.push(code.clone());
                d.drug_name.push(m.drug_name.clone());
                c.inserted += 1;
            }
        }
    }
    d.drug_code.iter().cloned().zip(d.sk.iter().copied()).collect()
}

fn load_locations(d: &mut DimLocation, registry: &DimensionRegistry, c: &mut TableCounts) -> HashMap<LocationKey, i64> {
    let mut idx: HashMap<LocationKey, i64> = (0..d.len())
        .map(|i| {
            let k = LocationKey {
                governorate: d.governorate[i].clone(),
                city: d.city[i].clone(),
            };
            (k, d.sk[i])
        })
        .collect();
    for k in &registry.locations {
        if idx.contains_key(k) {
            c.skipped += 1;
            continue;
        }
        let sk = next_sk(&d.sk);
        d.sk.push(sk);
        d.governorate.push(k.governorate.clone());
        d.city.push(k.city.clone());
        idx.insert(k.clone(), sk);
        c.inserted += 1;
    }
    idx
}

fn load_tests(d: &mut DimTest, registry: &DimensionRegistry, c: &mut TableCounts) -> HashMap<String, i64> {
    for t in &registry.tests {
        if d.test_type.contains(t) {
            c.skipped += 1;
        } else {
            d.sk.push(next_sk(&d.sk));
            d.test_type.push(t.clone());
            c.inserted += 1;
        }
    }
    d.test_type.iter().cloned().zip(d.sk.iter().copied()).collect()
}

fn load_dates(d: &mut DimDate, registry: &DimensionRegistry, c: &mut TableCounts) {
    let existing: std::collections::HashSet<i64> = d.date_key.iter().copied().collect();
    for date in &registry.dates {
        let key = date_key(*date);
        if existing.contains(&key) {
            c.skipped += 1;
            continue;
        }
        push_date(d, *date);
        c.inserted += 1;
    }
}

fn push_date(d: &mut DimDate, date: NaiveDate) {
    d.date_key.push(date_key(date));
    d.day.push(date.day() as i64);
    d.month.push(date.month() as i64);
    d.quarter.push((date.month() as i64 - 1) / 3 + 1);
    d.year.push(date.year() as i64);
}

/// Applies one batch of conformed rows in place. Fact rows are admitted only
/// when their source timestamp is strictly newer than the stored watermark of
/// their source kind; admitted rows are upserted by natural event key, the
/// later (timestamp, source position) winning.
pub(crate) fn apply(
    schema: &mut StarSchema,
    watermarks: &BTreeMap<SourceKind, DateTime<Utc>>,
    rows: &[ConformedRow],
    registry: &DimensionRegistry,
) -> LoadOutcome {
    let mut counts: BTreeMap<&'static str, TableCounts> = BTreeMap::new();
    seed_age_bands(&mut schema.dim_age_band);

    let patients = load_patients(
        &mut schema.dim_patient,
        registry,
        counts.entry(DimPatient::NAME).or_default(),
    );
    let cancers = load_cancers(&mut schema.dim_cancer, registry, counts.entry(DimCancer::NAME).or_default());
    let treatments = load_treatments(
        &mut schema.dim_treatment,
        registry,
        counts.entry(DimTreatment::NAME).or_default(),
    );
    let locations = load_locations(
        &mut schema.dim_location,
        registry,
        counts.entry(DimLocation::NAME).or_default(),
    );
    let tests = load_tests(&mut schema.dim_test, registry, counts.entry(DimTest::NAME).or_default());
    load_dates(&mut schema.dim_date, registry, counts.entry(DimDate::NAME).or_default());
    let bands = &schema.dim_age_band;
    let age_bands: HashMap<String, i64> = bands.band_label.iter().cloned().zip(bands.sk.iter().copied()).collect();
    let c = counts.entry(DimAgeBand::NAME).or_default();
    c.skipped += registry.age_bands.len() as u64;

    let mut new_marks: BTreeMap<SourceKind, DateTime<Utc>> = BTreeMap::new();
    if let Some(ts) = registry.patients.values().map(|m| m.updated_at).max() {
        new_marks.insert(SourceKind::Patients, ts);
    }

    let mut ordered: Vec<&ConformedRow> = rows.iter().collect();
    ordered.sort_by(|a, b| (source_ts(a), a.source()).cmp(&(source_ts(b), b.source())));

    let ft = &mut schema.fact_treatment_event;
    let mut ft_idx = index_of((0..ft.len()).map(|i| (ft.patient_sk[i], ft.date_key[i], ft.treatment_sk[i])));
    let fl = &mut schema.fact_lab_result;
    let mut fl_idx = index_of((0..fl.len()).map(|i| (fl.patient_sk[i], fl.date_key[i], fl.test_sk[i])));

    for row in ordered {
        let kind = row.source().kind;
        let ts = source_ts(row);
        let mark = new_marks.entry(kind).or_insert(ts);
        *mark = (*mark).max(ts);
        let admitted = watermarks.get(&kind).is_none_or(|w| ts > *w);
        match row {
            ConformedRow::Treatment(t) => {
                let c = counts.entry(FactTreatment::NAME).or_default();
                if !admitted {
                    c.skipped += 1;
                    continue;
                }
                let values = [
                    patients[&t.national_id],
                    date_key(t.event_date),
                    cancers[&t.cancer],
                    treatments[&t.treatment.drug_code],
                    locations[&t.location],
                    age_bands[&t.age_band],
                    t.cost_millis,
                    1,
                    t.death_flag as i64,
                    t.remission_flag as i64,
                ];
                let key = (values[0], values[1], values[3]);
                let ft = &mut schema.fact_treatment_event;
                let cols = [
                    &mut ft.patient_sk,
                    &mut ft.date_key,
                    &mut ft.cancer_sk,
                    &mut ft.treatment_sk,
                    &mut ft.location_sk,
                    &mut ft.age_band_sk,
                    &mut ft.cost_millis,
                    &mut ft.event_count,
                    &mut ft.death_flag,
                    &mut ft.remission_flag,
                ];
                upsert_fact(cols, &mut ft_idx, key, values, c);
            }
            ConformedRow::Lab(l) => {
                let c = counts.entry(FactLab::NAME).or_default();
                if !admitted {
                    c.skipped += 1;
                    continue;
                }
                let values = [
                    patients[&l.national_id],
                    date_key(l.event_date),
                    tests[&l.test_type],
                    locations[&l.location],
                    age_bands[&l.age_band],
                    l.value_micros,
                    l.abnormal_flag as i64,
                    1,
                ];
                let key = (values[0], values[1], values[2]);
                let fl = &mut schema.fact_lab_result;
                let cols = [
                    &mut fl.patient_sk,
                    &mut fl.date_key,
                    &mut fl.test_sk,
                    &mut fl.location_sk,
                    &mut fl.age_band_sk,
                    &mut fl.value,
                    &mut fl.abnormal_flag,
                    &mut fl.event_count,
                ];
                upsert_fact(cols, &mut fl_idx, key, values, c);
            }
        }
    }

    let mut watermarks_out = watermarks.clone();
    for (kind, ts) in new_marks {
        let w = watermarks_out.entry(kind).or_insert(ts);
        *w = (*w).max(ts);
    }
    LoadOutcome {
        tables: counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        watermarks: watermarks_out,
    }
}

fn source_ts(row: &ConformedRow) -> DateTime<Utc> {
    match row {
        ConformedRow::Treatment(t) => t.source_ts,
        ConformedRow::Lab(l) => l.source_ts,
    }
}

fn upsert_fact<const N: usize>(
    mut cols: [&mut Vec<i64>; N],
    index: &mut HashMap<(i64, i64, i64), usize>,
    key: (i64, i64, i64),
    values: [i64; N],
    counts: &mut TableCounts,
) {
    match index.get(&key) {
        Some(&i) => {
            if cols.iter().zip(values).all(|(col, v)| col[i] == v) {
                counts.skipped += 1;
            } else {
                for (col, v) in cols.iter_mut().zip(values) {
                    col[i] = v;
                }
                counts.updated += 1;
            }
        }
        None => {
            index.insert(key, cols[0].len());
            for (col, v) in cols.iter_mut().zip(values) {
                col.push(v);
            }
            counts.inserted += 1;
        }
    }
}
