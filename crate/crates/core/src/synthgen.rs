//! Deterministic synthetic source data with planted dirt.
//!
//! Randomness comes from SplitMix64 (Steele, Lea and Flood): the state
//! advances by `0x9E3779B97F4A7C15` and each output is mixed with
//! `z = (z ^ z >> 30) * 0xBF58476D1CE4E5B9; z = (z ^ z >> 27) *
//! 0x94D049BB133111EB; z ^ z >> 31`. Bounded draws use the high half of a
//! 128-bit product, so output never depends on platform RNGs.
//!
//! Dirt is planted on top of the clean population, never in place of it:
//!
//! * duplicates: `floor(n_patients * duplicate_rate)` patients get one extra
//!   older row (every third of them two);
//! * malformed: `floor(clean_records * malformed_rate)` extra records, kinds
//!   taken in turn from [`MALFORMED_KINDS`];
//! * orphans: `floor(clean_events * orphan_rate)` extra events whose national
//!   ids belong to nobody, alternating treatments and lab files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Days, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::SourceKind;
use crate::transform::RejectCode;

#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn range(&mut self, lo: i64, hi_inclusive: i64) -> i64 {
        lo + self.below((hi_inclusive - lo + 1) as u64) as i64
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub duplicate_rate: f64,
    pub malformed_rate: f64,
    pub orphan_rate: f64,
    pub first_year: i32,
    pub last_year: i32,
    pub min_events: u32,
    pub max_events: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            n_patients: 500,
            duplicate_rate: 0.1,
            malformed_rate: 0.01,
            orphan_rate: 0.01,
            first_year: 2010,
            last_year: 2014,
            min_events: 6,
            max_events: 14,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("duplicate_rate", self.duplicate_rate),
            ("malformed_rate", self.malformed_rate),
            ("orphan_rate", self.orphan_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidConfig(format!("{name} {rate} is outside [0, 1]")));
            }
        }
        if self.first_year > self.last_year || self.first_year < 1900 || self.last_year > 2100 {
            return Err(Error::InvalidConfig(format!(
                "year range {}..{} is empty or out of bounds",
                self.first_year, self.last_year
            )));
        }
        if self.min_events > self.max_events {
            return Err(Error::InvalidConfig("events-per-patient range is empty".into()));
        }
        if self.n_patients >= ORPHAN_SERIAL_BASE as usize {
            return Err(Error::InvalidConfig(format!(
                "at most {} patients are supported",
                ORPHAN_SERIAL_BASE - 1
            )));
        }
        Ok(())
    }
}

pub const MALFORMED_KINDS: [&str; 7] = [
    "ragged",
    "bad_id",
    "bad_date",
    "negative_cost",
    "unknown_test_type",
    "missing_key",
    "dob_after_event",
];

pub const PATIENTS_FILE: &str = "patients.csv";
pub const DIAGNOSES_FILE: &str = "diagnoses.csv";
pub const TREATMENTS_FILE: &str = "treatments.csv";
pub const MEDICAL_FILES_DIR: &str = "medical_files";
pub const SUMMARY_FILE: &str = "summary.json";

const ORPHAN_SERIAL_BASE: u32 = 90_000;

/// Cancer taxonomy: site and its types. Stages I-IV apply to every type.
pub const CANCER_TAXONOMY: [(&str, &[&str]); 4] = [
    ("lymphoid", &["hodgkin", "non_hodgkin", "cll"]),
    ("breast", &["ductal", "lobular"]),
    ("liver", &["hepatocellular", "cholangiocarcinoma"]),
    ("lung", &["small_cell", "non_small_cell", "mesothelioma", "carcinoid"]),
];

/// (category, drug code, drug name, min cost, max cost) in whole currency units.
pub const DRUGS: [(&str, &str, &str, i64, i64); 9] = [
    ("chemotherapy", "C-CYC", "Cyclophosphamide", 500, 5_000),
    ("chemotherapy", "C-DOX", "Doxorubicin", 800, 6_000),
    ("chemotherapy", "C-CIS", "Cisplatin", 400, 4_000),
    ("chemotherapy", "C-5FU", "Fluorouracil", 300, 3_000),
    ("radiotherapy", "R-EBR", "External Beam Radiation", 1_000, 8_000),
    ("radiotherapy", "R-BRT", "Brachytherapy", 2_000, 9_000),
    ("biological", "B-RTX", "Rituximab", 3_000, 20_000),
    ("biological", "B-TRZ", "Trastuzumab", 4_000, 18_000),
    ("biological", "B-BEV", "Bevacizumab", 3_500, 16_000),
];

/// (governorate, governorate code, cities)
const LOCATIONS: [(&str, u32, &[&str]); 6] = [
    ("Cairo", 1, &["Nasr City", "Maadi", "Heliopolis"]),
    ("Alexandria", 2, &["Montaza", "Sidi Gaber"]),
    ("Giza", 21, &["Dokki", "Imbaba"]),
    ("Sharqia", 13, &["Zagazig", "Belbeis"]),
    ("Dakahlia", 12, &["Mansoura", "Talkha"]),
    ("Gharbia", 16, &["Tanta", "Mahalla"]),
];

const FIRST_NAMES_M: [&str; 10] = [
    "ahmed", "mohamed", "mahmoud", "omar", "youssef", "khaled", "tarek", "hassan", "mostafa", "karim",
];
const FIRST_NAMES_F: [&str; 10] = [
    "fatma", "amal", "mona", "sara", "nour", "heba", "mariam", "aya", "dina", "salma",
];
const LAST_NAMES: [&str; 10] = [
    "hassan", "ibrahim", "el-sayed", "abdel aziz", "farouk", "mansour", "saleh", "gamal", "nasser", "fawzy",
];
const OCCUPATIONS: [&str; 8] = [
    "Teacher", "farmer", "Engineer", "nurse", "Driver", "accountant", "Retired", "student",
];
const MARITAL: [&str; 4] = ["single", "Married", "divorced", "widowed"];
const BLOOD: [&str; 8] = ["A+", "a-", "B+", "b-", "AB+", "ab-", "O+", "o-"];
const RACES: [&str; 3] = ["arab", "Nubian", "Bedouin"];
const GENDER_SPELLINGS: [(&str, &[&str]); 2] = [("M", &["M", "m", "Male"]), ("F", &["F", "f", "Female"])];
const CATEGORY_SPELLINGS: [(&str, &[&str]); 3] = [
    ("chemotherapy", &["chemotherapy", "Chemotherapy", "CHEMO"]),
    ("radiotherapy", &["radiotherapy", "Radiotherapy", "radiation"]),
    ("biological", &["biological", "Biological", "biologic"]),
];
const STAGE_SPELLINGS: [(&str, &[&str]); 4] = [
    ("I", &["I", "stage 1", "1"]),
    ("II", &["II", "Stage 2", "2"]),
    ("III", &["III", "stage III", "3"]),
    ("IV", &["IV", "Stage IV", "4"]),
];
const TEST_SPELLINGS: [(&str, &[&str]); 3] = [
    ("blood", &["blood", "Blood", "BLOOD"]),
    ("urine", &["urine", "Urine"]),
    ("xray", &["xray", "X-Ray", "x_ray"]),
];

fn spelling<'a>(rng: &mut SplitMix64, table: &'a [(&str, &'a [&'a str])], canonical: &str) -> &'a str {
    let variants = table.iter().find(|(c, _)| *c == canonical).expect("vocabulary entry").1;
    rng.pick(variants)
}

/// Intended record counts, exact by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedEtl {
    pub staged: BTreeMap<SourceKind, u64>,
    pub parse_failures: u64,
    pub rejects: BTreeMap<RejectCode, u64>,
    pub merge_log_entries: u64,
    pub master_records: u64,
    pub treatment_facts: u64,
    pub lab_facts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub config: SynthConfig,
    pub files: Vec<String>,
    /// Suggested extraction timestamp for every source.
    pub as_of: DateTime<Utc>,
    pub patients: u64,
    pub diagnoses: u64,
    pub treatments: u64,
    pub labs: u64,
    /// Clean records across all sources, excluding duplicate rows.
    pub clean_records: u64,
    pub duplicated_patients: u64,
    pub duplicate_rows: u64,
    pub malformed: BTreeMap<String, u64>,
    pub orphans: BTreeMap<SourceKind, u64>,
    pub expected: ExpectedEtl,
}

struct Patient {
    national_id: String,
    dob: NaiveDate,
    diagnosis_date: NaiveDate,
}

struct LabFile {
    lines: Vec<(String, String)>,
}

fn national_id(serial: u32, dob: NaiveDate, governorate_code: u32) -> String {
    let century = if dob.year() >= 2000 { 3 } else { 2 };
    format!(
        "{century}{:02}{:02}{:02}{governorate_code:02}{serial:05}",
        dob.year() % 100,
        dob.month(),
        dob.day()
    )
}

fn random_date(rng: &mut SplitMix64, from: NaiveDate, to: NaiveDate) -> NaiveDate {
    let span = (to - from).num_days().max(0);
    from + Days::new(rng.range(0, span) as u64)
}

fn timestamp(rng: &mut SplitMix64, day: NaiveDate) -> String {
    let t = Utc
        .with_ymd_and_hms(day.year(), day.month(), day.day(), 0, 0, 0)
        .unwrap()
        + chrono::Duration::seconds(rng.range(0, 86_399));
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn money(rng: &mut SplitMix64, lo: i64, hi: i64) -> String {
    let cents = rng.range(lo * 100, hi * 100);
    format!("{}.{:02}", cents / 100, cents % 100)
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

/// Writes the four sources and `summary.json` into `out_dir`.
pub fn generate(config: &SynthConfig, out_dir: &Path) -> Result<SynthSummary> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let med_dir = out_dir.join(MEDICAL_FILES_DIR);
    if med_dir.exists() {
        fs::remove_dir_all(&med_dir).map_err(|e| Error::io(&med_dir, e))?;
    }
    fs::create_dir_all(&med_dir).map_err(|e| Error::io(&med_dir, e))?;

    let mut rng = SplitMix64::new(config.seed);
    let start = NaiveDate::from_ymd_opt(config.first_year, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(config.last_year, 12, 31).unwrap();
    let diagnosis_end = NaiveDate::from_ymd_opt(config.last_year, 6, 30).unwrap();
    let as_of = Utc.with_ymd_and_hms(config.last_year + 1, 1, 1, 0, 0, 0).unwrap();

    let mut patients_csv = csv_writer(&out_dir.join(PATIENTS_FILE), SourceKind::Patients.columns())?;
    let mut diagnoses_csv = csv_writer(&out_dir.join(DIAGNOSES_FILE), SourceKind::Diagnoses.columns())?;
    let mut treatments_csv = csv_writer(&out_dir.join(TREATMENTS_FILE), SourceKind::Treatments.columns())?;
    let mut lab_files: Vec<LabFile> = Vec::new();

    let mut patients = Vec::with_capacity(config.n_patients);
    let mut duplicate_rows: Vec<Vec<String>> = Vec::new();
    let n_duplicated = (config.n_patients as f64 * config.duplicate_rate).floor() as usize;
    let mut duplicated = 0u64;

    for i in 0..config.n_patients {
        let gender = if rng.chance(0.5) { "M" } else { "F" };
        let dob = random_date(
            &mut rng,
            NaiveDate::from_ymd_opt(1935, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(config.first_year - 5, 12, 31).unwrap(),
        );
        let (governorate, gov_code, cities) = *rng.pick(&LOCATIONS);
        let city = *rng.pick(cities);
        let nid = national_id(i as u32 + 1, dob, gov_code);
        let first = if gender == "M" { rng.pick(&FIRST_NAMES_M) } else { rng.pick(&FIRST_NAMES_F) };
        let name = format!("{first} {}", rng.pick(&LAST_NAMES));
        let occupation = if rng.chance(0.15) { "" } else { rng.pick(&OCCUPATIONS) };
        let marital = if rng.chance(0.05) { "" } else { rng.pick(&MARITAL) };
        let blood = if rng.chance(0.05) { "" } else { rng.pick(&BLOOD) };
        let race = *rng.pick(&RACES);
        let updated = NaiveDate::from_ymd_opt(config.last_year + 1, 1, 1).unwrap() + Days::new(rng.range(0, 300) as u64);
        let updated_at = timestamp(&mut rng, updated);
        let gender_text = spelling(&mut rng, &GENDER_SPELLINGS, gender);
        let row = vec![
            nid.clone(),
            name.clone(),
            gender_text.to_string(),
            dob.to_string(),
            marital.to_string(),
            city.to_string(),
            governorate.to_string(),
            occupation.to_string(),
            blood.to_string(),
            race.to_string(),
            updated_at,
        ];
        patients_csv.write_record(&row)?;

        if i < n_duplicated {
            duplicated += 1;
            let extra = if i % 3 == 2 { 2 } else { 1 };
            for k in 0..extra {
                let older = updated - Days::new(rng.range(30, 400) as u64 + 400 * k);
                let mut dup = row.clone();
                dup[1] = name.to_uppercase();
                dup[4] = rng.pick(&MARITAL).to_string();
                dup[7] = if rng.chance(0.5) { String::new() } else { rng.pick(&OCCUPATIONS).to_string() };
                dup[8] = if rng.chance(0.5) { String::new() } else { rng.pick(&BLOOD).to_string() };
                dup[10] = timestamp(&mut rng, older);
                duplicate_rows.push(dup);
            }
        }

        let diagnosis_date = random_date(&mut rng, start, diagnosis_end);
        let (site, types) = *rng.pick(&CANCER_TAXONOMY);
        let cancer_type = *rng.pick(types);
        let stage = *rng.pick(&["I", "II", "III", "IV"]);
        diagnoses_csv.write_record([
            nid.as_str(),
            &diagnosis_date.to_string(),
            site,
            cancer_type,
            spelling(&mut rng, &STAGE_SPELLINGS, stage),
            &format!("D{:03}", rng.range(1, 40)),
        ])?;
        patients.push(Patient {
            national_id: nid,
            dob,
            diagnosis_date,
        });
    }
    for row in &duplicate_rows {
        patients_csv.write_record(row)?;
    }

    // Clean events.
    let mut treatments = 0u64;
    let mut labs = 0u64;
    for p in &patients {
        let n_events = rng.range(config.min_events as i64, config.max_events as i64);
        let mut treatment_keys: BTreeSet<(NaiveDate, &str)> = BTreeSet::new();
        let mut lab_keys: BTreeSet<(NaiveDate, &str)> = BTreeSet::new();
        let mut events: Vec<(NaiveDate, usize)> = Vec::new();
        let patient_drugs: Vec<usize> = (0..3).map(|_| rng.below(DRUGS.len() as u64) as usize).collect();
        for _ in 0..n_events {
            if rng.chance(0.7) {
                for _attempt in 0..20 {
                    let date = random_date(&mut rng, p.diagnosis_date, end);
                    let drug = *rng.pick(&patient_drugs);
                    if treatment_keys.insert((date, DRUGS[drug].1)) {
                        events.push((date, drug));
                        break;
                    }
                }
            } else {
                for _attempt in 0..20 {
                    let date = random_date(&mut rng, p.diagnosis_date, end);
                    let test = *rng.pick(&["blood", "urine", "xray"]);
                    if lab_keys.insert((date, test)) {
                        lab_files.push(lab_file(&mut rng, &p.national_id, test, date));
                        labs += 1;
                        break;
                    }
                }
            }
        }
        events.sort();
        let fate = match rng.unit() {
            u if u < 0.15 => "death",
            u if u < 0.45 => "remission",
            _ => "",
        };
        let last = events.len().saturating_sub(1);
        for (k, (date, drug)) in events.iter().enumerate() {
            let outcome = if k == last && !fate.is_empty() {
                fate
            } else {
                *rng.pick(&["ongoing", "stable", "progression", "", "Stable"])
            };
            write_treatment(&mut rng, &mut treatments_csv, &p.national_id, *date, *drug, outcome, None)?;
            treatments += 1;
        }
    }

    let diagnoses = patients.len() as u64;
    let clean_records = patients.len() as u64 + diagnoses + treatments + labs;

    // Malformed extras.
    let n_malformed = (clean_records as f64 * config.malformed_rate).floor() as u64;
    let mut malformed: BTreeMap<String, u64> = MALFORMED_KINDS.iter().map(|k| (k.to_string(), 0)).collect();
    let mut expected = ExpectedEtl::default();
    for j in 0..n_malformed {
        let kind = MALFORMED_KINDS[(j % MALFORMED_KINDS.len() as u64) as usize];
        *malformed.get_mut(kind).unwrap() += 1;
        let p = &patients[rng.below(patients.len().max(1) as u64) as usize];
        let drug = rng.below(DRUGS.len() as u64) as usize;
        let date = random_date(&mut rng, p.diagnosis_date, end);
        match kind {
            "ragged" => {
                patients_csv.write_record([p.national_id.as_str(), "Ragged Row", "M", "1970-01-01"])?;
                expected.parse_failures += 1;
            }
            "bad_id" => {
                diagnoses_csv.write_record([
                    format!("12AB{j:04}").as_str(),
                    &date.to_string(),
                    "breast",
                    "ductal",
                    "II",
                    "D001",
                ])?;
                *expected.rejects.entry(RejectCode::BadId).or_default() += 1;
            }
            "bad_date" => {
                write_treatment(&mut rng, &mut treatments_csv, &p.national_id, date, drug, "ongoing", Some("bad_date"))?;
                *expected.rejects.entry(RejectCode::BadDate).or_default() += 1;
            }
            "negative_cost" => {
                write_treatment(
                    &mut rng,
                    &mut treatments_csv,
                    &p.national_id,
                    date,
                    drug,
                    "ongoing",
                    Some("negative_cost"),
                )?;
                *expected.rejects.entry(RejectCode::NegativeCost).or_default() += 1;
            }
            "unknown_test_type" => {
                let mut f = lab_file(&mut rng, &p.national_id, "blood", date);
                f.lines[1].1 = "tarot".into();
                lab_files.push(f);
                expected.parse_failures += 1;
            }
            "missing_key" => {
                let mut f = lab_file(&mut rng, &p.national_id, "urine", date);
                f.lines.retain(|(k, _)| k != "value");
                lab_files.push(f);
                expected.parse_failures += 1;
            }
            "dob_after_event" => {
                let before_birth = p.dob - Days::new(rng.range(1, 3_000) as u64);
                write_treatment(&mut rng, &mut treatments_csv, &p.national_id, before_birth, drug, "ongoing", None)?;
                *expected.rejects.entry(RejectCode::DobAfterEvent).or_default() += 1;
            }
            _ => unreachable!(),
        }
    }

    // Orphan events.
    let n_orphans = ((treatments + labs) as f64 * config.orphan_rate).floor() as u64;
    let mut orphans: BTreeMap<SourceKind, u64> = BTreeMap::new();
    for j in 0..n_orphans {
        let dob = random_date(
            &mut rng,
            NaiveDate::from_ymd_opt(1940, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(1990, 12, 31).unwrap(),
        );
        let nid = national_id(ORPHAN_SERIAL_BASE + j as u32, dob, 1);
        let date = random_date(&mut rng, start, end);
        if j % 2 == 0 {
            let drug = rng.below(DRUGS.len() as u64) as usize;
            write_treatment(&mut rng, &mut treatments_csv, &nid, date, drug, "ongoing", None)?;
            *orphans.entry(SourceKind::Treatments).or_default() += 1;
        } else {
            lab_files.push(lab_file(&mut rng, &nid, "blood", date));
            *orphans.entry(SourceKind::LabResults).or_default() += 1;
        }
    }
    *expected.rejects.entry(RejectCode::OrphanRef).or_default() += n_orphans;
    expected.rejects.retain(|_, v| *v > 0);

    patients_csv.flush().map_err(|e| Error::io(out_dir.join(PATIENTS_FILE), e))?;
    diagnoses_csv.flush().map_err(|e| Error::io(out_dir.join(DIAGNOSES_FILE), e))?;
    treatments_csv.flush().map_err(|e| Error::io(out_dir.join(TREATMENTS_FILE), e))?;

    let mut files = vec![
        PATIENTS_FILE.to_string(),
        DIAGNOSES_FILE.to_string(),
        TREATMENTS_FILE.to_string(),
    ];
    for (i, f) in lab_files.iter().enumerate() {
        let name = format!("lab_{:06}.txt", i + 1);
        let body: String = f.lines.iter().map(|(k, v)| format!("{k}: {v}\n")).collect();
        let path = med_dir.join(&name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        files.push(format!("{MEDICAL_FILES_DIR}/{name}"));
    }

    let malformed_in = |kinds: &[&str]| kinds.iter().map(|k| malformed[*k]).sum::<u64>();
    expected.staged = [
        (
            SourceKind::Patients,
            patients.len() as u64 + duplicate_rows.len() as u64,
        ),
        (SourceKind::Diagnoses, diagnoses + malformed_in(&["bad_id"])),
        (
            SourceKind::Treatments,
            treatments
                + malformed_in(&["bad_date", "negative_cost", "dob_after_event"])
                + orphans.get(&SourceKind::Treatments).copied().unwrap_or(0),
        ),
        (SourceKind::LabResults, labs + orphans.get(&SourceKind::LabResults).copied().unwrap_or(0)),
    ]
    .into_iter()
    .collect();
    expected.merge_log_entries = duplicated;
    expected.master_records = patients.len() as u64;
    expected.treatment_facts = treatments;
    expected.lab_facts = labs;

    let summary = SynthSummary {
        config: config.clone(),
        files,
        as_of,
        patients: patients.len() as u64,
        diagnoses,
        treatments,
        labs,
        clean_records,
        duplicated_patients: duplicated,
        duplicate_rows: duplicate_rows.len() as u64,
        malformed,
        orphans,
        expected,
    };
    let path = out_dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

fn write_treatment(
    rng: &mut SplitMix64,
    w: &mut csv::Writer<fs::File>,
    nid: &str,
    date: NaiveDate,
    drug: usize,
    outcome: &str,
    dirt: Option<&str>,
) -> Result<()> {
    let (category, code, name, lo, hi) = DRUGS[drug];
    let mut cost = money(rng, lo, hi);
    let mut date_text = date.to_string();
    match dirt {
        Some("bad_date") => date_text = format!("{}-02-30", date.year()),
        Some("negative_cost") => cost = format!("-{cost}"),
        _ => {}
    }
    let updated = date + Days::new(rng.range(0, 30) as u64);
    w.write_record([
        nid,
        &date_text,
        spelling(rng, &CATEGORY_SPELLINGS, category),
        code,
        name,
        &cost,
        outcome,
        &format!("D{:03}", rng.range(1, 40)),
        &timestamp(rng, updated),
    ])?;
    Ok(())
}

fn lab_file(rng: &mut SplitMix64, nid: &str, test: &str, date: NaiveDate) -> LabFile {
    let (value, unit, abnormal) = match test {
        "blood" => {
            let v = rng.range(80, 170);
            (format!("{}.{}", v / 10, v % 10), "g/dL", v < 110)
        }
        "urine" => {
            let v = rng.range(0, 300);
            (v.to_string(), "mg/dL", v > 150)
        }
        _ => {
            let v = rng.range(0, 50);
            (format!("{}.{}", v / 10, v % 10), "score", v >= 30)
        }
    };
    let abnormal_text = if abnormal { *rng.pick(&["true", "yes"]) } else { *rng.pick(&["false", "no"]) };
    LabFile {
        lines: vec![
            ("national_id".into(), nid.to_string()),
            ("test_type".into(), spelling(rng, &TEST_SPELLINGS, test).to_string()),
            ("test_date".into(), date.to_string()),
            ("value".into(), value),
            ("unit".into(), unit.to_string()),
            ("abnormal".into(), abnormal_text.to_string()),
        ],
    }
}

/// Paths of the generated sources inside `dir`.
pub fn source_paths(dir: &Path) -> [(SourceKind, PathBuf); 4] {
    [
        (SourceKind::Patients, dir.join(PATIENTS_FILE)),
        (SourceKind::Diagnoses, dir.join(DIAGNOSES_FILE)),
        (SourceKind::Treatments, dir.join(TREATMENTS_FILE)),
        (SourceKind::LabResults, dir.join(MEDICAL_FILES_DIR)),
    ]
}
