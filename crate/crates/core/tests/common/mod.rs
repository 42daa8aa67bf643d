#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use cdw_core::ingest::StagingArea;
use cdw_core::pipeline::{ingest_generated, run_etl, EtlReport};
use cdw_core::schema::SourceKind;
use cdw_core::synthgen::MEDICAL_FILES_DIR;
use cdw_core::transform::{TransformConfig, DEFAULT_NATIONAL_ID_PATTERN};
use cdw_core::warehouse::Snapshot;
use chrono::{DateTime, TimeZone, Utc};

pub fn as_of() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
}

/// Hand-written source files, run through the real ingest and ETL path.
#[derive(Default)]
pub struct Fixture {
    patients: Vec<Vec<String>>,
    diagnoses: Vec<Vec<String>>,
    treatments: Vec<Vec<String>>,
    labs: Vec<String>,
}

pub struct PatientSpec<'a> {
    pub gender: &'a str,
    pub dob: &'a str,
    pub governorate: &'a str,
    pub city: &'a str,
    pub blood_group: &'a str,
}

impl Default for PatientSpec<'_> {
    fn default() -> Self {
        PatientSpec {
            gender: "M",
            dob: "1960-05-01",
            governorate: "Cairo",
            city: "Maadi",
            blood_group: "A+",
        }
    }
}

pub fn nid(n: u32) -> String {
    format!("2600501{n:07}")
}

impl Fixture {
    pub fn patient(&mut self, n: u32, p: PatientSpec) -> String {
        let id = nid(n);
        self.patients.push(
            [
                id.as_str(),
                &format!("patient {n}"),
                p.gender,
                p.dob,
                "married",
                p.city,
                p.governorate,
                "teacher",
                p.blood_group,
                "arab",
                "2019-01-01T00:00:00Z",
            ]
            .map(String::from)
            .to_vec(),
        );
        id
    }

    pub fn diagnosis(&mut self, n: u32, date: &str, site: &str, cancer_type: &str, stage: &str) {
        self.diagnoses
            .push([nid(n).as_str(), date, site, cancer_type, stage, "D001"].map(String::from).to_vec());
    }

    pub fn treatment(&mut self, n: u32, date: &str, category: &str, drug: &str, cost: &str, outcome: &str) {
        self.treatments.push(
            [
                nid(n).as_str(),
                date,
                category,
                drug,
                drug,
                cost,
                outcome,
                "D001",
                &format!("{date}T12:00:00Z"),
            ]
            .map(String::from)
            .to_vec(),
        );
    }

    pub fn lab(&mut self, n: u32, test: &str, date: &str, value: &str, abnormal: bool) {
        self.labs.push(format!(
            "national_id: {}\ntest_type: {test}\ntest_date: {date}\nvalue: {value}\nunit: u\nabnormal: {abnormal}\n",
            nid(n)
        ));
    }

    pub fn write_sources(&self, dir: &Path) {
        fs::create_dir_all(dir.join(MEDICAL_FILES_DIR)).unwrap();
        for (kind, rows, file) in [
            (SourceKind::Patients, &self.patients, "patients.csv"),
            (SourceKind::Diagnoses, &self.diagnoses, "diagnoses.csv"),
            (SourceKind::Treatments, &self.treatments, "treatments.csv"),
        ] {
            let mut w = csv::Writer::from_path(dir.join(file)).unwrap();
            w.write_record(kind.columns()).unwrap();
            for r in rows {
                w.write_record(r).unwrap();
            }
            w.flush().unwrap();
        }
        for (i, body) in self.labs.iter().enumerate() {
            fs::write(dir.join(MEDICAL_FILES_DIR).join(format!("lab_{i:04}.txt")), body).unwrap();
        }
    }

    /// Ingests and loads into `<root>/wh`, returning the report and snapshot.
    pub fn build(&self, root: &Path) -> (EtlReport, Snapshot) {
        let src = root.join("src");
        self.write_sources(&src);
        let staging = StagingArea::open(root.join("staging")).unwrap();
        ingest_generated(&staging, &src, as_of()).unwrap();
        let config = TransformConfig::new(DEFAULT_NATIONAL_ID_PATTERN, as_of().date_naive()).unwrap();
        let report = run_etl(&staging, &warehouse(root), &config, as_of()).unwrap();
        (report, Snapshot::open(warehouse(root)).unwrap())
    }
}

pub fn warehouse(root: &Path) -> PathBuf {
    root.join("wh")
}

/// Five 2012 treatments of one lymphoid type. Patient 1 is the only woman
/// and dies; patient 2 reaches remission; patient 3 is ongoing.
pub fn small() -> Fixture {
    let mut f = Fixture::default();
    f.patient(1, PatientSpec { gender: "F", blood_group: "O+", ..Default::default() });
    f.patient(2, PatientSpec { gender: "M", dob: "1980-02-10", governorate: "Sharqia", city: "Zagazig", ..Default::default() });
    f.patient(3, PatientSpec::default());
    for n in 1..=3 {
        f.diagnosis(n, "2011-06-01", "lymphoid", "hodgkin", if n == 3 { "III" } else { "II" });
    }
    f.treatment(1, "2012-01-10", "chemotherapy", "C-CYC", "100.00", "ongoing");
    f.treatment(1, "2012-03-05", "chemotherapy", "C-CYC", "120.00", "death");
    f.treatment(2, "2012-02-14", "biological", "B-RTX", "250.50", "remission");
    f.treatment(3, "2012-07-01", "chemotherapy", "C-DOX", "49.50", "ongoing");
    f.treatment(3, "2012-11-20", "biological", "B-RTX", "300.00", "stable");
    f.lab(1, "blood", "2012-01-11", "10.5", true);
    f.lab(3, "X-Ray", "2012-07-02", "2", false);
    f
}
