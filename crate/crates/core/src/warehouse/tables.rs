//! Star-schema tables held column-wise in memory.

use std::collections::HashMap;

use super::column::{ColumnData, ColumnValue};
use crate::error::{Error, Result};

macro_rules! columnar_table {
    ($(#[$meta:meta])* $name:ident = $table:literal { $($field:ident $(as $col:literal)? : $ty:ty),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, Eq)]
        pub struct $name {
            $(pub $field: Vec<$ty>,)+
        }

        impl $name {
            pub const NAME: &'static str = $table;

            pub const COLUMNS: &'static [&'static str] = &[$(columnar_table!(@col $field $($col)?)),+];

            pub fn len(&self) -> usize {
                [$(self.$field.len()),+][0]
            }

            pub fn is_empty(&self) -> bool {
                self.len() == 0
            }

            pub(crate) fn to_columns(&self) -> Vec<(&'static str, ColumnData)> {
                vec![$((columnar_table!(@col $field $($col)?), <$ty as ColumnValue>::to_column(&self.$field))),+]
            }

            pub(crate) fn from_columns(mut columns: HashMap<String, ColumnData>) -> Result<Self> {
                let table = $name {
                    $($field: {
                        let col = columnar_table!(@col $field $($col)?);
                        let data = columns.remove(col).ok_or_else(|| Error::CorruptTable {
                            table: $table.into(),
                            detail: format!("missing column {col}"),
                        })?;
                        <$ty as ColumnValue>::from_column(data).ok_or_else(|| Error::CorruptTable {
                            table: $table.into(),
                            detail: format!("column {col} has the wrong type"),
                        })?
                    },)+
                };
                let n = table.len();
                if [$(table.$field.len()),+].iter().any(|l| *l != n) {
                    return Err(Error::CorruptTable {
                        table: $table.into(),
                        detail: "columns differ in length".into(),
                    });
                }
                Ok(table)
            }
        }
    };
    (@col $field:ident $col:literal) => { $col };
    (@col $field:ident) => { stringify!($field) };
}

columnar_table! {
    DimPatient = "dim_patient" {
        sk: i64,
        national_id: String,
        full_name: String,
        gender: String,
        marital_status: String,
        blood_group: String,
        race: String,
        occupation: String,
    }
}

columnar_table! {
    /// One row per distinct event date; every column is derivable from `date_key`.
    DimDate = "dim_date" {
        date_key: i64,
        day: i64,
        month: i64,
        quarter: i64,
        year: i64,
    }
}

columnar_table! {
    DimCancer = "dim_cancer" {
        sk: i64,
        site: String,
        cancer_type as "type": String,
        stage: String,
    }
}

columnar_table! {
    DimTreatment = "dim_treatment" {
        sk: i64,
        category: String,
        drug_code: String,
        drug_name: String,
    }
}

columnar_table! {
    DimLocation = "dim_location" {
        sk: i64,
        governorate: String,
        city: String,
    }
}

columnar_table! {
    DimAgeBand = "dim_age_band" {
        sk: i64,
        band_label: String,
    }
}

columnar_table! {
    DimTest = "dim_test" {
        sk: i64,
        test_type: String,
    }
}

columnar_table! {
    FactTreatment = "fact_treatment_event" {
        patient_sk: i64,
        date_key: i64,
        cancer_sk: i64,
        treatment_sk: i64,
        location_sk: i64,
        age_band_sk: i64,
        cost_millis: i64,
        event_count: i64,
        death_flag: i64,
        remission_flag: i64,
    }
}

columnar_table! {
    /// `value` is the lab reading scaled by 10^6.
    FactLab = "fact_lab_result" {
        patient_sk: i64,
        date_key: i64,
        test_sk: i64,
        location_sk: i64,
        age_band_sk: i64,
        value: i64,
        abnormal_flag: i64,
        event_count: i64,
    }
}

/// All tables of the star schema.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StarSchema {
    pub dim_patient: DimPatient,
    pub dim_date: DimDate,
    pub dim_cancer: DimCancer,
    pub dim_treatment: DimTreatment,
    pub dim_location: DimLocation,
    pub dim_age_band: DimAgeBand,
    pub dim_test: DimTest,
    pub fact_treatment_event: FactTreatment,
    pub fact_lab_result: FactLab,
}

pub const TABLE_NAMES: [&str; 9] = [
    DimPatient::NAME,
    DimDate::NAME,
    DimCancer::NAME,
    DimTreatment::NAME,
    DimLocation::NAME,
    DimAgeBand::NAME,
    DimTest::NAME,
    FactTreatment::NAME,
    FactLab::NAME,
];

impl StarSchema {
    pub(crate) fn to_tables(&self) -> Vec<(&'static str, usize, Vec<(&'static str, ColumnData)>)> {
        vec![
            (DimPatient::NAME, self.dim_patient.len(), self.dim_patient.to_columns()),
            (DimDate::NAME, self.dim_date.len(), self.dim_date.to_columns()),
            (DimCancer::NAME, self.dim_cancer.len(), self.dim_cancer.to_columns()),
            (DimTreatment::NAME, self.dim_treatment.len(), self.dim_treatment.to_columns()),
            (DimLocation::NAME, self.dim_location.len(), self.dim_location.to_columns()),
            (DimAgeBand::NAME, self.dim_age_band.len(), self.dim_age_band.to_columns()),
            (DimTest::NAME, self.dim_test.len(), self.dim_test.to_columns()),
            (
                FactTreatment::NAME,
                self.fact_treatment_event.len(),
                self.fact_treatment_event.to_columns(),
            ),
            (FactLab::NAME, self.fact_lab_result.len(), self.fact_lab_result.to_columns()),
        ]
    }

    pub(crate) fn from_tables(mut tables: HashMap<String, HashMap<String, ColumnData>>) -> Result<Self> {
        let mut take = |name: &str| {
            tables.remove(name).ok_or_else(|| Error::CorruptTable {
                table: name.into(),
                detail: "table missing from manifest".into(),
            })
        };
        Ok(StarSchema {
            dim_patient: DimPatient::from_columns(take(DimPatient::NAME)?)?,
            dim_date: DimDate::from_columns(take(DimDate::NAME)?)?,
            dim_cancer: DimCancer::from_columns(take(DimCancer::NAME)?)?,
            dim_treatment: DimTreatment::from_columns(take(DimTreatment::NAME)?)?,
            dim_location: DimLocation::from_columns(take(DimLocation::NAME)?)?,
            dim_age_band: DimAgeBand::from_columns(take(DimAgeBand::NAME)?)?,
            dim_test: DimTest::from_columns(take(DimTest::NAME)?)?,
            fact_treatment_event: FactTreatment::from_columns(take(FactTreatment::NAME)?)?,
            fact_lab_result: FactLab::from_columns(take(FactLab::NAME)?)?,
        })
    }

    pub fn row_count(&self, table: &str) -> usize {
        self.to_tables()
            .into_iter()
            .find(|(name, _, _)| *name == table)
            .map(|(_, n, _)| n)
            .unwrap_or(0)
    }
}

/// `YYYYMMDD` integer key of a date.
pub fn date_key(date: chrono::NaiveDate) -> i64 {
    use chrono::Datelike;
    date.year() as i64 * 10_000 + date.month() as i64 * 100 + date.day() as i64
}

pub fn date_from_key(key: i64) -> Option<chrono::NaiveDate> {
    chrono::NaiveDate::from_ymd_opt((key / 10_000) as i32, ((key / 100) % 100) as u32, (key % 100) as u32)
}
