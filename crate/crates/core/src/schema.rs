//! Shared vocabulary of the warehouse: source kinds and their column lists,
//! closed categorical sets, cube hierarchies and member paths.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Patients,
    Diagnoses,
    Treatments,
    LabResults,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [
        SourceKind::Patients,
        SourceKind::Diagnoses,
        SourceKind::Treatments,
        SourceKind::LabResults,
    ];

    /// Exact, ordered column list of the source format.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            SourceKind::Patients => &[
                "national_id",
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
            ],
            SourceKind::Diagnoses => &[
                "national_id",
                "diagnosis_date",
                "cancer_site",
                "cancer_type",
                "stage",
                "doctor_id",
            ],
            SourceKind::Treatments => &[
                "national_id",
                "treatment_date",
                "treatment_category",
                "drug_code",
                "drug_name",
                "cost",
                "outcome",
                "doctor_id",
                "updated_at",
            ],
            SourceKind::LabResults => &[
                "national_id",
                "test_type",
                "test_date",
                "value",
                "unit",
                "abnormal",
            ],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Patients => "patients",
            SourceKind::Diagnoses => "diagnoses",
            SourceKind::Treatments => "treatments",
            SourceKind::LabResults => "lab_results",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown source kind '{s}'")))
    }
}

pub const TREATMENT_CATEGORIES: [&str; 3] = ["chemotherapy", "radiotherapy", "biological"];
pub const TEST_TYPES: [&str; 3] = ["blood", "urine", "xray"];
pub const STAGES: [&str; 4] = ["I", "II", "III", "IV"];
pub const OUTCOMES: [&str; 5] = ["ongoing", "stable", "progression", "remission", "death"];
pub const MARITAL_STATUSES: [&str; 5] = ["single", "married", "divorced", "widowed", "unknown"];
pub const BLOOD_GROUPS: [&str; 9] = ["A+", "A-", "B+", "B-", "AB+", "AB-", "O+", "O-", "unknown"];

/// Age bands in natural order. Labels sort lexicographically in the same order.
pub const AGE_BANDS: [(u32, Option<u32>, &str); 5] = [
    (0, Some(17), "0-17"),
    (18, Some(39), "18-39"),
    (40, Some(59), "40-59"),
    (60, Some(74), "60-74"),
    (75, None, "75+"),
];

pub fn age_band_label(age_years: u32) -> &'static str {
    AGE_BANDS
        .iter()
        .find(|(lo, hi, _)| age_years >= *lo && hi.is_none_or(|hi| age_years <= hi))
        .map(|(_, _, label)| *label)
        .expect("age bands cover every non-negative age")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubeId {
    Treatment,
    Lab,
}

impl CubeId {
    pub const ALL: [CubeId; 2] = [CubeId::Treatment, CubeId::Lab];

    pub fn as_str(self) -> &'static str {
        match self {
            CubeId::Treatment => "treatment",
            CubeId::Lab => "lab",
        }
    }

    pub fn fact_table(self) -> &'static str {
        match self {
            CubeId::Treatment => "fact_treatment_event",
            CubeId::Lab => "fact_lab_result",
        }
    }

    /// Hierarchies usable on axes, in catalog order.
    pub fn axis_hierarchies(self) -> &'static [Hierarchy] {
        match self {
            CubeId::Treatment => &[
                Hierarchy::Date,
                Hierarchy::Cancer,
                Hierarchy::Treatment,
                Hierarchy::Location,
                Hierarchy::AgeBand,
            ],
            CubeId::Lab => &[
                Hierarchy::Date,
                Hierarchy::Test,
                Hierarchy::Location,
                Hierarchy::AgeBand,
            ],
        }
    }

    pub fn has_hierarchy(self, h: Hierarchy) -> bool {
        h.is_patient_attribute() || self.axis_hierarchies().contains(&h)
    }
}

impl fmt::Display for CubeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CubeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CubeId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownCube(s.to_string()))
    }
}

/// A navigable attribute of a fact: either a cube hierarchy or one of the
/// slicer-only patient attributes (modelled as single-level hierarchies
/// under the `patient` dimension).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Hierarchy {
    Date,
    Cancer,
    Treatment,
    Location,
    AgeBand,
    Test,
    Gender,
    BloodGroup,
    Race,
    MaritalStatus,
}

impl Hierarchy {
    pub const ALL: [Hierarchy; 10] = [
        Hierarchy::Date,
        Hierarchy::Cancer,
        Hierarchy::Treatment,
        Hierarchy::Location,
        Hierarchy::AgeBand,
        Hierarchy::Test,
        Hierarchy::Gender,
        Hierarchy::BloodGroup,
        Hierarchy::Race,
        Hierarchy::MaritalStatus,
    ];

    pub fn dimension(self) -> &'static str {
        match self {
            Hierarchy::Date => "date",
            Hierarchy::Cancer => "cancer",
            Hierarchy::Treatment => "treatment",
            Hierarchy::Location => "location",
            Hierarchy::AgeBand => "age_band",
            Hierarchy::Test => "test",
            _ => "patient",
        }
    }

    /// Level names, coarse to fine.
    pub fn levels(self) -> &'static [&'static str] {
        match self {
            Hierarchy::Date => &["year", "quarter", "month", "day"],
            Hierarchy::Cancer => &["site", "type", "stage"],
            Hierarchy::Treatment => &["category", "drug"],
            Hierarchy::Location => &["governorate", "city"],
            Hierarchy::AgeBand => &["band"],
            Hierarchy::Test => &["test_type"],
            Hierarchy::Gender => &["gender"],
            Hierarchy::BloodGroup => &["blood_group"],
            Hierarchy::Race => &["race"],
            Hierarchy::MaritalStatus => &["marital_status"],
        }
    }

    pub fn finest_depth(self) -> usize {
        self.levels().len()
    }

    pub fn is_patient_attribute(self) -> bool {
        matches!(
            self,
            Hierarchy::Gender | Hierarchy::BloodGroup | Hierarchy::Race | Hierarchy::MaritalStatus
        )
    }

    pub fn level(self, depth: usize) -> Option<Level> {
        (1..=self.finest_depth())
            .contains(&depth)
            .then_some(Level {
                hierarchy: self,
                depth,
            })
    }

    pub fn level_named(self, name: &str) -> Option<Level> {
        self.levels()
            .iter()
            .position(|l| *l == name)
            .map(|i| Level {
                hierarchy: self,
                depth: i + 1,
            })
    }

    /// Resolves a `(dimension, level-or-attribute)` pair as written in
    /// query specs and grains.
    pub fn resolve(dimension: &str, level: &str) -> Option<Level> {
        Hierarchy::ALL
            .into_iter()
            .filter(|h| h.dimension() == dimension)
            .find_map(|h| h.level_named(level))
    }
}

/// One level of a hierarchy. `depth` is 1-based: a member at this level is
/// addressed by a path of exactly `depth` components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Level {
    pub hierarchy: Hierarchy,
    pub depth: usize,
}

impl Level {
    pub fn name(self) -> &'static str {
        self.hierarchy.levels()[self.depth - 1]
    }

    pub fn dimension(self) -> &'static str {
        self.hierarchy.dimension()
    }

    pub fn finer(self) -> Option<Level> {
        self.hierarchy.level(self.depth + 1)
    }

    pub fn coarser(self) -> Option<Level> {
        self.hierarchy.level(self.depth - 1)
    }

    pub fn parse(s: &str) -> Result<Level> {
        let (dim, level) = s
            .split_once('@')
            .ok_or_else(|| Error::UnknownLevel(s.to_string()))?;
        Hierarchy::resolve(dim.trim(), level.trim()).ok_or_else(|| Error::UnknownLevel(s.to_string()))
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.dimension(), self.name())
    }
}

/// Address of a member: its labels from the top level down, e.g.
/// `["2012", "Q1", "03"]` for March 2012. Deserializes from a bare string as
/// a one-component path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MemberPath(pub Vec<String>);

impl MemberPath {
    pub fn new<I, S>(parts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MemberPath(parts.into_iter().map(Into::into).collect())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn parts(&self) -> &[String] {
        &self.0
    }

    pub fn truncated(&self, depth: usize) -> MemberPath {
        MemberPath(self.0[..depth.min(self.0.len())].to_vec())
    }

    pub fn label(&self) -> String {
        self.0.join("/")
    }
}

impl fmt::Display for MemberPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for MemberPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MemberPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            One(String),
            Many(Vec<String>),
        }
        Ok(match Repr::deserialize(deserializer)? {
            Repr::One(s) => MemberPath(vec![s]),
            Repr::Many(v) => MemberPath(v),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn age_bands_boundaries() {
        assert_eq!(age_band_label(0), "0-17");
        assert_eq!(age_band_label(17), "0-17");
        assert_eq!(age_band_label(18), "18-39");
        assert_eq!(age_band_label(59), "40-59");
        assert_eq!(age_band_label(74), "60-74");
        assert_eq!(age_band_label(75), "75+");
        assert_eq!(age_band_label(120), "75+");
    }

    #[test]
    fn age_band_labels_sort_in_natural_order() {
        let labels: Vec<_> = AGE_BANDS.iter().map(|b| b.2).collect();
        let mut sorted = labels.clone();
        sorted.sort();
        assert_eq!(labels, sorted);
    }

    #[test]
    fn level_parse_and_navigation() {
        let l = Level::parse("date@quarter").unwrap();
        assert_eq!(l.depth, 2);
        assert_eq!(l.finer().unwrap().to_string(), "date@month");
        assert_eq!(l.coarser().unwrap().to_string(), "date@year");
        assert!(Level::parse("date@year").unwrap().coarser().is_none());
        assert!(Level::parse("date@day").unwrap().finer().is_none());
        assert_eq!(Level::parse("patient@gender").unwrap().hierarchy, Hierarchy::Gender);
        assert!(matches!(Level::parse("date@week"), Err(Error::UnknownLevel(_))));
        assert!(matches!(Level::parse("cancer@drug"), Err(Error::UnknownLevel(_))));
    }

    #[test]
    fn member_path_accepts_string_or_array() {
        let a: MemberPath = serde_json::from_str("\"2012\"").unwrap();
        let b: MemberPath = serde_json::from_str("[\"2012\"]").unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), "[\"2012\"]");
    }
}
