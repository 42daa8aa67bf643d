#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use tempfile::TempDir;

use cdw_core::ingest::StagingArea;
use cdw_core::olap::{AxisLevel, Filter, OrderBy, QuerySpec};
use cdw_core::pipeline::{current_batches, ingest_generated, run_etl, transform, EtlReport, Transformed};
use cdw_core::schema::{CubeId, Hierarchy, Level, MemberPath};
use cdw_core::synthgen::{self, SynthConfig, SynthSummary};
use cdw_core::transform::{TransformConfig, DEFAULT_NATIONAL_ID_PATTERN};
use cdw_core::warehouse::{FilterOp, Snapshot};

use oracle::Oracle;

/// A generated source set pushed through ingest and ETL into a warehouse
/// under a temporary directory.
pub struct Seeded {
    pub dir: TempDir,
    pub summary: SynthSummary,
    pub report: EtlReport,
    pub transformed: Transformed,
    pub config: TransformConfig,
}

impl Seeded {
    pub fn new(config: &SynthConfig) -> Seeded {
        let dir = tempfile::tempdir().unwrap();
        let summary = synthgen::generate(config, &dir.path().join("gen")).unwrap();
        let staging = StagingArea::open(dir.path().join("staging")).unwrap();
        ingest_generated(&staging, &dir.path().join("gen"), summary.as_of).unwrap();
        let tconfig = TransformConfig::new(DEFAULT_NATIONAL_ID_PATTERN, summary.as_of.date_naive()).unwrap();
        let report = run_etl(&staging, &dir.path().join("warehouse"), &tconfig, summary.as_of).unwrap();
        let batches: Vec<_> = current_batches(&staging)
            .unwrap()
            .into_iter()
            .map(|id| staging.load_batch(id).unwrap())
            .collect();
        let transformed = transform(&batches, &tconfig, summary.as_of);
        Seeded {
            dir,
            summary,
            report,
            transformed,
            config: tconfig,
        }
    }

    pub fn warehouse(&self) -> PathBuf {
        self.dir.path().join("warehouse")
    }

    pub fn staging(&self) -> StagingArea {
        StagingArea::open(self.dir.path().join("staging")).unwrap()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::open(self.warehouse()).unwrap()
    }

    pub fn oracle(&self) -> Oracle {
        Oracle::new(&self.transformed)
    }
}

pub fn synth(seed: u64, n_patients: usize, duplicate_rate: f64) -> SynthConfig {
    SynthConfig {
        seed,
        n_patients,
        duplicate_rate,
        ..SynthConfig::default()
    }
}

pub fn measures_of(cube: CubeId) -> &'static [&'static str] {
    match cube {
        CubeId::Treatment => &[
            "sum_cost",
            "event_count",
            "deaths",
            "remissions",
            "death_rate",
            "remission_rate",
            "avg_cost",
        ],
        CubeId::Lab => &["event_count", "abnormal_count", "abnormal_rate", "avg_value"],
    }
}

pub fn additive_measures(cube: CubeId) -> &'static [&'static str] {
    match cube {
        CubeId::Treatment => &["sum_cost", "event_count", "deaths", "remissions"],
        CubeId::Lab => &["event_count", "abnormal_count"],
    }
}

fn random_level(rng: &mut StdRng, h: Hierarchy, max_depth: usize) -> Level {
    h.level(rng.gen_range(1..=max_depth)).unwrap()
}

fn axis_level(l: Level) -> AxisLevel {
    AxisLevel::new(l.dimension(), l.name())
}

/// A filter on `level` whose values come from members present in the data,
/// with an occasional member that matches nothing.
pub fn random_filter(rng: &mut StdRng, oracle: &Oracle, cube: CubeId, level: Level) -> Filter {
    let mut members = oracle.members(cube, level);
    if members.is_empty() || rng.gen_bool(0.05) {
        members.push(MemberPath::new(vec!["zz-none".to_string(); level.depth]));
    }
    let (op, values) = match rng.gen_range(0..3) {
        0 => (FilterOp::Eq, vec![members.choose(rng).unwrap().clone()]),
        1 => {
            let k = rng.gen_range(1..=members.len().min(3));
            (FilterOp::In, members.choose_multiple(rng, k).cloned().collect())
        }
        _ => {
            let mut pair = [members.choose(rng).unwrap().clone(), members.choose(rng).unwrap().clone()];
            pair.sort();
            (FilterOp::Between, pair.to_vec())
        }
    };
    Filter {
        dimension: level.dimension().to_string(),
        level: level.name().to_string(),
        op,
        values,
    }
}

/// Any valid spec over `cube`: up to two dimensions per axis, up to two
/// filters (patient attributes included), optional ordering and limit.
pub fn random_spec(rng: &mut StdRng, oracle: &Oracle, cube: CubeId) -> QuerySpec {
    let mut dims = cube.axis_hierarchies().to_vec();
    dims.shuffle(rng);
    let n_rows = rng.gen_range(0..=2);
    let n_cols = rng.gen_range(0..=2).min(dims.len() - n_rows);
    let pick = |rng: &mut StdRng, hs: &[Hierarchy]| -> Vec<AxisLevel> {
        hs.iter().map(|h| axis_level(random_level(rng, *h, h.finest_depth()))).collect()
    };
    let rows = pick(rng, &dims[..n_rows]);
    let columns = pick(rng, &dims[n_rows..n_rows + n_cols]);

    let mut measures: Vec<&str> = measures_of(cube).to_vec();
    measures.shuffle(rng);
    measures.truncate(rng.gen_range(1..=measures.len()));

    let mut filterable: Vec<Hierarchy> = Hierarchy::ALL.into_iter().filter(|h| cube.has_hierarchy(*h)).collect();
    filterable.shuffle(rng);
    let filters = filterable[..rng.gen_range(0..=2)]
        .iter()
        .map(|h| {
            let level = random_level(rng, *h, h.finest_depth());
            random_filter(rng, oracle, cube, level)
        })
        .collect();

    let mut spec = QuerySpec::new(cube, &measures);
    spec.rows = rows;
    spec.columns = columns;
    spec.filters = filters;
    if rng.gen_bool(0.2) {
        spec.order_by = Some(OrderBy {
            measure: measures.choose(rng).unwrap().to_string(),
            descending: rng.gen_bool(0.5),
        });
    }
    if rng.gen_bool(0.15) {
        spec.limit = Some(rng.gen_range(1..=6));
    }
    spec
}

/// Grain over 1 to 3 random hierarchies of `cube` at random depths, in
/// `cube:dim@level,...` form.
pub fn random_grain(rng: &mut StdRng, cube: CubeId) -> Vec<Level> {
    let mut dims = cube.axis_hierarchies().to_vec();
    dims.shuffle(rng);
    let n = rng.gen_range(1..=3);
    dims[..n].iter().map(|h| random_level(rng, *h, h.finest_depth())).collect()
}

pub fn grain_text(cube: CubeId, levels: &[Level]) -> String {
    let parts: Vec<String> = levels.iter().map(|l| l.to_string()).collect();
    format!("{cube}:{}", parts.join(","))
}

/// A spec the aggregate at `grain` can answer: axes and filters at or above
/// the grain's levels and measures derivable from additive sums.
pub fn covered_spec(rng: &mut StdRng, oracle: &Oracle, cube: CubeId, grain: &[Level]) -> QuerySpec {
    let mut levels = grain.to_vec();
    levels.shuffle(rng);
    let on_axes = rng.gen_range(0..=levels.len());
    let split = rng.gen_range(0..=on_axes);
    let coarsen = |rng: &mut StdRng, l: &Level| random_level(rng, l.hierarchy, l.depth);
    let rows = levels[..split].iter().map(|l| axis_level(coarsen(rng, l))).collect();
    let columns = levels[split..on_axes].iter().map(|l| axis_level(coarsen(rng, l))).collect();
    let mut filters = Vec::new();
    for l in &levels {
        if rng.gen_bool(0.3) {
            let level = coarsen(rng, l);
            filters.push(random_filter(rng, oracle, cube, level));
        }
    }
    let mut measures: Vec<&str> = match cube {
        CubeId::Treatment => vec!["sum_cost", "event_count", "deaths", "remissions", "avg_cost"],
        CubeId::Lab => vec!["event_count", "abnormal_count", "abnormal_rate", "avg_value"],
    };
    measures.shuffle(rng);
    measures.truncate(rng.gen_range(1..=measures.len()));
    let mut spec = QuerySpec::new(cube, &measures);
    spec.rows = rows;
    spec.columns = columns;
    spec.filters = filters;
    spec
}
