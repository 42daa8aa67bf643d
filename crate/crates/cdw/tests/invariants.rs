mod common;

use std::sync::OnceLock;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use cdw_core::olap::{query, Cell, CellSet, MeasureValue, QuerySpec};
use cdw_core::schema::CubeId;
use cdw_core::warehouse::Snapshot;
use common::oracle::Oracle;
use common::{additive_measures, random_spec, synth, Seeded};

struct World {
    _seeded: Seeded,
    snapshot: Snapshot,
    oracle: Oracle,
}

fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| {
        let seeded = Seeded::new(&synth(11, 150, 0.1));
        World {
            snapshot: seeded.snapshot(),
            oracle: seeded.oracle(),
            _seeded: seeded,
        }
    })
}

fn spec_for(seed: u64, lab: bool) -> QuerySpec {
    let cube = if lab { CubeId::Lab } else { CubeId::Treatment };
    random_spec(&mut StdRng::seed_from_u64(seed), &world().oracle, cube)
}

fn close(a: MeasureValue, b: MeasureValue) -> bool {
    match (a, b) {
        (MeasureValue::Int(x), MeasureValue::Int(y)) => x == y,
        _ => {
            let (x, y) = (a.as_f64(), b.as_f64());
            (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0)
        }
    }
}

fn same_cell(a: Option<&Cell>, b: Option<&Cell>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => a.len() == b.len() && a.iter().all(|(k, v)| b.get(k).is_some_and(|w| close(*v, *w))),
        _ => false,
    }
}

fn run(spec: &QuerySpec) -> CellSet {
    query(&world().snapshot, spec).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn swapping_axes_transposes(seed in any::<u64>(), lab in any::<bool>()) {
        let mut spec = spec_for(seed, lab);
        spec.order_by = None;
        spec.limit = None;
        let a = run(&spec);
        std::mem::swap(&mut spec.rows, &mut spec.columns);
        let t = run(&spec);
        prop_assert_eq!(&a.row_axis, &t.column_axis);
        prop_assert_eq!(&a.column_axis, &t.row_axis);
        for r in 0..a.row_axis.len() {
            for c in 0..a.column_axis.len() {
                prop_assert!(same_cell(a.cell(r, c), t.cell(c, r)));
            }
            prop_assert!(same_cell(a.row_totals[r].as_ref(), t.column_totals[r].as_ref()));
        }
        prop_assert!(same_cell(a.grand_total.as_ref(), t.grand_total.as_ref()));
    }

    #[test]
    fn filter_order_is_irrelevant(seed in any::<u64>(), lab in any::<bool>()) {
        let mut spec = spec_for(seed, lab);
        let a = run(&spec);
        spec.filters.reverse();
        prop_assert_eq!(a, run(&spec));
    }

    #[test]
    fn totals_add_up_and_rates_are_bounded(seed in any::<u64>(), lab in any::<bool>()) {
        let mut spec = spec_for(seed, lab);
        spec.limit = None;
        let cells = run(&spec);
        let cube = if lab { CubeId::Lab } else { CubeId::Treatment };
        for m in additive_measures(cube).iter().filter(|m| spec.measures.iter().any(|s| s == *m)) {
            let sum: f64 = cells.row_totals.iter().flatten().map(|c| c[*m].as_f64()).sum();
            let grand = cells.grand_total.as_ref().map_or(0.0, |c| c[*m].as_f64());
            prop_assert!((sum - grand).abs() <= 1e-9 * grand.abs().max(1.0), "{m}: {sum} vs {grand}");
        }
        let all = cells.cells.iter().chain(&cells.row_totals).chain(&cells.column_totals).chain(std::iter::once(&cells.grand_total));
        for cell in all.flatten() {
            for (name, v) in cell {
                if name.ends_with("_rate") {
                    prop_assert!((0.0..=1.0).contains(&v.as_f64()), "{name} = {v:?}");
                }
            }
        }
    }
}
