use proptest::prelude::*;

use autoscale_core::autoscaler::{self, ClusterSnapshot, PlacementGroupSet};
use autoscale_core::forecast::holt_winters::{HoltWinters, HoltWintersParams};
use autoscale_core::forecast::saved::SavedModel;
use autoscale_core::forecast::static_max::StaticMax;
use autoscale_core::forecast::Forecaster;
use autoscale_core::resources::{embed_requirements, Amount, BucketCatalog, ResourceVector};
use autoscale_core::sim::{self, ComparisonEntry, Policy, SimConfig, SimInput};
use autoscale_core::synth::{generate_counts, jobs_from_counts, SynthConfig};
use autoscale_core::trace::{self, BucketCountSeries};

const CATALOG: &str = include_str!("../../../data/catalog.csv");
const GROUPS: &str = include_str!("../../../data/placement_groups.csv");

fn catalog() -> BucketCatalog {
    BucketCatalog::from_csv(CATALOG, 300).unwrap()
}

/// Three days of synthetic load on the three default synthetic types.
fn three_day_series() -> BucketCountSeries {
    let full = catalog();
    let sub = BucketCatalog::new(
        full.space().clone(),
        full.buckets()
            .iter()
            .filter(|b| ["m5.xlarge", "m5.4xlarge", "g4dn.2xlarge"].contains(&b.instance_type.as_str()))
            .cloned()
            .collect(),
    )
    .unwrap();
    let counts = generate_counts(&SynthConfig {
        days: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let jobs = jobs_from_counts(&counts, &sub, 300, 0).unwrap();
    let text = trace::write_trace(&jobs, full.space());
    let back = trace::ingest(&text, full.space()).unwrap();
    assert_eq!(back, jobs);
    trace::sample_series(&back, &full, "catalog.csv", 300, 0, 3 * 288 * 300).unwrap()
}

#[test]
fn trace_to_report_pipeline() {
    let series = BucketCountSeries::from_text(&three_day_series().to_text()).unwrap();
    assert_eq!((series.rows(), series.buckets()), (864, 15));
    series.catalog.check(&catalog()).unwrap();

    let m = series.to_matrix();
    // Holt-Winters needs two full seasons of history
    let t0 = 2 * 288 + 144;
    let prices = catalog().prices();
    let input = SimInput {
        series: &m,
        prices: &prices,
        eval_start: t0,
    };
    let mut hw = HoltWinters::new(HoltWintersParams {
        period: 288,
        ..HoltWintersParams::daily()
    });
    hw.fit(&m.slice_rows(0..t0)).unwrap();
    let saved = SavedModel::from_text(&SavedModel::HoltWinters(hw).to_text().unwrap()).unwrap();
    let hw = saved.into_forecaster();
    let config = SimConfig::default();
    let entries: Vec<ComparisonEntry> = [Policy::Predictive(hw.as_ref()), Policy::StaticMax, Policy::Oracle]
        .iter()
        .map(|p| ComparisonEntry {
            name: p.name(),
            report: sim::run(input, p, &config).unwrap(),
            fit_seconds: 0.0,
        })
        .collect();
    let oracle_cost = entries[2].report.total_cost;
    for e in &entries {
        assert!(e.report.total_cost >= oracle_cost, "{} beats the oracle", e.name);
        assert_eq!(e.report.ticks, 864 - t0);
    }
    let table = sim::compare(entries).unwrap();
    assert_eq!(table.to_csv().lines().count(), 4);
}

#[test]
fn forecast_feeds_a_balanced_plan() {
    let series = three_day_series();
    let m = series.to_matrix();
    let mut s = StaticMax::new();
    s.fit(&m).unwrap();
    let predicted = s.predict_next(&m).unwrap();
    let current = series.counts[100].clone();
    let groups = PlacementGroupSet::from_csv(GROUPS).unwrap();
    let plan = autoscaler::plan(&predicted, &ClusterSnapshot::with_current(current.clone()), &groups, 8).unwrap();
    let want = autoscaler::compute_delta(&predicted, &current).unwrap();
    assert_eq!(plan.placeholder_deltas, want);
    let placed: u64 = plan.assignments.iter().map(|a| a.instance.size).sum();
    assert_eq!(placed, want.iter().sum::<u64>());
}

fn job_strategy() -> impl Strategy<Value = Vec<i64>> {
    // within the largest general-purpose instance, no GPU
    (Just(0i64), 0i64..=96, 0i64..=384).prop_map(|(g, c, m)| vec![g, c, m])
}

proptest! {
    #[test]
    fn adding_a_job_never_shrinks_any_bucket(jobs in prop::collection::vec(job_strategy(), 0..12), extra in job_strategy()) {
        let cat = catalog();
        let vectors: Vec<ResourceVector> = jobs.iter().map(|j| ResourceVector::from_integers(j).unwrap()).collect();
        let before = embed_requirements(&vectors, &cat).unwrap();
        let mut more = vectors.clone();
        more.push(ResourceVector::from_integers(&extra).unwrap());
        let after = embed_requirements(&more, &cat).unwrap();
        for (a, b) in after.rounded.iter().zip(&before.rounded) {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn embedding_ignores_job_order(mut jobs in prop::collection::vec(job_strategy(), 0..12), seed in any::<u64>()) {
        let cat = catalog();
        let to_vectors = |js: &[Vec<i64>]| -> Vec<ResourceVector> {
            js.iter().map(|j| ResourceVector::from_integers(j).unwrap()).collect()
        };
        let a = embed_requirements(&to_vectors(&jobs), &cat).unwrap();
        let k = jobs.len().max(1);
        jobs.rotate_left(seed as usize % k);
        let b = embed_requirements(&to_vectors(&jobs), &cat).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn raw_count_bounds_rounded(jobs in prop::collection::vec(job_strategy(), 0..12)) {
        let vectors: Vec<ResourceVector> = jobs.iter().map(|j| ResourceVector::from_integers(j).unwrap()).collect();
        let c = embed_requirements(&vectors, &catalog()).unwrap();
        for (raw, &r) in c.raw.iter().zip(&c.rounded) {
            prop_assert!(*raw <= Amount::from_integer(r as i128));
            prop_assert!(Amount::from_integer(r as i128) < raw + Amount::from_integer(1));
        }
    }
}
