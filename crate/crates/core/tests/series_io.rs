mod common;

use std::collections::HashSet;

use proptest::prelude::*;

use pidboost::series::{build_features, ingest_csv, ingest_reader, split, IngestOptions};
use pidboost::{LagWindowSpec, SplitSpec};

#[test]
fn ingest_write_ingest_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let mut text = String::from("when,load\n");
    for i in 0..96 {
        if i == 40 {
            continue; // single missing step gets interpolated
        }
        let ts = pidboost::series::format_timestamp(common::START + i * common::HOUR).replace('T', " ").replace('Z', "");
        text.push_str(&format!("{ts},{}\n", 0.1 * i as f64 + 1.0 / 3.0));
    }
    std::fs::write(&raw, text).unwrap();

    let (first, report) = ingest_csv(&raw, &IngestOptions::new("when", "load", 24)).unwrap();
    assert_eq!(report.interpolated, vec![40]);
    let once = dir.path().join("once.csv");
    first.save_csv(&once).unwrap();
    let (second, report) = ingest_csv(&once, &IngestOptions::new("timestamp", "value", 24)).unwrap();
    assert!(report.interpolated.is_empty());
    assert_eq!(first.values(), second.values());
    assert_eq!(first.timestamps(), second.timestamps());
    assert_eq!(first.content_hash(), second.content_hash());
    let twice = dir.path().join("twice.csv");
    second.save_csv(&twice).unwrap();
    assert_eq!(std::fs::read(&once).unwrap(), std::fs::read(&twice).unwrap());
}

#[test]
fn reader_reports_line_of_duplicate() {
    let text = "timestamp,value\n2020-01-01T00:00:00Z,1\n2020-01-01T01:00:00Z,2\n2020-01-01T01:00:00Z,3\n";
    let err = ingest_reader(text.as_bytes(), &IngestOptions::new("timestamp", "value", 2)).unwrap_err();
    assert!(err.to_string().contains('4'), "{err}");
}

proptest! {
    #[test]
    fn split_is_a_contiguous_partition(
        n in 6usize..5000,
        a in 0.05f64..1.0,
        b in 0.05f64..1.0,
        c in 0.05f64..1.0,
    ) {
        let total = a + b + c;
        let spec = SplitSpec::new(a / total, b / total, c / total).unwrap();
        let (tr, va, te) = spec.lengths(n);
        prop_assert_eq!(tr + va + te, n);
        let series = common::hourly((0..n).map(|i| i as f64).collect(), 2);
        let parts = split(&series, &spec).unwrap();
        let joined: Vec<f64> = [parts.train.values(), parts.validation.values(), parts.test.values()].concat();
        prop_assert_eq!(joined, series.values().to_vec());
    }

    #[test]
    fn features_never_touch_target_or_future(
        sets in prop::collection::vec(prop::collection::btree_set(1usize..30, 1..6), 1..4),
        extra in 0usize..20,
    ) {
        let spec = LagWindowSpec::new(sets.into_iter().map(|s| s.into_iter().collect()).collect()).unwrap();
        let t = spec.max_lag() + extra;
        let values: Vec<f64> = (0..t + 10).map(|i| i as f64).collect();
        let feats = build_features(&values, t, &spec).unwrap();
        let read: HashSet<usize> = feats.iter().flatten().map(|&v| v as usize).collect();
        prop_assert!(read.iter().all(|&i| i < t));
        // values at and after t may change freely
        let mut poisoned = values.clone();
        for v in &mut poisoned[t..] {
            *v = f64::NAN;
        }
        let again = build_features(&poisoned, t, &spec).unwrap();
        prop_assert_eq!(feats, again);
    }
}
