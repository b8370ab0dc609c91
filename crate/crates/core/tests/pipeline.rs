use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use matchbench::dataset::{generate_synthetic_sequence, load_dataset, textured_image, Dataset, ExclusionList};
use matchbench::eval::{
    evaluate, feature_file_name, match_file_relpath, pair_id, run_sweep, run_sweep_detailed,
    sweep_values_from_spec, EvalError, ExtractorFeatures, FeatureDir, FeatureProvider, MatchDir,
    MemoryFeatures, MemoryMatches, MetricKind, Scope, Source, SweepOptions,
};
use matchbench::extractor::{Extractor, FastConfig};
use matchbench::feature_io::{save_features, save_scored_matches, ScoredMatch, ScoredMatchFile};
use matchbench::geometry::Point2;
use matchbench::matching::MethodKind;
use matchbench::report::{from_csv, from_json, to_csv, to_json};

fn dataset(seeds: &[u64], warp: f64) -> Dataset {
    Dataset::from_sequences(
        seeds
            .iter()
            .map(|&s| generate_synthetic_sequence(&textured_image(160, 128, s), s, 5, warp).unwrap())
            .collect(),
    )
}

fn extractor() -> ExtractorFeatures {
    ExtractorFeatures {
        extractor: Extractor::new(FastConfig::default(), 42).unwrap(),
    }
}

fn all_values() -> Vec<f64> {
    sweep_values_from_spec("0.1:1.0:0.1").unwrap()
}

#[test]
fn disk_round_trip_matches_in_memory_run() {
    let d = dataset(&[3, 4], 10.0);
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    d.write_layout(&root).unwrap();
    let loaded = load_dataset(&root, &ExclusionList::none()).unwrap();
    assert_eq!(loaded.pair_count(), 10);

    let ex = extractor();
    let feat_dir = tmp.path().join("feats");
    std::fs::create_dir_all(&feat_dir).unwrap();
    for seq in &loaded.sequences {
        for i in 1..=6 {
            let f = ex.features(seq, i).unwrap();
            save_features(&f, &feat_dir.join(feature_file_name(&seq.image_id(i)))).unwrap();
        }
    }
    let opts = SweepOptions::default();
    let from_files = run_sweep(
        &loaded,
        Source::Features(&FeatureDir::new(&feat_dir)),
        MethodKind::RatioTest,
        "brief",
        &all_values(),
        &opts,
    )
    .unwrap();
    let direct = run_sweep(&loaded, Source::Features(&ex), MethodKind::RatioTest, "brief", &all_values(), &opts).unwrap();
    assert_eq!(from_files, direct);
    assert_eq!(from_files.entries.len(), 10);
    assert!(from_files.entries.windows(2).all(|w| w[0].mean_matches <= w[1].mean_matches));
}

#[test]
fn single_value_sweep_equals_evaluate() {
    let d = dataset(&[5], 15.0);
    let ex = extractor();
    let opts = SweepOptions::default();
    let sweep = run_sweep(&d, Source::Features(&ex), MethodKind::RatioTest, "m", &[0.8], &opts).unwrap();
    let single = evaluate(&d, Source::Features(&ex), MethodKind::RatioTest, "m", 0.8, &opts).unwrap();
    assert_eq!(sweep, single);
    assert_eq!(sweep.entries.len(), 1);
    let full = run_sweep(&d, Source::Features(&ex), MethodKind::RatioTest, "m", &all_values(), &opts).unwrap();
    assert_eq!(full.entry(0.8).unwrap(), &sweep.entries[0]);
}

#[test]
fn exact_self_correspondences_score_perfectly() {
    let d = dataset(&[9], 0.0);
    let ex = extractor();
    let s = evaluate(&d, Source::Features(&ex), MethodKind::RatioTest, "m", 1.0, &SweepOptions::default()).unwrap();
    let e = &s.entries[0];
    assert!(e.mean_matches > 20.0);
    for metric in MetricKind::ALL {
        assert_eq!(e.curve(metric, Scope::Overall).unwrap().values, vec![1.0; 10]);
    }
    // viewpoint-only data has no illumination curve
    assert!(e.curve(MetricKind::Mma, Scope::Illumination).is_none());
}

fn scored_file(d: &Dataset, seq: usize, k: usize, confidences: &[f32]) -> ScoredMatchFile {
    let s = &d.sequences[seq];
    let gt = s.gt_homographies[k - 2];
    let entries = confidences
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let p = Point2::new(10.0 + 7.0 * i as f64, 20.0 + 5.0 * (i % 9) as f64);
            let q = gt.apply(p).unwrap();
            ScoredMatch {
                x1: p.x as f32,
                y1: p.y as f32,
                x2: q.x as f32,
                y2: q.y as f32,
                confidence: c,
            }
        })
        .collect();
    ScoredMatchFile {
        image_id_a: s.image_id(1),
        image_id_b: s.image_id(k),
        entries,
    }
}

#[test]
fn confidence_source_relaxes_with_t() {
    let d = dataset(&[2], 8.0);
    let confidences: Vec<f32> = (0..40).map(|i| i as f32 / 39.0).collect();
    let mut files = HashMap::new();
    for k in 2..=6 {
        files.insert(MemoryMatches::key(&pair_id(&d.sequences[0].name, k), None), scored_file(&d, 0, k, &confidences));
    }
    let src = MemoryMatches(files);
    let s = run_sweep(&d, Source::Matches(&src), MethodKind::ConfidenceFilter, "sg", &all_values(), &SweepOptions::default()).unwrap();
    let counts: Vec<f64> = s.entries.iter().map(|e| e.mean_matches).collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    // t = 1.0 keeps every entry
    assert_eq!(*counts.last().unwrap(), 40.0);
    assert!(s.entries.iter().all(|e| e.mean_features.is_none()));
}

#[test]
fn dfm_source_reads_per_value_directories() {
    let d = dataset(&[6], 8.0);
    let tmp = tempfile::tempdir().unwrap();
    let values = [0.5, 1.0];
    for (n, &t) in values.iter().enumerate() {
        for k in 2..=6 {
            let id = pair_id(&d.sequences[0].name, k);
            let path = tmp.path().join(match_file_relpath(&id, Some(t)));
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            save_scored_matches(&scored_file(&d, 0, k, &vec![0.5; 10 * (n + 1)]), &path).unwrap();
        }
    }
    let src = MatchDir::new(tmp.path());
    let s = run_sweep(&d, Source::Matches(&src), MethodKind::DfmSchedule, "dfm", &values, &SweepOptions::default()).unwrap();
    assert_eq!(s.entries[0].mean_matches, 10.0);
    assert_eq!(s.entries[1].mean_matches, 20.0);
    assert!(tmp.path().join("0.5").is_dir() && tmp.path().join("1.0").is_dir());
}

#[test]
fn missing_pair_is_named() {
    let d = dataset(&[1], 8.0);
    let tmp = tempfile::tempdir().unwrap();
    let name = d.sequences[0].name.clone();
    for k in [2, 3, 5, 6] {
        save_scored_matches(&scored_file(&d, 0, k, &[0.9; 5]), &tmp.path().join(format!("{}.mtch", pair_id(&name, k)))).unwrap();
    }
    let err = evaluate(&d, Source::Matches(&MatchDir::new(tmp.path())), MethodKind::ConfidenceFilter, "x", 0.5, &SweepOptions::default())
        .unwrap_err();
    match err {
        EvalError::MissingFeatures { pair, .. } => assert_eq!(pair, pair_id(&name, 4)),
        other => panic!("unexpected {other:?}"),
    }
    assert!(evaluate(&d, Source::Features(&MemoryFeatures::default()), MethodKind::RatioTest, "x", 0.5, &SweepOptions::default()).is_err());
}

#[test]
fn mismatched_source_and_kind_is_rejected() {
    let d = dataset(&[1], 8.0);
    let ex = extractor();
    let err = evaluate(&d, Source::Features(&ex), MethodKind::ConfidenceFilter, "x", 0.5, &SweepOptions::default()).unwrap_err();
    assert!(matches!(err, EvalError::InvalidConfig(_)));
    let err = evaluate(&d, Source::Features(&ex), MethodKind::RatioTest, "x", 1.5, &SweepOptions::default()).unwrap_err();
    assert!(matches!(err, EvalError::Match(_)));
}

#[test]
fn memory_features_and_reports_round_trip() {
    let d = dataset(&[8, 12], 12.0);
    let ex = extractor();
    let mut map = HashMap::new();
    for seq in &d.sequences {
        for i in 1..=6 {
            map.insert(seq.image_id(i), Arc::clone(&ex.features(seq, i).unwrap()));
        }
    }
    let opts = SweepOptions {
        master_seed: 99,
        ..SweepOptions::default()
    };
    let detailed = run_sweep_detailed(&d, Source::Features(&MemoryFeatures(map)), MethodKind::RatioTest, "mem", &all_values(), &opts).unwrap();
    assert_eq!(detailed.pairs.len(), 10);
    assert_eq!(detailed.pairs[0].len(), 10);
    assert_eq!(detailed.pairs[0][0].pair_id, pair_id(&d.sequences[0].name, 2));
    let s = detailed.result;
    assert_eq!(from_csv(&to_csv(&s).unwrap()).unwrap(), s);
    assert_eq!(from_json(&to_json(&s).unwrap()).unwrap(), s);
    let direct = run_sweep(&d, Source::Features(&ex), MethodKind::RatioTest, "mem", &all_values(), &opts).unwrap();
    assert_eq!(direct, s);
}

#[test]
fn feature_dir_accepts_json_mirror() {
    let d = dataset(&[4], 5.0);
    let ex = extractor();
    let tmp = tempfile::tempdir().unwrap();
    let seq = &d.sequences[0];
    for i in 1..=6 {
        let f = ex.features(seq, i).unwrap();
        let name = if i % 2 == 0 { format!("{}.json", seq.image_id(i)) } else { feature_file_name(&seq.image_id(i)) };
        save_features(&f, &tmp.path().join(name)).unwrap();
    }
    let a = evaluate(&d, Source::Features(&FeatureDir::new(tmp.path())), MethodKind::RatioTest, "m", 0.8, &SweepOptions::default()).unwrap();
    let b = evaluate(&d, Source::Features(&ex), MethodKind::RatioTest, "m", 0.8, &SweepOptions::default()).unwrap();
    assert_eq!(a, b);
    assert!(Path::new(&tmp.path().join(format!("{}.json", seq.image_id(2)))).exists());
}
