use std::path::Path;

use shiftgate_core::data::{synth_generate, write_idx, write_idx_images, write_labels_csv, Labels};
use shiftgate_core::pipeline::*;
use shiftgate_core::quant::{top_label, Classifier, DropPlan, LabelMode};

fn tiny(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::benchmark(11);
    cfg.out = Some(out.to_path_buf());
    cfg.data = DataConfig::Synth(SynthData {
        classes: 3,
        image_size: 16,
        train_per_class: 40,
        test_per_class: 10,
        external_per_class: 30,
        ..SynthData::default()
    });
    cfg.anomaly.epochs_generator = 3;
    cfg.anomaly.epochs_discriminator = 2;
    cfg.anomaly.batch_size = 8;
    cfg.classifier.epochs = 3;
    cfg.otdd.rounds = 2;
    cfg.otdd.sample_per_round = 20;
    cfg.cluster.k_range = (2, 5);
    cfg.baseline.seeds = 3;
    cfg.whatif.rounds = 2;
    cfg.whatif.sample_per_round = 15;
    cfg
}

fn report_json(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn config_errors_are_collected() {
    let mut cfg = PipelineConfig::benchmark(1);
    cfg.out = None;
    cfg.anomaly.epochs_generator = 0;
    cfg.cluster.k_range = (3, 4);
    cfg.baseline.seeds = 0;
    let Err(PipelineError::Config(problems)) = cfg.validate() else {
        panic!("expected a config error");
    };
    assert_eq!(problems.len(), 4, "{problems:?}");
    assert!(problems.iter().any(|p| p.contains("output directory")));
    assert!(problems.iter().any(|p| p.contains("zero epochs")));
    assert!(problems.iter().any(|p| p.contains("k_range")));
    assert_eq!(PipelineError::Config(problems).exit_code(), 2);
}

#[test]
fn config_file_parsing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"data": {"source": "synth"}}"#).unwrap();
    let err = PipelineConfig::load(&path).unwrap_err();
    assert!(err.to_string().contains("seed"), "{err}");
    assert_eq!(err.exit_code(), 2);

    std::fs::write(&path, r#"{"seed": 3, "out": "run", "data": {"source": "synth"}, "bogus": 1}"#).unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap_err().exit_code(), 2);

    std::fs::write(&path, r#"{"seed": 3, "out": "run", "data": {"source": "synth", "classes": 4}}"#).unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.out.as_deref(), Some(dir.path().join("run").as_path()));
    assert!(matches!(&cfg.data, DataConfig::Synth(s) if s.classes == 4 && s.image_size == 32));
    cfg.validate().unwrap();
    let cfg = cfg.with_overrides(Some(9), Some("/elsewhere".into()));
    assert_eq!((cfg.seed, cfg.out_dir().unwrap()), (9, Path::new("/elsewhere")));

    let missing = PipelineConfig::load(&dir.path().join("nope.json")).unwrap_err();
    assert_eq!(missing.exit_code(), 2);
}

#[test]
fn file_sources_must_exist() {
    let mut cfg = tiny(Path::new("/tmp/unused"));
    cfg.data = DataConfig::Files(FileData {
        internal: DatasetPaths {
            images: "/nonexistent/a.idx".into(),
            labels: "/nonexistent/a.csv".into(),
        },
        external: DatasetPaths {
            images: "/nonexistent/b.idx".into(),
            labels: "/nonexistent/b.idx".into(),
        },
        class_names: None,
        test_fraction: 1.5,
        image_size: Some(10),
    });
    let Err(PipelineError::Config(p)) = cfg.validate() else { panic!() };
    // four missing files, mixed label formats, no class names, fraction, size
    assert_eq!(p.len(), 8, "{p:?}");
}

#[test]
fn stages_name_their_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let err = cmd_quantify(&cfg).unwrap_err();
    assert_eq!(err.to_string(), "missing clusters; run cluster first");
    assert_eq!(err.exit_code(), 3);
    assert_eq!(cmd_train(&cfg).unwrap_err().to_string(), "missing data; run synth first");
    assert_eq!(cmd_report(&cfg).unwrap_err().to_string(), "missing otdd; run otdd first");
    assert!(!dir.path().join(LOCK_FILE).exists(), "lock released after a failed stage");
}

#[test]
fn lock_file_blocks_a_second_writer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let run = Run::open(&cfg).unwrap();
    let err = cmd_synth(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Locked(_)));
    assert_eq!(err.exit_code(), 4);
    drop(run);
    cmd_synth(&cfg).unwrap();
}

#[test]
fn stage_names_round_trip() {
    for s in Stage::ALL {
        assert_eq!(s.name().parse::<Stage>().unwrap(), s);
    }
    assert!("serve".parse::<Stage>().is_err());
}

#[test]
fn sign_test_tail() {
    assert_eq!(sign_test_p(10, 10), 1.0 / 1024.0);
    assert_eq!(sign_test_p(9, 10), 11.0 / 1024.0);
    assert!(sign_test_p(8, 10) > 0.05);
    assert_eq!(sign_test_p(0, 10), 1.0);
}

#[test]
fn synthetic_run_end_to_end() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_all(&tiny(a.path())).unwrap();
    // the second run goes stage by stage
    let cfg_b = tiny(b.path());
    for s in Stage::ALL {
        run_stage(&cfg_b, s).unwrap();
    }

    let ja = report_json(a.path());
    let jb = report_json(b.path());
    assert!(ja.get("timings").is_some());
    assert_eq!(Report::without_timings(&ja), Report::without_timings(&jb));

    // the shipped schema file accepts the report
    let schema: serde_json::Value =
        serde_json::from_slice(&std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json")).unwrap())
            .unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    assert!(compiled.is_valid(&ja));
    let mut broken = ja.clone();
    broken.as_object_mut().unwrap().remove("version");
    assert!(!compiled.is_valid(&broken));
    assert!(validate_schema(&broken).is_err());

    let report = read_report(a.path()).unwrap();
    assert_eq!(report.version, REPORT_VERSION);
    assert_eq!(report.class_names, vec!["BAR_H", "BAR_V", "BLOB"]);
    assert_eq!(report.quantification.series.0.len(), report.k);
    let keys: Vec<String> = (1..=report.k).map(otdd_key).collect();
    assert_eq!(report.otdd.keys().cloned().collect::<Vec<_>>(), keys);
    assert!(report.otdd_per_class.is_none());
    let artifact: OtddArtifact = read_json(&Layout::new(a.path()).otdd()).unwrap();
    for s in &artifact.scenarios {
        assert_eq!(&report.otdd[&s.label.replace(' ', "_")], &s.result);
    }
    assert_eq!(report.quantification.random_baseline.len(), report.k - 1);
    assert!(report.config.out.is_none());

    let layout = Layout::new(a.path());
    let ext = load_dataset(&layout, EXTERNAL).unwrap();
    report.check_consistency(&ext.sample_ids).unwrap();
    for c in &report.clusters {
        let sizes = c.group_sizes();
        for j in 1..=report.k {
            let partial: usize = c.group_order[..j].iter().map(|&g| sizes[g]).sum();
            let entry = report.quantification.series.entry(&top_label(j)).unwrap();
            assert_eq!(entry.counts[&c.class_label], partial);
        }
        for id in c.members.iter().flatten() {
            let pgm = std::fs::read(layout.thumb(id)).unwrap();
            assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
            assert_eq!(pgm.len(), 13 + 256);
        }
    }
    let flags: Vec<FlagEntry> = read_json(&layout.flags()).unwrap();
    let flagged = flags.iter().filter(|f| f.flagged).count();
    assert_eq!(flagged, (0.25 * 90.0f64).round() as usize);
    assert_eq!(report.scores.iter().map(|s| s.flagged.unwrap()).sum::<usize>(), flagged);

    // counts in the report echo every artifact hash
    for (file, hash) in &report.provenance.artifacts {
        assert_eq!(&sha256_file(&a.path().join(file)).unwrap(), hash, "{file}");
    }

    // a tampered dataset is refused
    let img = layout.images(EXTERNAL);
    let mut bytes = std::fs::read(&img).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&img, bytes).unwrap();
    assert!(matches!(load_dataset(&layout, EXTERNAL), Err(PipelineError::Corrupt(_))));
}

#[test]
fn whatif_matches_the_series() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.cluster.k_override = Some(3);
    cmd_all(&cfg).unwrap();
    let ctx = WhatifContext::load(dir.path()).unwrap();
    let report = &ctx.report;
    assert_eq!((report.k, report.k_source), (3, KSource::Override));
    assert!(report.clusters.iter().all(|c| c.distortion_curve.is_none()));

    let none = ctx.evaluate(&DropPlan::default()).unwrap();
    assert_eq!(none.metrics, report.quantification.series.entry("TOP 3").unwrap().metrics);
    assert_eq!(none.otdd_rounds, 2);
    assert!(none.plan.0.values().all(|&d| d == 0));
    let all = ctx.evaluate(&DropPlan::keep(ctx.clusters(), 1)).unwrap();
    assert_eq!(all.metrics, report.quantification.series.entry("TOP 1").unwrap().metrics);
    assert_eq!(all.counts, report.quantification.series.entry("TOP 1").unwrap().counts);
    assert_eq!(ctx.evaluate(&DropPlan::keep(ctx.clusters(), 1)).unwrap(), all);

    let bad = DropPlan([("BAR_H".to_string(), 3)].into());
    assert!(ctx.evaluate(&bad).is_err());

    let g = Classifier::load(&Layout::new(dir.path()).classifier()).unwrap();
    assert_eq!(g.label_mode(), LabelMode::Single);
}

/// IDX files on disk, and the multi-hot CSV variant.
#[test]
fn file_sources_run() {
    let src = tempfile::tempdir().unwrap();
    let internal = synth_generate("i", 50, 3, 16, 5).unwrap();
    let external = synth_generate("e", 30, 3, 16, 6).unwrap();
    let p = |n: &str| src.path().join(n);
    write_idx(&internal, &p("i.images"), &p("i.labels")).unwrap();
    write_idx(&external, &p("e.images"), &p("e.labels")).unwrap();

    let out = tempfile::tempdir().unwrap();
    let mut cfg = tiny(out.path());
    cfg.cluster.k_override = Some(2);
    cfg.data = DataConfig::Files(FileData {
        internal: DatasetPaths {
            images: p("i.images"),
            labels: p("i.labels"),
        },
        external: DatasetPaths {
            images: p("e.images"),
            labels: p("e.labels"),
        },
        class_names: Some(vec!["a".into(), "b".into(), "c".into()]),
        test_fraction: 0.2,
        image_size: None,
    });
    cmd_all(&cfg).unwrap();
    let report = read_report(out.path()).unwrap();
    assert_eq!(report.class_names, vec!["a", "b", "c"]);
    assert!(report.scores.iter().all(|s| s.flagged.is_none()));
    let train = read_manifest(&Layout::new(out.path()), INTERNAL_TRAIN).unwrap();
    assert_eq!(train.counts.values().copied().collect::<Vec<_>>(), vec![40, 40, 40]);

    // multi-hot: class c co-occurs with a on every third sample
    let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
    let hot = |ds: &shiftgate_core::data::Dataset| -> Vec<Vec<u8>> {
        let y = ds.single_labels().unwrap();
        y.iter()
            .enumerate()
            .map(|(i, &l)| {
                let mut r = vec![0u8; 3];
                r[l] = 1;
                if l == 0 && i % 3 == 0 {
                    r[2] = 1;
                }
                r
            })
            .collect()
    };
    write_idx_images(&internal.images, &p("mi.images")).unwrap();
    write_labels_csv(&p("mi.csv"), &names, &hot(&internal)).unwrap();
    write_idx_images(&external.images, &p("me.images")).unwrap();
    write_labels_csv(&p("me.csv"), &names, &hot(&external)).unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut cfg = tiny(out.path());
    cfg.cluster.k_override = Some(2);
    cfg.data = DataConfig::Files(FileData {
        internal: DatasetPaths {
            images: p("mi.images"),
            labels: p("mi.csv"),
        },
        external: DatasetPaths {
            images: p("me.images"),
            labels: p("me.csv"),
        },
        class_names: Some(names.clone()),
        test_fraction: 0.2,
        image_size: Some(20),
    });
    cmd_all(&cfg).unwrap();
    let report = read_report(out.path()).unwrap();
    assert_eq!(report.label_mode, LabelMode::Multi);
    let m = &report.quantification.series.0[0].metrics;
    assert!(m.averages.micro.is_some() && m.averages.samples.is_some() && m.confusion.is_none());
    let ext = load_dataset(&Layout::new(out.path()), EXTERNAL).unwrap();
    assert!(matches!(ext.labels, Labels::Multi(_)));
    assert_eq!(ext.image_shape(), Some(&[20usize, 20, 1][..]));
    // each sample is filed under exactly one class
    assert_eq!(report.clusters.iter().map(|c| c.members.iter().flatten().count()).sum::<usize>(), 90);

    // class quality per class, on top of the whole-set scenarios
    let per_class = report.otdd_per_class.as_ref().unwrap();
    assert_eq!(per_class.keys().collect::<Vec<_>>(), ["a", "b", "c"]);
    let artifact: OtddArtifact = read_json(&Layout::new(out.path()).otdd()).unwrap();
    for c in &report.clusters {
        let scenarios = &artifact.per_class.as_ref().unwrap()[&c.class_label];
        let sizes = c.group_sizes();
        for (s, j) in scenarios.iter().zip((1..=report.k).rev()) {
            let kept: usize = c.group_order[..j].iter().map(|&g| sizes[g]).sum();
            assert_eq!(s.counts[&c.class_label], kept);
            assert_eq!(s.counts.len(), 1);
            assert!(s.result.rounds.iter().all(|r| r.n == kept.min(20)));
            assert_eq!(&per_class[&c.class_label][&otdd_key(j)], &s.result);
        }
    }
    assert_eq!(report.otdd.len(), report.k);
}
