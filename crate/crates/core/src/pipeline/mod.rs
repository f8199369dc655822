//! The staged run: synth, train, score, cluster, quantify, otdd, report.
//! Each stage reads its inputs from the output directory and refuses to run
//! when one is missing, naming the command that produces it.

mod artifacts;
mod config;
mod report;
mod whatif;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use thiserror::Error;

pub use artifacts::*;
pub use config::{
    BaselineConfig, ClusterConfig, DataConfig, DatasetPaths, FileData, PipelineConfig, SynthData, WhatifConfig,
};
pub use report::{keyed_otdd, otdd_key, summarize_scores, validate_schema, ClassScores, Provenance, Report, REPORT_SCHEMA, REPORT_VERSION};
pub use whatif::{canonical_plan, WhatifContext, WhatifResult};

use crate::anomaly::{read_bundle, train_detector, write_bundle, AnomalyError, AnomalyTrainConfig, CvadModel, BUNDLE_MANIFEST};
use crate::cluster::{cluster_class, elbow_select_k, shared_k, ClusterError, ScoreRow, ScoreTable};
use crate::data::{
    apply_shift, load_idx, load_labels_csv, read_idx_images, resize_dataset, split, synth_generate, to_pgm, DataError,
    Dataset, Labels,
};
use crate::otdd::{otdd_between, LabeledFeatures, OtddConfig, OtddError, OtddResult, OtddSide};
use crate::quant::{
    drop_series, evaluate, plan_counts, random_baseline_from, retained_indices, top_label, train_classifier, Classifier,
    ClassifierConfig, DropPlan, QuantError,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("missing {what}; run {command} first")]
    MissingArtifact { what: &'static str, command: &'static str },
    #[error("{} exists; another run holds this output directory (delete the file if it is stale)", .0.display())]
    Locked(PathBuf),
    #[error("corrupt artifact: {0}")]
    Corrupt(String),
    #[error("inconsistent run: {0}")]
    Inconsistent(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Otdd(#[from] OtddError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingArtifact { .. } => 3,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Train,
    Score,
    Cluster,
    Quantify,
    Otdd,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Train,
        Stage::Score,
        Stage::Cluster,
        Stage::Quantify,
        Stage::Otdd,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Cluster => "cluster",
            Stage::Quantify => "quantify",
            Stage::Otdd => "otdd",
            Stage::Report => "report",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

struct LockGuard(PathBuf);

impl LockGuard {
    fn acquire(path: PathBuf) -> Result<Self> {
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(LockGuard(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

/// A validated config bound to its locked output directory.
pub struct Run<'a> {
    pub cfg: &'a PipelineConfig,
    pub layout: Layout,
    _lock: LockGuard,
}

impl<'a> Run<'a> {
    pub fn open(cfg: &'a PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let root = cfg.out_dir()?.to_path_buf();
        std::fs::create_dir_all(&root)?;
        let lock = LockGuard::acquire(Layout::new(&root).lock())?;
        Ok(Self {
            cfg,
            layout: Layout::new(root),
            _lock: lock,
        })
    }

    fn seed(&self, name: &str) -> u64 {
        seed::derive(self.cfg.seed, name)
    }

    pub fn stage(&self, stage: Stage) -> Result<()> {
        info!("stage {}", stage.name());
        let start = Instant::now();
        match stage {
            Stage::Synth => self.synth(),
            Stage::Train => self.train(),
            Stage::Score => self.score(),
            Stage::Cluster => self.cluster(),
            Stage::Quantify => self.quantify(),
            Stage::Otdd => self.otdd(),
            Stage::Report => self.report(),
        }?;
        let secs = start.elapsed().as_secs_f64();
        info!("stage {} finished in {secs:.1}s", stage.name());
        let mut timings: BTreeMap<String, f64> = match self.layout.timings().exists() {
            true => read_json(&self.layout.timings())?,
            false => BTreeMap::new(),
        };
        timings.insert(stage.name().to_string(), secs);
        write_json(&self.layout.timings(), &timings)
    }

    fn synth(&self) -> Result<()> {
        let (train, test, external, flags) = match &self.cfg.data {
            DataConfig::Synth(s) => {
                let per_class = s.train_per_class + s.test_per_class;
                let internal = synth_generate("internal", per_class, s.classes, s.image_size, self.seed("synth/internal"))?;
                let frac = s.train_per_class as f64 / per_class as f64;
                let mut parts = split(&internal, &[frac, 1.0 - frac], self.seed("split"))?;
                let test = parts.pop().expect("two parts");
                let train = parts.pop().expect("two parts");
                let fresh = synth_generate(
                    "external",
                    s.external_per_class,
                    s.classes,
                    s.image_size,
                    self.seed("synth/external"),
                )?;
                let shifted = apply_shift(&fresh, &s.shift, self.seed("synth/shift"))?;
                let flags: Vec<_> = shifted.flags.iter().copied().zip(shifted.kinds.iter().copied()).collect();
                (train, test, shifted.dataset, Some(flags))
            }
            DataConfig::Files(f) => {
                let (internal, external) = load_sources(f)?;
                let mut parts = split(&internal, &[1.0 - f.test_fraction, f.test_fraction], self.seed("split"))?;
                let test = parts.pop().expect("two parts");
                let train = parts.pop().expect("two parts");
                (train, test, external, None)
            }
        };
        save_dataset(&self.layout, &train, INTERNAL_TRAIN)?;
        save_dataset(&self.layout, &test, INTERNAL_TEST)?;
        let external = save_dataset(&self.layout, &external, EXTERNAL)?;
        match flags {
            Some(flags) => {
                let entries: Vec<FlagEntry> = external
                    .sample_ids
                    .iter()
                    .zip(flags)
                    .map(|(id, (flagged, kind))| FlagEntry {
                        sample_id: id.clone(),
                        flagged,
                        kind,
                    })
                    .collect();
                write_json(&self.layout.flags(), &entries)?;
            }
            None if self.layout.flags().exists() => std::fs::remove_file(self.layout.flags())?,
            None => {}
        }
        info!(
            "stored {} internal train, {} internal test, {} external images",
            train.len(),
            test.len(),
            external.len()
        );
        Ok(())
    }

    fn train(&self) -> Result<()> {
        let ds = load_dataset(&self.layout, INTERNAL_TRAIN)?;
        let mut models = Vec::new();
        let mut hashes = BTreeMap::new();
        for (c, name) in ds.class_names.iter().enumerate() {
            let idx = ds.indices_of_class(c);
            if idx.is_empty() {
                warn!("no internal images of class {name}; it gets no detector");
                continue;
            }
            let sub = ds.subset(&idx, format!("{INTERNAL_TRAIN}/{name}"));
            let cfg = AnomalyTrainConfig {
                seed: self.seed(&format!("train/cvad/{name}")),
                ..self.cfg.anomaly.clone()
            };
            info!("training detector for {name} on {} images", sub.len());
            models.push(train_detector(&sub, name, &cfg)?);
            hashes.insert(name.clone(), sub.sha256());
        }
        let dir = self.layout.detectors();
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        write_bundle(&dir, &models, hashes)?;
        let cfg = ClassifierConfig {
            seed: self.seed("train/classifier"),
            ..self.cfg.classifier.clone()
        };
        info!("training classifier on {} images", ds.len());
        train_classifier(&ds, &cfg)?.save(&self.layout.classifier())?;
        Ok(())
    }

    fn score(&self) -> Result<()> {
        require(&self.layout.detectors().join(BUNDLE_MANIFEST), "detectors", "train")?;
        let ext = load_dataset(&self.layout, EXTERNAL)?;
        let (_, models) = read_bundle(&self.layout.detectors())?;
        let by_class: BTreeMap<&str, &CvadModel> = models.iter().map(|m| (m.class_label.as_str(), m)).collect();
        let primary = primary_labels(&ext)?;
        let rows = (0..ext.len())
            .map(|i| {
                let class = &ext.class_names[primary[i]];
                let model = by_class
                    .get(class.as_str())
                    .ok_or_else(|| PipelineError::Runtime(format!("no detector for class {class}")))?;
                let s = model.score(&ext.images[i])?;
                Ok(ScoreRow {
                    sample_id: ext.sample_ids[i].clone(),
                    class_label: class.clone(),
                    s_rec: s.s_rec,
                    s_dis: s.s_dis,
                    s_total: s.s_total,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let table = ScoreTable {
            source_dataset: EXTERNAL.to_string(),
            rows,
        };
        table.validate().map_err(PipelineError::Runtime)?;
        write_json(&self.layout.scores(), &table)
    }

    fn cluster(&self) -> Result<()> {
        require(&self.layout.scores(), "scores", "score")?;
        let table: ScoreTable = read_json(&self.layout.scores())?;
        let manifest = read_manifest(&self.layout, EXTERNAL)?;
        let classes: Vec<&String> = manifest
            .class_names
            .iter()
            .filter(|c| table.class_rows(c).next().is_some())
            .collect();
        let (k, k_source, curves) = match self.cfg.cluster.k_override {
            Some(k) => (k, KSource::Override, vec![None; classes.len()]),
            None => {
                let curves = classes
                    .iter()
                    .map(|c| {
                        let scores: Vec<f64> = table.class_rows(c).map(|r| r.s_total).collect();
                        elbow_select_k(&scores, self.cfg.cluster.k_range, self.seed(&format!("cluster/{c}/elbow")))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let k = shared_k(&curves)?;
                (k, KSource::Elbow, curves.into_iter().map(Some).collect())
            }
        };
        info!("clustering {} classes with k = {k}", classes.len());
        let assignments = classes
            .iter()
            .zip(curves)
            .map(|(c, curve)| {
                let mut a = cluster_class(&table, c, k, self.seed(&format!("cluster/{c}")))?;
                a.distortion_curve = curve;
                Ok(a)
            })
            .collect::<Result<Vec<_>>>()?;
        write_json(
            &self.layout.clusters(),
            &ClusterArtifact {
                k,
                k_source,
                assignments,
            },
        )
    }

    fn quantify(&self) -> Result<()> {
        require(&self.layout.clusters(), "clusters", "cluster")?;
        require(&self.layout.classifier().join("classifier.json"), "classifier", "train")?;
        let clusters: ClusterArtifact = read_json(&self.layout.clusters())?;
        let g = Classifier::load(&self.layout.classifier())?;
        let ext = load_dataset(&self.layout, EXTERNAL)?;
        let test = load_dataset(&self.layout, INTERNAL_TEST)?;
        let mode = g.label_mode();
        let probs = g.predict_dataset(&ext)?;
        let internal_test = evaluate(&g, &test)?;
        let series = drop_series(&probs, &ext, &clusters.assignments, mode)?;
        let mut random_baseline = Vec::new();
        for j in 1..clusters.k {
            let entry = series.entry(&top_label(j)).expect("series covers every TOP j");
            let runs = (0..self.cfg.baseline.seeds)
                .map(|s| {
                    let seed = self.seed(&format!("baseline/{s}"));
                    let m = random_baseline_from(&probs, &ext, &entry.counts, seed, mode)?;
                    Ok(BaselineRun {
                        seed,
                        accuracy: m.accuracy,
                        macro_f1: m.macro_f1(),
                        weighted_f1: m.averages.weighted.f1,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let n = runs.len() as f64;
            let wins = runs.iter().filter(|r| r.accuracy < entry.metrics.accuracy).count();
            random_baseline.push(RandomBaseline {
                label: entry.label.clone(),
                counts: entry.counts.clone(),
                mean_accuracy: runs.iter().map(|r| r.accuracy).sum::<f64>() / n,
                mean_macro_f1: runs.iter().map(|r| r.macro_f1).sum::<f64>() / n,
                wins,
                sign_test_p: sign_test_p(wins, runs.len()),
                runs,
            });
        }
        write_json(
            &self.layout.quantification(),
            &Quantification {
                label_mode: mode,
                internal_test,
                series,
                random_baseline,
            },
        )
    }

    /// The effective OTDD settings of the full-fidelity stage.
    pub fn otdd_config(&self) -> OtddConfig {
        stage_otdd_config(self.cfg)
    }

    fn otdd(&self) -> Result<()> {
        require(&self.layout.clusters(), "clusters", "cluster")?;
        let clusters: ClusterArtifact = read_json(&self.layout.clusters())?;
        let train = load_dataset(&self.layout, INTERNAL_TRAIN)?;
        let ext = load_dataset(&self.layout, EXTERNAL)?;
        let cfg = self.otdd_config();
        let internal = OtddSide::new(LabeledFeatures::with_labels(&train, primary_labels(&train)?)?, cfg.reg)?;
        let ext_features = LabeledFeatures::with_labels(&ext, primary_labels(&ext)?)?;
        let mut scenarios = Vec::new();
        for j in (1..=clusters.k).rev() {
            let plan = DropPlan::keep(&clusters.assignments, j);
            info!("otdd for {}", top_label(j));
            let result = otdd_for_plan(&internal, &ext_features, &ext, &clusters.assignments, &plan, &cfg)?;
            scenarios.push(OtddScenario {
                label: top_label(j),
                counts: plan_counts(&clusters.assignments, &plan),
                result,
            });
        }
        let per_class = match self.cfg.is_multi_label() {
            true => Some(self.otdd_per_class(&internal.data, &ext_features, &ext, &clusters, &cfg)?),
            false => None,
        };
        write_json(&self.layout.otdd(), &OtddArtifact { config: cfg, scenarios, per_class })
    }

    /// Class quality for multi-label runs: each class's external groups
    /// against the internal samples filed under the same class.
    fn otdd_per_class(
        &self,
        internal: &LabeledFeatures,
        ext_features: &LabeledFeatures,
        ext: &Dataset,
        clusters: &ClusterArtifact,
        cfg: &OtddConfig,
    ) -> Result<BTreeMap<String, Vec<OtddScenario>>> {
        let mut out = BTreeMap::new();
        for c in &clusters.assignments {
            let label = ext
                .class_names
                .iter()
                .position(|n| n == &c.class_label)
                .ok_or_else(|| PipelineError::Inconsistent(format!("cluster class {} not in dataset", c.class_label)))?;
            let inside = OtddSide::new(internal.single_class(label), cfg.reg)?;
            if inside.data.is_empty() {
                return Err(PipelineError::Runtime(format!("no internal samples filed under {}", c.class_label)));
            }
            let mut scenarios = Vec::new();
            for j in (1..=clusters.k).rev() {
                let plan = DropPlan::keep(std::slice::from_ref(c), j);
                info!("otdd for {} {}", c.class_label, top_label(j));
                let idx = retained_indices(ext, std::slice::from_ref(c), &plan)?;
                let side = ext_features.select(&idx).single_class(label);
                scenarios.push(OtddScenario {
                    label: top_label(j),
                    counts: plan_counts(std::slice::from_ref(c), &plan),
                    result: clamped_otdd(&inside, side, cfg)?,
                });
            }
            out.insert(c.class_label.clone(), scenarios);
        }
        Ok(out)
    }

    fn report(&self) -> Result<()> {
        let l = &self.layout;
        require(&l.otdd(), "otdd", "otdd")?;
        require(&l.quantification(), "quantification", "quantify")?;
        require(&l.clusters(), "clusters", "cluster")?;
        require(&l.scores(), "scores", "score")?;
        let otdd: OtddArtifact = read_json(&l.otdd())?;
        let quantification: Quantification = read_json(&l.quantification())?;
        let clusters: ClusterArtifact = read_json(&l.clusters())?;
        let table: ScoreTable = read_json(&l.scores())?;
        let ext = load_dataset(l, EXTERNAL)?;
        let flags: Option<BTreeMap<String, bool>> = match l.flags().exists() {
            true => {
                let entries: Vec<FlagEntry> = read_json(&l.flags())?;
                Some(entries.into_iter().map(|e| (e.sample_id, e.flagged)).collect())
            }
            false => None,
        };
        let scores = summarize_scores(&table, &ext.class_names, self.cfg.cluster.histogram_bins, flags.as_ref())?;

        let mut datasets = BTreeMap::new();
        for name in [INTERNAL_TRAIN, INTERNAL_TEST, EXTERNAL] {
            datasets.insert(name.to_string(), read_manifest(l, name)?);
        }
        let mut files = vec![l.scores(), l.clusters(), l.quantification(), l.otdd()];
        for dir in [l.classifier(), l.detectors()] {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.sort();
            files.extend(entries);
        }
        let mut artifacts = BTreeMap::new();
        for f in files {
            let rel = f.strip_prefix(&l.root).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            artifacts.insert(rel, sha256_file(&f)?);
        }
        let timings: BTreeMap<String, f64> = match l.timings().exists() {
            true => read_json(&l.timings())?,
            false => BTreeMap::new(),
        };
        let report = Report {
            version: REPORT_VERSION.to_string(),
            generator: format!("shiftgate {}", env!("CARGO_PKG_VERSION")),
            config: PipelineConfig {
                out: None,
                ..self.cfg.clone()
            },
            label_mode: quantification.label_mode,
            class_names: ext.class_names.clone(),
            k: clusters.k,
            k_source: clusters.k_source,
            scores,
            clusters: clusters.assignments,
            quantification,
            otdd: keyed_otdd(&otdd.scenarios),
            otdd_per_class: otdd
                .per_class
                .as_ref()
                .map(|m| m.iter().map(|(c, s)| (c.clone(), keyed_otdd(s))).collect()),
            provenance: Provenance { datasets, artifacts },
            timings,
        };
        report.check_consistency(&ext.sample_ids)?;
        validate_schema(&serde_json::to_value(&report)?)?;

        let thumbs = l.thumbs();
        if thumbs.exists() {
            std::fs::remove_dir_all(&thumbs)?;
        }
        std::fs::create_dir_all(&thumbs)?;
        for (img, id) in ext.images.iter().zip(&ext.sample_ids) {
            std::fs::write(l.thumb(id), to_pgm(img))?;
        }
        write_json(&l.report(), &report)
    }
}

pub(crate) fn stage_otdd_config(cfg: &PipelineConfig) -> OtddConfig {
    OtddConfig {
        seed: seed::derive(cfg.seed, "otdd"),
        ..cfg.otdd.clone()
    }
}

/// OTDD between the internal side and the external samples `plan` retains.
/// The per-round sample shrinks to the smaller side when needed.
pub fn otdd_for_plan(
    internal: &OtddSide,
    ext_features: &LabeledFeatures,
    ext: &Dataset,
    clusters: &[crate::cluster::ClusterAssignment],
    plan: &DropPlan,
    cfg: &OtddConfig,
) -> Result<OtddResult> {
    let idx = retained_indices(ext, clusters, plan)?;
    clamped_otdd(internal, ext_features.select(&idx), cfg)
}

fn clamped_otdd(internal: &OtddSide, external: LabeledFeatures, cfg: &OtddConfig) -> Result<OtddResult> {
    let side = OtddSide::new(external, cfg.reg)?;
    let n = cfg.sample_per_round.min(internal.data.len()).min(side.data.len());
    let cfg = OtddConfig {
        sample_per_round: n,
        ..cfg.clone()
    };
    Ok(otdd_between(internal, &side, &cfg)?)
}

/// `P(X >= wins)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut choose = 1.0f64;
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= wins {
            tail += choose;
        }
        choose = choose * (n - i) as f64 / (i + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

fn load_sources(f: &FileData) -> Result<(Dataset, Dataset)> {
    let load = |paths: &DatasetPaths, name: &str, names: Option<&[String]>| -> Result<Dataset> {
        if paths.is_multi() {
            let names = names.expect("validated: CSV labels come with class names");
            let images = read_idx_images(&paths.images)?;
            let rows = load_labels_csv(&paths.labels, names)?;
            let ds = Dataset {
                name: name.to_string(),
                sample_ids: (0..images.len()).map(|i| format!("{name}-{i:05}")).collect(),
                images,
                labels: Labels::Multi(rows),
                class_names: names.to_vec(),
            };
            ds.validate()?;
            Ok(ds)
        } else {
            Ok(load_idx(&paths.images, &paths.labels, name, names)?)
        }
    };
    let mut internal = load(&f.internal, "internal", f.class_names.as_deref())?;
    let mut external = load(&f.external, "external", Some(&internal.class_names))?;
    if let Some(size) = f.image_size {
        internal = resize_dataset(&internal, size);
        external = resize_dataset(&external, size);
    }
    let (a, b) = (internal.image_shape(), external.image_shape());
    if a != b {
        return Err(PipelineError::Runtime(format!("internal images are {a:?} but external are {b:?}; set data.image_size")));
    }
    Ok((internal, external))
}

/// Runs one stage under the output-directory lock.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    Run::open(cfg)?.stage(stage)
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<()> {
    run_stage(cfg, Stage::Synth)
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    run_stage(cfg, Stage::Train)
}

pub fn cmd_score(cfg: &PipelineConfig) -> Result<()> {
    run_stage(cfg, Stage::Score)
}

pub fn cmd_cluster(cfg: &PipelineConfig) -> Result<()> {
    run_stage(cfg, Stage::Cluster)
}

pub fn cmd_quantify(cfg: &PipelineConfig) -> Result<()> {
    run_stage(cfg, Stage::Quantify)
}

pub fn cmd_otdd(cfg: &PipelineConfig) -> Result<()> {
    run_stage(cfg, Stage::Otdd)
}

pub fn cmd_report(cfg: &PipelineConfig) -> Result<()> {
    run_stage(cfg, Stage::Report)
}

/// Every stage in order under one lock.
pub fn cmd_all(cfg: &PipelineConfig) -> Result<()> {
    let run = Run::open(cfg)?;
    for stage in Stage::ALL {
        run.stage(stage)?;
    }
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<Report> {
    let layout = Layout::new(dir);
    require(&layout.report(), "report", "report")?;
    read_json(&layout.report())
}
