//! Multi-step operations shared by the command line and the tests: training
//! fused-feature models on a split, scoring them, the leave-one-relation-out
//! runs, single-attribute contribution runs and the end-to-end synthetic run.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{self, AnnotationError, AnnotatorRecord, GroundTruth, PersonPair, StatisticsReport};
use crate::eval::{self, EvalError, EvalMode, EvalReport, GeneralizationReport, GeneralizationRun, Task, TaskAccuracy};
use crate::featstore::{AttributeKind, FeatureError, FeatureStore, Fuser};
use crate::splits::{self, SplitError, SplitManifest, SrSplit};
use crate::svm::{self, ClassWeight, SvmConfig, SvmError, SvmModel};
use crate::synthgen::{self, SpecError, SynthSpec};
use crate::taxonomy::{Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("{0}")]
    Invalid(String),
}

impl PipelineError {
    /// File-system failures, as opposed to bad inputs.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            PipelineError::Io { .. } | PipelineError::Feature(FeatureError::Io { .. }) | PipelineError::Spec(SpecError::Io { .. })
        )
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_pairs(path: &Path) -> Result<Vec<PersonPair>> {
    Ok(annotations::parse_pairs(&read(path)?)?)
}

pub fn load_annotations(path: &Path, taxonomy: &Taxonomy, pairs: Option<&[PersonPair]>) -> Result<Vec<AnnotatorRecord>> {
    let known: Option<HashSet<String>> = pairs.map(|p| p.iter().map(|x| x.pair_id.clone()).collect());
    Ok(annotations::parse_annotations(&read(path)?, taxonomy, known.as_ref())?)
}

pub fn load_groundtruth(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<GroundTruth>> {
    Ok(annotations::parse_groundtruth(&read(path)?, taxonomy)?)
}

pub fn load_manifest(path: &Path) -> Result<SplitManifest> {
    Ok(SplitManifest::from_json(&read(path)?)?)
}

/// Every `sr-*.json` manifest in `dir`, by file name.
pub fn load_sr_manifests(dir: &Path) -> Result<Vec<SplitManifest>> {
    let entries = std::fs::read_dir(dir).map_err(|source| PipelineError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("sr-") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::Invalid(format!("no sr-*.json manifests in {}", dir.display())));
    }
    paths.iter().map(|p| load_manifest(p)).collect()
}

pub type GtIndex = BTreeMap<String, GroundTruth>;

pub fn index_groundtruth(gt: &[GroundTruth]) -> GtIndex {
    gt.iter().map(|g| (g.pair_id.clone(), g.clone())).collect()
}

pub fn agree(records: &[AnnotatorRecord], threshold: usize, taxonomy: &Taxonomy) -> Result<Vec<GroundTruth>> {
    let agreements = annotations::agree_all(records)?;
    Ok(annotations::consistency_filter(&agreements, threshold, taxonomy))
}

/// Pair id to its two identity ids.
pub fn identity_index(pairs: &[PersonPair]) -> BTreeMap<String, [String; 2]> {
    pairs
        .iter()
        .map(|p| {
            (
                p.pair_id.clone(),
                [p.person_a.identity_id.clone(), p.person_b.identity_id.clone()],
            )
        })
        .collect()
}

/// AC split with the preserved test list restricted to pairs that have a
/// consensus label. Returns the split and the dropped test ids.
pub fn ac_split(
    gt: &[GroundTruth],
    pairs: &[PersonPair],
    photo_album: &BTreeMap<String, String>,
    test_list: &[String],
    n_val_albums: usize,
    seed: u64,
) -> Result<(SplitManifest, Vec<String>)> {
    let gt_ids: HashSet<&str> = gt.iter().map(|g| g.pair_id.as_str()).collect();
    let (kept, dropped): (Vec<String>, Vec<String>) = test_list.iter().cloned().partition(|id| gt_ids.contains(id.as_str()));
    let albums = splits::album_index(pairs, photo_album)?;
    let m = splits::make_ac_split(gt, &albums, &kept, n_val_albums, seed)?;
    Ok((m, dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub seed: u64,
    /// Fixed lambda; `None` selects one on the validation split.
    pub lambda: Option<f64>,
    pub grid: Vec<f64>,
    pub class_weight: ClassWeight,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            seed: 0,
            lambda: None,
            grid: svm::LAMBDA_GRID.to_vec(),
            class_weight: ClassWeight::Uniform,
        }
    }
}

impl TrainOptions {
    fn config(&self, lambda: f64) -> SvmConfig {
        SvmConfig {
            lambda,
            epochs: self.epochs,
            seed: self.seed,
            class_weight: self.class_weight,
            ..SvmConfig::default()
        }
    }
}

/// A trained classifier together with the fusion it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub task: Task,
    pub split: String,
    pub fuser: Fuser,
    pub lambda: f64,
    /// Validation accuracy per lambda, empty when lambda was fixed.
    pub lambda_scores: Vec<(f64, f64)>,
    pub svm: SvmModel,
}

impl ModelBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(s).map_err(|e| PipelineError::Invalid(format!("bad model file: {e}")))?;
        if b.svm.dim != b.fuser.total_dim() {
            return Err(PipelineError::Invalid(format!(
                "model dimension {} does not match its fusion layout ({})",
                b.svm.dim,
                b.fuser.total_dim()
            )));
        }
        Ok(b)
    }

    pub fn predict(&self, store: &FeatureStore, ids: &[String]) -> Result<BTreeMap<String, usize>> {
        ids.par_iter()
            .map(|id| {
                let v = self.fuser.fuse(store, id)?;
                Ok((id.clone(), self.svm.predict(&v.values)?.label))
            })
            .collect()
    }
}

fn label(g: &GroundTruth, task: Task) -> usize {
    match task {
        Task::Relation => g.primary.0,
        Task::Domain | Task::Generalization => g.domain.0,
    }
}

fn labelled(gt: &GtIndex, ids: &[String], task: Task) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            gt.get(id)
                .map(|g| label(g, task))
                .ok_or_else(|| PipelineError::Invalid(format!("split pair {id} has no ground truth")))
        })
        .collect()
}

fn design(fuser: &Fuser, store: &FeatureStore, ids: &[String]) -> Result<Vec<Vec<f64>>> {
    Ok(fuser.fuse_all(store, ids)?.into_iter().map(|v| v.values).collect())
}

/// Trains on the split's train part; lambda comes from the options or is
/// selected on the validation part (smallest grid value if it is empty).
pub fn train_model(
    store: &FeatureStore,
    gt: &GtIndex,
    split: &SplitManifest,
    kinds: &[AttributeKind],
    task: Task,
    opts: &TrainOptions,
    taxonomy: &Taxonomy,
) -> Result<ModelBundle> {
    if split.train.is_empty() {
        return Err(PipelineError::Invalid(format!("split {} has an empty train set", split.name)));
    }
    let fuser = Fuser::new(&store.registry, kinds)?.fit(store, &split.train)?;
    let x = design(&fuser, store, &split.train)?;
    let y = labelled(gt, &split.train, task)?;
    let (lambda, lambda_scores) = match opts.lambda {
        Some(l) => (l, Vec::new()),
        None if split.val.is_empty() => {
            let l = opts.grid.iter().copied().fold(f64::INFINITY, f64::min);
            if !l.is_finite() {
                return Err(PipelineError::Invalid("empty lambda grid".into()));
            }
            (l, Vec::new())
        }
        None => {
            let xv = design(&fuser, store, &split.val)?;
            let yv = labelled(gt, &split.val, task)?;
            svm::select_lambda(&x, &y, &xv, &yv, &opts.grid, &opts.config(1.0))?
        }
    };
    let names = |c: usize| match task {
        Task::Relation => taxonomy.relation_name(crate::taxonomy::RelationId(c)).to_string(),
        _ => taxonomy.domain_name(crate::taxonomy::DomainId(c)).to_string(),
    };
    let model = svm::train(&x, &y, &opts.config(lambda))?.with_class_names(names);
    Ok(ModelBundle {
        task,
        split: split.name.clone(),
        fuser,
        lambda,
        lambda_scores,
        svm: model,
    })
}

/// Scores a model on the split's test part.
pub fn evaluate(
    bundle: &ModelBundle,
    store: &FeatureStore,
    gt: &[GroundTruth],
    split: &SplitManifest,
    mode: EvalMode,
    taxonomy: &Taxonomy,
) -> Result<EvalReport> {
    let pred = bundle.predict(store, &split.test)?;
    Ok(eval::accuracy(&pred, gt, &split.test, bundle.task, mode, taxonomy)?)
}

/// Relation model predictions mapped to domains and scored as a domain task.
pub fn evaluate_coarsened(
    bundle: &ModelBundle,
    store: &FeatureStore,
    gt: &[GroundTruth],
    split: &SplitManifest,
    mode: EvalMode,
    taxonomy: &Taxonomy,
) -> Result<EvalReport> {
    if bundle.task != Task::Relation {
        return Err(PipelineError::Invalid("coarsening needs a relation model".into()));
    }
    let pred = eval::coarsen(&bundle.predict(store, &split.test)?, taxonomy)?;
    Ok(eval::accuracy(&pred, gt, &split.test, Task::Domain, mode, taxonomy)?)
}

/// Trains one domain model per SR manifest and pools the held-out predictions.
pub fn generalize(
    store: &FeatureStore,
    gt: &[GroundTruth],
    manifests: &[SplitManifest],
    kinds: &[AttributeKind],
    opts: &TrainOptions,
    mode: EvalMode,
    taxonomy: &Taxonomy,
) -> Result<GeneralizationReport> {
    let index = index_groundtruth(gt);
    let predictions = manifests
        .par_iter()
        .map(|m| {
            let b = train_model(store, &index, m, kinds, Task::Domain, opts, taxonomy)?;
            b.predict(store, &m.test)
        })
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<GeneralizationRun<'_>> = manifests
        .iter()
        .zip(predictions)
        .map(|(manifest, predictions)| GeneralizationRun { manifest, predictions })
        .collect();
    Ok(eval::generalization_eval(&runs, gt, mode, taxonomy)?)
}

fn task_accuracy(
    store: &FeatureStore,
    gt: &[GroundTruth],
    index: &GtIndex,
    split: &SplitManifest,
    kinds: &[AttributeKind],
    opts: &TrainOptions,
    mode: EvalMode,
    taxonomy: &Taxonomy,
) -> Result<TaskAccuracy> {
    let mut acc = [0.0; 2];
    for (slot, task) in acc.iter_mut().zip([Task::Relation, Task::Domain]) {
        let b = train_model(store, index, split, kinds, task, opts, taxonomy)?;
        *slot = evaluate(&b, store, gt, split, mode, taxonomy)?.accuracy;
    }
    Ok(TaskAccuracy {
        relation: acc[0],
        domain: acc[1],
    })
}

/// Test accuracies of every single-attribute model and of the all-attribute
/// model, for both tasks.
pub fn attribute_accuracies(
    store: &FeatureStore,
    gt: &[GroundTruth],
    split: &SplitManifest,
    opts: &TrainOptions,
    mode: EvalMode,
    taxonomy: &Taxonomy,
) -> Result<(Vec<(AttributeKind, TaskAccuracy)>, TaskAccuracy)> {
    let index = index_groundtruth(gt);
    let kinds: Vec<AttributeKind> = store.registry.kinds().map(|(k, _)| k).collect();
    let single = kinds
        .par_iter()
        .map(|&k| Ok((k, task_accuracy(store, gt, &index, split, &[k], opts, mode, taxonomy)?)))
        .collect::<Result<Vec<_>>>()?;
    let all = task_accuracy(store, gt, &index, split, &kinds, opts, mode, taxonomy)?;
    Ok((single, all))
}

// ---------------------------------------------------------------------------
// End-to-end synthetic run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub threshold: usize,
    pub n_val_albums: usize,
    pub n_folds: usize,
    pub mode: EvalMode,
    pub train: TrainOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            threshold: 3,
            n_val_albums: splits::DEFAULT_VAL_ALBUMS,
            n_folds: splits::DEFAULT_FOLDS,
            mode: EvalMode::AnyOfSet,
            train: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub n_pairs: usize,
    pub n_groundtruth: usize,
    pub retained_fraction: f64,
    pub relation_accuracy: f64,
    /// Five-way domain classifier.
    pub domain_accuracy: f64,
    /// Relation classifier mapped to domains.
    pub domain_coarsened_accuracy: f64,
    pub generalization_accuracy: f64,
    pub generalization_macro_accuracy: f64,
    pub relation_lambda: f64,
    pub domain_lambda: f64,
}

/// Everything `run_all` produced, in memory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub statistics: StatisticsReport,
    pub groundtruth: Vec<GroundTruth>,
    pub ac: SplitManifest,
    pub sr: Vec<SrSplit>,
    pub relation_model: ModelBundle,
    pub domain_model: ModelBundle,
    pub relation_report: EvalReport,
    pub domain_report: EvalReport,
    pub coarsened_report: EvalReport,
    pub generalization: GeneralizationReport,
    pub single_accuracies: Vec<(AttributeKind, TaskAccuracy)>,
    pub all_accuracy: TaskAccuracy,
    pub contribution: Vec<eval::ContributionPoint>,
}

/// synth, agree, split, fuse, train, eval, generalize, contrib. Writes every
/// artifact under `out` when given.
pub fn run_all(spec: &SynthSpec, cfg: &RunConfig, taxonomy: &Taxonomy, out: Option<&Path>) -> Result<RunArtifacts> {
    let corpus = synthgen::generate(spec, taxonomy)?;
    let statistics = annotations::label_statistics(&corpus.records, taxonomy)?;
    let gt = agree(&corpus.records, cfg.threshold, taxonomy)?;
    let index = index_groundtruth(&gt);
    let (ac, _) = ac_split(&gt, &corpus.pairs, &corpus.photo_album, &corpus.test_pairs, cfg.n_val_albums, spec.seed)?;
    let sr = splits::make_sr_splits(&gt, &identity_index(&corpus.pairs), taxonomy, cfg.n_folds, spec.seed)?;
    let sr_manifests: Vec<SplitManifest> = sr.iter().map(|s| s.manifest.clone()).collect();

    let store = &corpus.store;
    let all_kinds = AttributeKind::ALL.to_vec();
    let opts = TrainOptions {
        seed: spec.seed,
        ..cfg.train.clone()
    };
    let relation_model = train_model(store, &index, &ac, &all_kinds, Task::Relation, &opts, taxonomy)?;
    let domain_model = train_model(store, &index, &ac, &all_kinds, Task::Domain, &opts, taxonomy)?;
    let relation_report = evaluate(&relation_model, store, &gt, &ac, cfg.mode, taxonomy)?;
    let domain_report = evaluate(&domain_model, store, &gt, &ac, cfg.mode, taxonomy)?;
    let coarsened_report = evaluate_coarsened(&relation_model, store, &gt, &ac, cfg.mode, taxonomy)?;
    let generalization = generalize(store, &gt, &sr_manifests, &all_kinds, &opts, cfg.mode, taxonomy)?;
    let (single_accuracies, all_accuracy) = attribute_accuracies(store, &gt, &ac, &opts, cfg.mode, taxonomy)?;
    let contribution = eval::contribution_points(&single_accuracies, all_accuracy)?;

    let summary = RunSummary {
        seed: spec.seed,
        n_pairs: corpus.pairs.len(),
        n_groundtruth: gt.len(),
        retained_fraction: statistics.retained_fraction(cfg.threshold),
        relation_accuracy: relation_report.accuracy,
        domain_accuracy: domain_report.accuracy,
        domain_coarsened_accuracy: coarsened_report.accuracy,
        generalization_accuracy: generalization.pooled.accuracy,
        generalization_macro_accuracy: generalization.macro_accuracy,
        relation_lambda: relation_model.lambda,
        domain_lambda: domain_model.lambda,
    };
    let artifacts = RunArtifacts {
        summary,
        statistics,
        groundtruth: gt,
        ac,
        sr,
        relation_model,
        domain_model,
        relation_report,
        domain_report,
        coarsened_report,
        generalization,
        single_accuracies,
        all_accuracy,
        contribution,
    };
    if let Some(dir) = out {
        corpus.write_dir(dir, taxonomy)?;
        write_artifacts(dir, &artifacts, taxonomy)?;
    }
    Ok(artifacts)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes") + "\n"
}

fn write_artifacts(dir: &Path, a: &RunArtifacts, taxonomy: &Taxonomy) -> Result<()> {
    write(&dir.join("groundtruth.tsv"), annotations::write_groundtruth(&a.groundtruth, taxonomy))?;
    write(&dir.join("stats.json"), a.statistics.to_json() + "\n")?;
    write(&dir.join("stats.txt"), a.statistics.render_text())?;
    write(&dir.join("splits/ac.json"), a.ac.to_json() + "\n")?;
    for s in &a.sr {
        write(&dir.join(format!("splits/{}.json", s.manifest.name)), s.manifest.to_json() + "\n")?;
    }
    write(&dir.join("splits/sr_folds.json"), json(&a.sr.iter().map(sr_info).collect::<Vec<_>>()))?;
    write(&dir.join("models/relation.json"), a.relation_model.to_json() + "\n")?;
    write(&dir.join("models/domain.json"), a.domain_model.to_json() + "\n")?;
    for (name, r) in [
        ("relation", &a.relation_report),
        ("domain", &a.domain_report),
        ("domain_coarsened", &a.coarsened_report),
    ] {
        write(&dir.join(format!("reports/{name}.json")), r.to_json() + "\n")?;
        write(&dir.join(format!("reports/{name}.txt")), r.render_text())?;
    }
    write(&dir.join("reports/generalization.json"), a.generalization.to_json() + "\n")?;
    write(&dir.join("reports/generalization.txt"), a.generalization.render_text())?;
    write(
        &dir.join("reports/attribute_accuracy.tsv"),
        eval::write_accuracy_table(&a.single_accuracies, a.all_accuracy),
    )?;
    write(&dir.join("reports/contribution.tsv"), eval::write_contribution_tsv(&a.contribution))?;
    write(&dir.join("summary.json"), json(&a.summary))
}

/// Fold bookkeeping of an SR split, without the pair lists.
pub fn sr_info(s: &SrSplit) -> serde_json::Value {
    serde_json::json!({
        "name": s.manifest.name,
        "fold_sizes": s.fold_sizes,
        "val_fold": s.val_fold,
        "n_train": s.manifest.train.len(),
        "n_val": s.manifest.val.len(),
        "n_test": s.manifest.test.len(),
        "discarded": s.discarded.len(),
    })
}
