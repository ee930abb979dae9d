//! `relscope` command line.
//!
//! Every subcommand reads its inputs from flags, falling back to the JSON
//! config file and then to the standard file names inside the output
//! directory, so that `synth`, `agree`, `split-ac` ... can be chained with a
//! single `--out`. The output directory is taken from `--out`, then
//! `RELSCOPE_OUT`, then the config file, then `relscope_out`.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 file-system error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::annotations;
use crate::eval::{self, EvalMode, Task};
use crate::featstore::{self, AttributeKind, FeatureStore, Fuser};
use crate::pipeline::{self, ModelBundle, PipelineError, RunConfig, TrainOptions};
use crate::splits;
use crate::svm::ClassWeight;
use crate::synthgen::{self, SynthSpec};
use crate::taxonomy::Taxonomy;

pub const OUT_ENV: &str = "RELSCOPE_OUT";
pub const DEFAULT_OUT: &str = "relscope_out";

#[derive(Debug, Parser)]
#[command(name = "relscope", version, about = "Social-relation recognition benchmark pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON config file with defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Taxonomy manifest replacing the builtin one.
    #[arg(long, global = true)]
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute agreement and write consensus ground truth.
    Agree(AgreeArgs),
    /// Label statistics of an annotation file.
    Stats(StatsArgs),
    /// All-class split with album-level validation.
    SplitAc(SplitAcArgs),
    /// Leave-one-relation-out splits.
    SplitSr(SplitSrArgs),
    /// Write standardized fused vectors of a split.
    Fuse(FuseArgs),
    /// Train a one-vs-rest linear SVM on a split.
    Train(TrainArgs),
    /// Score a trained model on a split's test pairs.
    Eval(EvalArgs),
    /// Domain generalization over all SR splits.
    Generalize(GeneralizeArgs),
    /// Attribute contribution coordinates.
    Contrib(ContribArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// synth, agree, split, fuse, train, eval, generalize and contrib.
    RunAll(RunAllArgs),
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Pair file; when given, annotations of unknown pairs are rejected.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitAcArgs {
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// `photo_id album_id` TSV.
    #[arg(long)]
    pub albums: Option<PathBuf>,
    /// Preserved test pair ids, one per line.
    #[arg(long)]
    pub test_list: Option<PathBuf>,
    #[arg(long)]
    pub val_albums: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitSrArgs {
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    /// Feature directory holding manifest.json.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Split manifest.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// `all` or a comma-separated list of attribute kinds.
    #[arg(long)]
    pub kinds: Option<String>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Fixed regularization weight; selected on validation when absent.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_parser = ["uniform", "balanced"])]
    pub class_weight: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    #[arg(long, value_parser = ["relation", "domain"])]
    pub task: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    #[arg(long, value_parser = ["any-of-set", "strict"])]
    pub eval_mode: Option<String>,
    /// Map a relation model's predictions to domains before scoring.
    #[arg(long)]
    pub coarsen: bool,
}

#[derive(Debug, Args)]
pub struct GeneralizeArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Directory with the sr-*.json manifests.
    #[arg(long)]
    pub splits_dir: Option<PathBuf>,
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    #[arg(long)]
    pub kinds: Option<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_parser = ["any-of-set", "strict"])]
    pub eval_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct ContribArgs {
    /// `attribute relation domain` accuracy table with an `all` row. When
    /// absent, accuracies are measured by training every single-attribute
    /// model on the split.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_parser = ["any-of-set", "strict"])]
    pub eval_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    /// JSON synthetic spec; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n_pairs: Option<usize>,
    #[arg(long)]
    pub annotators: Option<usize>,
    /// Annotator noise rate.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Prototype margin in noise standard deviations.
    #[arg(long)]
    pub margin: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
}

#[derive(Debug, Args)]
pub struct RunAllArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub threshold: Option<usize>,
    #[arg(long)]
    pub val_albums: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_parser = ["any-of-set", "strict"])]
    pub eval_mode: Option<String>,
}

/// Keys accepted in the `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub taxonomy: Option<PathBuf>,
    pub threshold: Option<usize>,
    pub val_albums: Option<usize>,
    pub folds: Option<usize>,
    pub epochs: Option<usize>,
    pub lambda: Option<f64>,
    pub class_weight: Option<String>,
    pub eval_mode: Option<String>,
    pub task: Option<String>,
    pub kinds: Option<String>,
    pub pairs: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub groundtruth: Option<PathBuf>,
    pub albums: Option<PathBuf>,
    pub test_list: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub splits_dir: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub spec: Option<PathBuf>,
}

struct Ctx {
    out: PathBuf,
    seed: u64,
    taxonomy: Taxonomy,
    cfg: ConfigFile,
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Invalid(msg.into())
}

impl Ctx {
    fn path(&self, flag: &Option<PathBuf>, key: &Option<PathBuf>, default: &str) -> PathBuf {
        flag.clone()
            .or_else(|| key.clone())
            .unwrap_or_else(|| self.out.join(default))
    }

    fn threshold(&self, flag: Option<usize>) -> Result<usize, PipelineError> {
        let t = flag.or(self.cfg.threshold).unwrap_or(3);
        if !(1..=5).contains(&t) {
            return Err(invalid(format!("threshold must lie in 1..=5, got {t}")));
        }
        Ok(t)
    }

    fn mode(&self, flag: &Option<String>) -> Result<EvalMode, PipelineError> {
        flag.as_deref()
            .or(self.cfg.eval_mode.as_deref())
            .map_or(Ok(EvalMode::AnyOfSet), |s| s.parse().map_err(PipelineError::from))
    }

    fn kinds(&self, flag: &Option<String>) -> Result<Vec<AttributeKind>, PipelineError> {
        Ok(featstore::parse_kinds(
            flag.as_deref().or(self.cfg.kinds.as_deref()).unwrap_or("all"),
        )?)
    }

    fn train_options(&self, s: &SolverArgs) -> Result<TrainOptions, PipelineError> {
        let epochs = s.epochs.or(self.cfg.epochs).unwrap_or(30);
        if epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        let lambda = s.lambda.or(self.cfg.lambda);
        if let Some(l) = lambda {
            if !(l.is_finite() && l > 0.0) {
                return Err(invalid(format!("lambda must be positive, got {l}")));
            }
        }
        let class_weight = match s.class_weight.as_deref().or(self.cfg.class_weight.as_deref()) {
            None | Some("uniform") => ClassWeight::Uniform,
            Some("balanced") => ClassWeight::Balanced,
            Some(other) => return Err(invalid(format!("unknown class weight {other:?}"))),
        };
        Ok(TrainOptions {
            epochs,
            seed: self.seed,
            lambda,
            class_weight,
            ..TrainOptions::default()
        })
    }

    fn spec(&self, a: &SpecArgs) -> Result<SynthSpec, PipelineError> {
        let mut spec = match a.spec.as_ref().or(self.cfg.spec.as_ref()) {
            Some(p) => serde_json::from_str(&pipeline::read(p)?)
                .map_err(|e| invalid(format!("{}: bad synthetic spec: {e}", p.display())))?,
            None => SynthSpec::default(),
        };
        if let Some(n) = a.n_pairs {
            spec.n_pairs = n;
        }
        if let Some(n) = a.annotators {
            spec.n_annotators = n;
        }
        if let Some(e) = a.noise {
            spec.noise = e;
        }
        if let Some(d) = a.margin {
            spec.margin = d;
        }
        spec.seed = self.seed;
        Ok(spec)
    }

    fn write(&self, rel: &str, text: impl AsRef<[u8]>) -> Result<PathBuf, PipelineError> {
        let p = self.out.join(rel);
        pipeline::write(&p, text)?;
        Ok(p)
    }
}

fn build_ctx(g: &Global) -> Result<Ctx, PipelineError> {
    let cfg: ConfigFile = match &g.config {
        Some(p) => serde_json::from_str(&pipeline::read(p)?)
            .map_err(|e| invalid(format!("{}: bad config: {e}", p.display())))?,
        None => ConfigFile::default(),
    };
    let out = g
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let taxonomy = match g.taxonomy.as_ref().or(cfg.taxonomy.as_ref()) {
        Some(p) => Taxonomy::from_json(&pipeline::read(p)?)?,
        None => Taxonomy::builtin(),
    };
    Ok(Ctx {
        out,
        seed: g.seed.or(cfg.seed).unwrap_or(0),
        taxonomy,
        cfg,
    })
}

fn load_store(ctx: &Ctx, flag: &Option<PathBuf>) -> Result<FeatureStore, PipelineError> {
    let dir = ctx.path(flag, &ctx.cfg.features, synthgen::FEATURES_DIR);
    Ok(FeatureStore::load_dir(&dir)?)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes") + "\n"
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("split").to_string()
}

fn execute(cmd: &Command, ctx: &Ctx) -> Result<(), PipelineError> {
    let tax = &ctx.taxonomy;
    let cfg = &ctx.cfg;
    match cmd {
        Command::Agree(a) => {
            let threshold = ctx.threshold(a.threshold)?;
            let pairs = match a.pairs.as_ref().or(cfg.pairs.as_ref()) {
                Some(p) => Some(pipeline::load_pairs(p)?),
                None => None,
            };
            let ann = ctx.path(&a.annotations, &cfg.annotations, synthgen::ANNOTATIONS_FILE);
            let records = pipeline::load_annotations(&ann, tax, pairs.as_deref())?;
            let agreements = annotations::agree_all(&records)?;
            let gt = annotations::consistency_filter(&agreements, threshold, tax);
            let n_pairs = agreements.len();
            let retained = if n_pairs == 0 { 0.0 } else { gt.len() as f64 / n_pairs as f64 };
            let path = ctx.write("groundtruth.tsv", annotations::write_groundtruth(&gt, tax))?;
            ctx.write(
                "agreement.json",
                json(&serde_json::json!({
                    "threshold": threshold,
                    "n_pairs": n_pairs,
                    "n_skipped": agreements.iter().filter(|a| a.rated().is_none()).count(),
                    "n_retained": gt.len(),
                    "retained_fraction": retained,
                    "n_cross_domain": gt.iter().filter(|g| g.cross_domain).count(),
                })),
            )?;
            println!("retained {}/{} pairs at agr >= {threshold} (fraction {retained})", gt.len(), n_pairs);
            println!("wrote {}", path.display());
        }
        Command::Stats(a) => {
            let threshold = ctx.threshold(a.threshold)?;
            let ann = ctx.path(&a.annotations, &cfg.annotations, synthgen::ANNOTATIONS_FILE);
            let records = pipeline::load_annotations(&ann, tax, None)?;
            let report = annotations::label_statistics(&records, tax)?;
            ctx.write("stats.json", report.to_json() + "\n")?;
            ctx.write("stats.txt", report.render_text())?;
            print!("{}", report.render_text());
            println!("retained at agr >= {threshold}: {}%", annotations::pct(report.retained_fraction(threshold)));
        }
        Command::SplitAc(a) => {
            let gt = pipeline::load_groundtruth(&ctx.path(&a.groundtruth, &cfg.groundtruth, "groundtruth.tsv"), tax)?;
            let pairs = pipeline::load_pairs(&ctx.path(&a.pairs, &cfg.pairs, synthgen::PAIRS_FILE))?;
            let albums = splits::parse_albums(&pipeline::read(&ctx.path(&a.albums, &cfg.albums, synthgen::ALBUMS_FILE))?)?;
            let test = splits::parse_id_list(&pipeline::read(&ctx.path(
                &a.test_list,
                &cfg.test_list,
                synthgen::TEST_LIST_FILE,
            ))?);
            let n_val = a.val_albums.or(cfg.val_albums).unwrap_or(splits::DEFAULT_VAL_ALBUMS);
            let (m, dropped) = pipeline::ac_split(&gt, &pairs, &albums, &test, n_val, ctx.seed)?;
            let path = ctx.write("splits/ac.json", m.to_json() + "\n")?;
            println!(
                "train {} val {} test {} ({} listed test pairs without consensus dropped)",
                m.train.len(),
                m.val.len(),
                m.test.len(),
                dropped.len()
            );
            println!("wrote {}", path.display());
        }
        Command::SplitSr(a) => {
            let gt = pipeline::load_groundtruth(&ctx.path(&a.groundtruth, &cfg.groundtruth, "groundtruth.tsv"), tax)?;
            let pairs = pipeline::load_pairs(&ctx.path(&a.pairs, &cfg.pairs, synthgen::PAIRS_FILE))?;
            let folds = a.folds.or(cfg.folds).unwrap_or(splits::DEFAULT_FOLDS);
            let sr = splits::make_sr_splits(&gt, &pipeline::identity_index(&pairs), tax, folds, ctx.seed)?;
            for s in &sr {
                ctx.write(&format!("splits/{}.json", s.manifest.name), s.manifest.to_json() + "\n")?;
                println!(
                    "{}: train {} val {} test {} discarded {}",
                    s.manifest.name,
                    s.manifest.train.len(),
                    s.manifest.val.len(),
                    s.manifest.test.len(),
                    s.discarded.len()
                );
            }
            ctx.write("splits/sr_folds.json", json(&sr.iter().map(pipeline::sr_info).collect::<Vec<_>>()))?;
        }
        Command::Fuse(a) => {
            let store = load_store(ctx, &a.features.features)?;
            let split_path = ctx.path(&a.features.split, &cfg.split, "splits/ac.json");
            let split = pipeline::load_manifest(&split_path)?;
            let fuser = Fuser::new(&store.registry, &ctx.kinds(&a.features.kinds)?)?.fit(&store, &split.train)?;
            let ids: Vec<String> = split.train.iter().chain(&split.val).chain(&split.test).cloned().collect();
            let rows = fuser.fuse_all(&store, &ids)?;
            let name = stem(&split_path);
            let path = ctx.write(&format!("fused/{name}.tsv"), featstore::write_fused(&rows))?;
            ctx.write(&format!("fused/{name}.fuser.json"), json(&fuser))?;
            println!("fused {} pairs into {} dims", rows.len(), fuser.total_dim());
            println!("wrote {}", path.display());
        }
        Command::Train(a) => {
            let store = load_store(ctx, &a.features.features)?;
            let split = pipeline::load_manifest(&ctx.path(&a.features.split, &cfg.split, "splits/ac.json"))?;
            let gt = pipeline::load_groundtruth(&ctx.path(&a.groundtruth, &cfg.groundtruth, "groundtruth.tsv"), tax)?;
            let task: Task = a.task.as_deref().or(cfg.task.as_deref()).unwrap_or("relation").parse()?;
            let opts = ctx.train_options(&a.solver)?;
            let b = pipeline::train_model(
                &store,
                &pipeline::index_groundtruth(&gt),
                &split,
                &ctx.kinds(&a.features.kinds)?,
                task,
                &opts,
                tax,
            )?;
            let path = ctx.write(&format!("models/{task}.json"), b.to_json() + "\n")?;
            println!("trained {task} model on {} pairs, lambda {}", split.train.len(), b.lambda);
            println!("wrote {}", path.display());
        }
        Command::Eval(a) => {
            let store = load_store(ctx, &a.features.features)?;
            let split = pipeline::load_manifest(&ctx.path(&a.features.split, &cfg.split, "splits/ac.json"))?;
            let gt = pipeline::load_groundtruth(&ctx.path(&a.groundtruth, &cfg.groundtruth, "groundtruth.tsv"), tax)?;
            let model = ModelBundle::from_json(&pipeline::read(&ctx.path(&a.model, &cfg.model, "models/relation.json"))?)?;
            let mode = ctx.mode(&a.eval_mode)?;
            let (report, name) = if a.coarsen {
                (
                    pipeline::evaluate_coarsened(&model, &store, &gt, &split, mode, tax)?,
                    "domain_coarsened".to_string(),
                )
            } else {
                (pipeline::evaluate(&model, &store, &gt, &split, mode, tax)?, model.task.to_string())
            };
            ctx.write(&format!("reports/{name}.json"), report.to_json() + "\n")?;
            ctx.write(&format!("reports/{name}.txt"), report.render_text())?;
            print!("{}", report.render_text());
        }
        Command::Generalize(a) => {
            let store = load_store(ctx, &a.features)?;
            let dir = ctx.path(&a.splits_dir, &cfg.splits_dir, "splits");
            let manifests = pipeline::load_sr_manifests(&dir)?;
            let gt = pipeline::load_groundtruth(&ctx.path(&a.groundtruth, &cfg.groundtruth, "groundtruth.tsv"), tax)?;
            let report = pipeline::generalize(
                &store,
                &gt,
                &manifests,
                &ctx.kinds(&a.kinds)?,
                &ctx.train_options(&a.solver)?,
                ctx.mode(&a.eval_mode)?,
                tax,
            )?;
            ctx.write("reports/generalization.json", report.to_json() + "\n")?;
            ctx.write("reports/generalization.txt", report.render_text())?;
            print!("{}", report.render_text());
        }
        Command::Contrib(a) => {
            let (single, all) = match &a.table {
                Some(t) => eval::parse_accuracy_table(&pipeline::read(t)?)?,
                None => {
                    let store = load_store(ctx, &a.features)?;
                    let split = pipeline::load_manifest(&ctx.path(&a.split, &cfg.split, "splits/ac.json"))?;
                    let gt =
                        pipeline::load_groundtruth(&ctx.path(&a.groundtruth, &cfg.groundtruth, "groundtruth.tsv"), tax)?;
                    let r = pipeline::attribute_accuracies(
                        &store,
                        &gt,
                        &split,
                        &ctx.train_options(&a.solver)?,
                        ctx.mode(&a.eval_mode)?,
                        tax,
                    )?;
                    ctx.write("reports/attribute_accuracy.tsv", eval::write_accuracy_table(&r.0, r.1))?;
                    r
                }
            };
            let points = eval::contribution_points(&single, all)?;
            let path = ctx.write("reports/contribution.tsv", eval::write_contribution_tsv(&points))?;
            for p in &points {
                println!("{:<16} x {:.3}  y {:.3}", p.attribute.name(), p.x, p.y);
            }
            println!("wrote {}", path.display());
        }
        Command::Synth(a) => {
            let spec = ctx.spec(&a.spec)?;
            let corpus = synthgen::generate(&spec, tax)?;
            corpus.write_dir(&ctx.out, tax)?;
            println!(
                "generated {} pairs, {} annotator records, {} test pairs in {}",
                corpus.pairs.len(),
                corpus.records.len(),
                corpus.test_pairs.len(),
                ctx.out.display()
            );
        }
        Command::RunAll(a) => {
            let spec = ctx.spec(&a.spec)?;
            let run = RunConfig {
                threshold: ctx.threshold(a.threshold)?,
                n_val_albums: a.val_albums.or(cfg.val_albums).unwrap_or(splits::DEFAULT_VAL_ALBUMS),
                n_folds: a.folds.or(cfg.folds).unwrap_or(splits::DEFAULT_FOLDS),
                mode: ctx.mode(&a.eval_mode)?,
                train: ctx.train_options(&a.solver)?,
            };
            let art = pipeline::run_all(&spec, &run, tax, Some(&ctx.out))?;
            let s = &art.summary;
            println!("relation accuracy        {:.4}", s.relation_accuracy);
            println!("domain accuracy          {:.4}", s.domain_accuracy);
            println!("domain (coarsened)       {:.4}", s.domain_coarsened_accuracy);
            println!("generalization accuracy  {:.4}", s.generalization_accuracy);
            println!("wrote {}", ctx.out.display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = build_ctx(&cli.global).and_then(|ctx| execute(&cli.command, &ctx));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}
