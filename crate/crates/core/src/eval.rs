//! Recognition accuracy, leave-one-relation-out generalization and attribute
//! contribution coordinates.
//!
//! A prediction counts as correct when it belongs to the pair's consensus set
//! (any-of-set, the default) or, in strict mode, only when it equals the
//! primary relation. In the confusion matrix, a correct prediction sits on the
//! diagonal and a wrong one is charged against the primary label.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::GroundTruth;
use crate::featstore::AttributeKind;
use crate::splits::{SplitKind, SplitManifest};
use crate::taxonomy::{RelationId, Taxonomy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no prediction for pair {0}")]
    MissingPrediction(String),
    #[error("no ground truth for pair {0}")]
    MissingTruth(String),
    #[error("label {label} out of range for {n} classes (pair {pair_id})")]
    BadLabel { pair_id: String, label: usize, n: usize },
    #[error("run mismatch: {0}")]
    Mismatch(String),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    #[default]
    AnyOfSet,
    Strict,
}

impl FromStr for EvalMode {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "any-of-set" => Ok(EvalMode::AnyOfSet),
            "strict" => Ok(EvalMode::Strict),
            _ => Err(EvalError::Input(format!("unknown eval mode {s:?} (any-of-set|strict)"))),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::AnyOfSet => "any-of-set",
            EvalMode::Strict => "strict",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Relation,
    Domain,
    Generalization,
}

impl Task {
    fn is_domain(self) -> bool {
        !matches!(self, Task::Relation)
    }
}

impl FromStr for Task {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relation" => Ok(Task::Relation),
            "domain" => Ok(Task::Domain),
            _ => Err(EvalError::Input(format!("unknown task {s:?} (relation|domain)"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Relation => "relation",
            Task::Domain => "domain",
            Task::Generalization => "generalization",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl ClassScore {
    fn new(n: usize, correct: usize) -> Self {
        Self {
            n,
            correct,
            accuracy: ratio(correct, n),
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub mode: EvalMode,
    pub accuracy: f64,
    pub n_test: usize,
    pub n_correct: usize,
    pub class_names: Vec<String>,
    /// Keyed by effective true class, only classes with test pairs.
    pub per_class: BTreeMap<String, ClassScore>,
    /// `confusion[true][predicted]`, indexed like `class_names`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    fn empty(task: Task, mode: EvalMode, class_names: Vec<String>) -> Self {
        let n = class_names.len();
        Self {
            task,
            mode,
            accuracy: 0.0,
            n_test: 0,
            n_correct: 0,
            class_names,
            per_class: BTreeMap::new(),
            confusion: vec![vec![0; n]; n],
        }
    }

    fn record(&mut self, truth: &BTreeSet<usize>, primary: usize, pred: usize) {
        let correct = match self.mode {
            EvalMode::AnyOfSet => truth.contains(&pred),
            EvalMode::Strict => pred == primary,
        };
        let effective = if correct { pred } else { primary };
        self.confusion[effective][pred] += 1;
        self.n_test += 1;
        self.n_correct += usize::from(correct);
    }

    fn finish(mut self) -> Self {
        self.accuracy = ratio(self.n_correct, self.n_test);
        self.per_class = self
            .confusion
            .iter()
            .enumerate()
            .filter_map(|(i, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| (self.class_names[i].clone(), ClassScore::new(n, row[i])))
            })
            .collect();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned-column summary: overall line, per-class table, confusion matrix.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "task {}  mode {}  accuracy {:.4}  ({}/{})",
            self.task, self.mode, self.accuracy, self.n_correct, self.n_test
        );
        let width = self.class_names.iter().map(String::len).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>8}", "class", "n", "accuracy");
        for (name, s) in &self.per_class {
            let _ = writeln!(out, "{name:<width$}  {:>6}  {:>8.4}", s.n, s.accuracy);
        }
        let _ = writeln!(out, "confusion (rows true, columns predicted)");
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            let _ = write!(out, "{name:<width$}");
            for c in row {
                let _ = write!(out, " {c:>4}");
            }
            out.push('\n');
        }
        out
    }
}

fn truth_labels(g: &GroundTruth, task: Task, taxonomy: &Taxonomy) -> (BTreeSet<usize>, usize) {
    if task.is_domain() {
        (
            g.relations.iter().map(|&r| taxonomy.domain_of(r).0).collect(),
            g.domain.0,
        )
    } else {
        (g.relations.iter().map(|r| r.0).collect(), g.primary.0)
    }
}

fn class_names(task: Task, taxonomy: &Taxonomy) -> Vec<String> {
    if task.is_domain() {
        taxonomy.domain_names()
    } else {
        taxonomy.relation_names()
    }
}

fn index_gt(gt: &[GroundTruth]) -> BTreeMap<&str, &GroundTruth> {
    gt.iter().map(|g| (g.pair_id.as_str(), g)).collect()
}

fn score_into(
    report: &mut EvalReport,
    predictions: &BTreeMap<String, usize>,
    gt: &BTreeMap<&str, &GroundTruth>,
    test_ids: &[String],
    taxonomy: &Taxonomy,
) -> Result<(), EvalError> {
    let n = report.class_names.len();
    for id in test_ids {
        let g = gt.get(id.as_str()).ok_or_else(|| EvalError::MissingTruth(id.clone()))?;
        let &pred = predictions
            .get(id)
            .ok_or_else(|| EvalError::MissingPrediction(id.clone()))?;
        if pred >= n {
            return Err(EvalError::BadLabel {
                pair_id: id.clone(),
                label: pred,
                n,
            });
        }
        let (truth, primary) = truth_labels(g, report.task, taxonomy);
        report.record(&truth, primary, pred);
    }
    Ok(())
}

/// Scores `predictions` (relation or domain ids, by `task`) on `test_ids`.
pub fn accuracy(
    predictions: &BTreeMap<String, usize>,
    gt: &[GroundTruth],
    test_ids: &[String],
    task: Task,
    mode: EvalMode,
    taxonomy: &Taxonomy,
) -> Result<EvalReport, EvalError> {
    let mut report = EvalReport::empty(task, mode, class_names(task, taxonomy));
    score_into(&mut report, predictions, &index_gt(gt), test_ids, taxonomy)?;
    Ok(report.finish())
}

/// Maps relation predictions to their domains.
pub fn coarsen(predictions: &BTreeMap<String, usize>, taxonomy: &Taxonomy) -> Result<BTreeMap<String, usize>, EvalError> {
    predictions
        .iter()
        .map(|(id, &r)| {
            if r >= taxonomy.n_relations() {
                return Err(EvalError::BadLabel {
                    pair_id: id.clone(),
                    label: r,
                    n: taxonomy.n_relations(),
                });
            }
            Ok((id.clone(), taxonomy.domain_of(RelationId(r)).0))
        })
        .collect()
}

/// Domain predictions of one SR run, on that run's test pairs.
#[derive(Debug, Clone)]
pub struct GeneralizationRun<'a> {
    pub manifest: &'a SplitManifest,
    pub predictions: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    /// Pooled over every run's test pairs (micro-average).
    pub pooled: EvalReport,
    /// Mean of the per-run accuracies.
    pub macro_accuracy: f64,
    pub per_held_out: BTreeMap<String, ClassScore>,
}

impl GeneralizationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut out = self.pooled.render_text();
        let _ = writeln!(out, "macro accuracy {:.4}", self.macro_accuracy);
        let width = self.per_held_out.keys().map(String::len).max().unwrap_or(8).max(8);
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>8}", "held-out", "n", "accuracy");
        for (name, s) in &self.per_held_out {
            let _ = writeln!(out, "{name:<width$}  {:>6}  {:>8.4}", s.n, s.accuracy);
        }
        out
    }
}

pub fn generalization_eval(
    runs: &[GeneralizationRun<'_>],
    gt: &[GroundTruth],
    mode: EvalMode,
    taxonomy: &Taxonomy,
) -> Result<GeneralizationReport, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::Mismatch("no runs".into()));
    }
    let index = index_gt(gt);
    let task = Task::Generalization;
    let mut pooled = EvalReport::empty(task, mode, class_names(task, taxonomy));
    let mut per_held_out = BTreeMap::new();
    for run in runs {
        let m = run.manifest;
        if m.kind != SplitKind::SR {
            return Err(EvalError::Mismatch(format!("split {} is not a single-relation split", m.name)));
        }
        let held = m
            .held_out
            .clone()
            .ok_or_else(|| EvalError::Mismatch(format!("split {} has no held-out relation", m.name)))?;
        let test: BTreeSet<&String> = m.test.iter().collect();
        if let Some(extra) = run.predictions.keys().find(|k| !test.contains(k)) {
            return Err(EvalError::Mismatch(format!(
                "split {}: prediction for {extra}, which is not in its test set",
                m.name
            )));
        }
        let mut one = EvalReport::empty(task, mode, pooled.class_names.clone());
        score_into(&mut one, &run.predictions, &index, &m.test, taxonomy).map_err(|e| match e {
            EvalError::MissingPrediction(id) => {
                EvalError::Mismatch(format!("split {}: no prediction for test pair {id}", m.name))
            }
            other => other,
        })?;
        if per_held_out
            .insert(held.clone(), ClassScore::new(one.n_test, one.n_correct))
            .is_some()
        {
            return Err(EvalError::Mismatch(format!("relation {held} held out by two runs")));
        }
        for (prow, orow) in pooled.confusion.iter_mut().zip(&one.confusion) {
            for (p, o) in prow.iter_mut().zip(orow) {
                *p += o;
            }
        }
        pooled.n_test += one.n_test;
        pooled.n_correct += one.n_correct;
    }
    let macro_accuracy = per_held_out.values().map(|s| s.accuracy).sum::<f64>() / per_held_out.len() as f64;
    Ok(GeneralizationReport {
        pooled: pooled.finish(),
        macro_accuracy,
        per_held_out,
    })
}

// ---------------------------------------------------------------------------
// Contribution points

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub relation: f64,
    pub domain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContributionPoint {
    pub attribute: AttributeKind,
    /// Domain accuracy relative to the all-attribute model.
    pub x: f64,
    /// Relation accuracy relative to the all-attribute model.
    pub y: f64,
}

fn check_acc(v: f64, what: &str) -> Result<(), EvalError> {
    if v.is_finite() && v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::Input(format!("{what} accuracy {v} is outside (0, 1]")))
    }
}

pub fn contribution_points(
    single: &[(AttributeKind, TaskAccuracy)],
    all: TaskAccuracy,
) -> Result<Vec<ContributionPoint>, EvalError> {
    check_acc(all.relation, "all-attribute relation")?;
    check_acc(all.domain, "all-attribute domain")?;
    single
        .iter()
        .map(|&(attribute, acc)| {
            check_acc(acc.relation, &format!("{attribute} relation"))?;
            check_acc(acc.domain, &format!("{attribute} domain"))?;
            Ok(ContributionPoint {
                attribute,
                x: acc.domain / all.domain,
                y: acc.relation / all.relation,
            })
        })
        .collect()
}

pub fn write_contribution_tsv(points: &[ContributionPoint]) -> String {
    let mut out = String::from("attribute\tx\ty\n");
    for p in points {
        let _ = writeln!(out, "{}\t{}\t{}", p.attribute, p.x, p.y);
    }
    out
}

pub const ACCURACY_TABLE_HEADER: &str = "attribute\trelation\tdomain";

fn parse_acc(field: &str) -> Option<f64> {
    let f = field.trim();
    match f.strip_suffix('%') {
        Some(p) => p.trim().parse::<f64>().ok().map(|v| v / 100.0),
        None => f.parse().ok(),
    }
}

/// Parses `attribute relation domain` rows; one row must be named `all`.
/// Values are fractions, or percentages with a `%` suffix.
pub fn parse_accuracy_table(text: &str) -> Result<(Vec<(AttributeKind, TaskAccuracy)>, TaskAccuracy), EvalError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == ACCURACY_TABLE_HEADER => {}
        _ => {
            return Err(EvalError::Input(format!(
                "accuracy table: line 1: expected header {ACCURACY_TABLE_HEADER:?}"
            )))
        }
    }
    let mut single = Vec::new();
    let mut all = None;
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let err = |m: &str| EvalError::Input(format!("accuracy table: line {}: {m}", i + 1));
        let f: Vec<&str> = line.trim_end().split('\t').collect();
        if f.len() != 3 {
            return Err(err("expected 3 fields"));
        }
        let acc = TaskAccuracy {
            relation: parse_acc(f[1]).ok_or_else(|| err("bad relation accuracy"))?,
            domain: parse_acc(f[2]).ok_or_else(|| err("bad domain accuracy"))?,
        };
        if f[0].trim() == "all" {
            if all.replace(acc).is_some() {
                return Err(err("second `all` row"));
            }
        } else {
            let kind: AttributeKind = f[0].parse().map_err(|_| err(&format!("unknown attribute {:?}", f[0])))?;
            if single.iter().any(|(k, _)| *k == kind) {
                return Err(err(&format!("attribute {kind} listed twice")));
            }
            single.push((kind, acc));
        }
    }
    let all = all.ok_or_else(|| EvalError::Input("accuracy table has no `all` row".into()))?;
    Ok((single, all))
}

pub fn write_accuracy_table(single: &[(AttributeKind, TaskAccuracy)], all: TaskAccuracy) -> String {
    let mut out = format!("{ACCURACY_TABLE_HEADER}\n");
    for (k, a) in single {
        let _ = writeln!(out, "{k}\t{}\t{}", a.relation, a.domain);
    }
    let _ = writeln!(out, "all\t{}\t{}", all.relation, all.domain);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::DomainId;

    fn gt(id: &str, rels: &[usize], tax: &Taxonomy) -> GroundTruth {
        let relations: Vec<RelationId> = rels.iter().map(|&r| RelationId(r)).collect();
        GroundTruth {
            pair_id: id.into(),
            primary: relations[0],
            domain: tax.domain_of(relations[0]),
            relations,
            agr: 3,
            cross_domain: false,
        }
    }

    fn preds(v: &[(&str, usize)]) -> BTreeMap<String, usize> {
        v.iter().map(|(k, p)| (k.to_string(), *p)).collect()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_predictions() {
        let tax = Taxonomy::builtin();
        let g = vec![gt("a", &[0], &tax), gt("b", &[9], &tax)];
        let r = accuracy(&preds(&[("a", 0), ("b", 9)]), &g, &ids(&["a", "b"]), Task::Relation, EvalMode::Strict, &tax).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion[9][9], 1);
    }

    #[test]
    fn any_of_set_vs_strict() {
        let tax = Taxonomy::builtin();
        let g = vec![gt("a", &[4, 6], &tax)];
        let p = preds(&[("a", 6)]);
        let t = ids(&["a"]);
        let any = accuracy(&p, &g, &t, Task::Relation, EvalMode::AnyOfSet, &tax).unwrap();
        let strict = accuracy(&p, &g, &t, Task::Relation, EvalMode::Strict, &tax).unwrap();
        assert_eq!(any.accuracy, 1.0);
        assert_eq!(any.confusion[6][6], 1);
        assert_eq!(strict.accuracy, 0.0);
        assert_eq!(strict.confusion[4][6], 1);
    }

    #[test]
    fn domain_task_and_coarsening() {
        let tax = Taxonomy::builtin();
        let g = vec![gt("a", &[0], &tax), gt("b", &[5], &tax)];
        let p = preds(&[("a", 1), ("b", 9)]);
        let rel = accuracy(&p, &g, &ids(&["a", "b"]), Task::Relation, EvalMode::AnyOfSet, &tax).unwrap();
        let dom = accuracy(&coarsen(&p, &tax).unwrap(), &g, &ids(&["a", "b"]), Task::Domain, EvalMode::AnyOfSet, &tax).unwrap();
        assert_eq!(rel.accuracy, 0.0);
        assert_eq!(dom.accuracy, 0.5);
        assert_eq!(dom.per_class[tax.domain_name(DomainId(0))].correct, 1);
    }

    #[test]
    fn missing_prediction_named() {
        let tax = Taxonomy::builtin();
        let g = vec![gt("a", &[0], &tax)];
        match accuracy(&BTreeMap::new(), &g, &ids(&["a"]), Task::Relation, EvalMode::AnyOfSet, &tax) {
            Err(EvalError::MissingPrediction(id)) => assert_eq!(id, "a"),
            other => panic!("{other:?}"),
        }
    }

    fn sr(name: &str, test: &[&str]) -> SplitManifest {
        SplitManifest {
            name: format!("sr-{name}"),
            kind: SplitKind::SR,
            held_out: Some(name.into()),
            seed: 0,
            train: vec![],
            val: vec![],
            test: ids(test),
        }
    }

    #[test]
    fn generalization_pools_micro() {
        let tax = Taxonomy::builtin();
        let g = vec![gt("a", &[0], &tax), gt("b", &[0], &tax), gt("c", &[9], &tax)];
        let m1 = sr("father-child", &["a", "b"]);
        let m2 = sr("teacher-student", &["c"]);
        let runs = vec![
            GeneralizationRun {
                manifest: &m1,
                predictions: preds(&[("a", 0), ("b", 1)]),
            },
            GeneralizationRun {
                manifest: &m2,
                predictions: preds(&[("c", 3)]),
            },
        ];
        let r = generalization_eval(&runs, &g, EvalMode::AnyOfSet, &tax).unwrap();
        assert_eq!(r.pooled.n_test, 3);
        assert!((r.pooled.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.macro_accuracy - 0.75).abs() < 1e-15);
        assert_eq!(r.per_held_out["father-child"].correct, 1);
    }

    #[test]
    fn generalization_mismatch() {
        let tax = Taxonomy::builtin();
        let g = vec![gt("a", &[0], &tax)];
        let m = sr("father-child", &["a"]);
        let missing = [GeneralizationRun {
            manifest: &m,
            predictions: BTreeMap::new(),
        }];
        assert!(matches!(generalization_eval(&missing, &g, EvalMode::AnyOfSet, &tax), Err(EvalError::Mismatch(_))));
        let extra = [GeneralizationRun {
            manifest: &m,
            predictions: preds(&[("a", 0), ("z", 0)]),
        }];
        assert!(matches!(generalization_eval(&extra, &g, EvalMode::AnyOfSet, &tax), Err(EvalError::Mismatch(_))));
    }

    #[test]
    fn contribution_identity_point() {
        let acc = TaskAccuracy {
            relation: 0.5,
            domain: 0.6,
        };
        let p = contribution_points(&[(AttributeKind::Clothing, acc)], acc).unwrap();
        assert_eq!((p[0].x, p[0].y), (1.0, 1.0));
        assert!(contribution_points(&[], TaskAccuracy { relation: 0.0, domain: 0.5 }).is_err());
    }

    #[test]
    fn accuracy_table_parsing() {
        let text = "attribute\trelation\tdomain\nbody_age\t31.0%\t57.4%\nall\t0.572\t0.678\n";
        let (single, all) = parse_accuracy_table(text).unwrap();
        assert_eq!(single[0].0, AttributeKind::BodyAge);
        assert!((single[0].1.relation - 0.31).abs() < 1e-15);
        assert_eq!(all.domain, 0.678);
        assert!(parse_accuracy_table("attribute\trelation\tdomain\nbody_age\t0.1\t0.2\n").is_err());
    }

    #[test]
    fn report_text_has_all_classes() {
        let tax = Taxonomy::builtin();
        let g = vec![gt("a", &[0], &tax)];
        let r = accuracy(&preds(&[("a", 0)]), &g, &ids(&["a"]), Task::Domain, EvalMode::AnyOfSet, &tax).unwrap();
        let text = r.render_text();
        for n in tax.domain_names() {
            assert!(text.contains(&n));
        }
    }
}
