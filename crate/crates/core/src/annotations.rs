//! Multi-annotator pair labels: ingest, exact-set agreement, consistency
//! filtering and label statistics.
//!
//! Agreement of a pair is the size of the largest group of annotators whose
//! relation *sets* are identical. "Maybe" flags do not take part in the
//! comparison, and skipped records (no labels) are left out of the grouping.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{DomainId, RelationId, Taxonomy};

/// Maximum number of relation labels one annotator may give a pair.
pub const MAX_LABELS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("line {line}: {message}")]
    Ingest { line: usize, message: String },
    #[error("invalid record: {0}")]
    Invalid(String),
}

fn ingest(line: usize, message: impl Into<String>) -> AnnotationError {
    AnnotationError::Ingest {
        line,
        message: message.into(),
    }
}

/// Axis-aligned box in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, AnnotationError> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(AnnotationError::Invalid(format!(
                "non-finite box ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(AnnotationError::Invalid(format!(
                "box must have positive size, got {w}x{h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    /// Intersection with `[0, w] x [0, h]`, if it has positive area.
    pub fn clamp_to(&self, image_w: f64, image_h: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(image_w);
        let y1 = self.bottom().min(image_h);
        (x1 > x0 && y1 > y0).then(|| BBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub identity_id: String,
    pub head: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonPair {
    pub pair_id: String,
    pub photo_id: String,
    pub person_a: Person,
    pub person_b: Person,
    pub image_w: f64,
    pub image_h: f64,
}

impl PersonPair {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.person_a.identity_id == self.person_b.identity_id {
            return Err(AnnotationError::Invalid(format!(
                "pair {} pairs identity {} with itself",
                self.pair_id, self.person_a.identity_id
            )));
        }
        if !(self.image_w > 0.0 && self.image_h > 0.0) {
            return Err(AnnotationError::Invalid(format!(
                "pair {} has a degenerate image size",
                self.pair_id
            )));
        }
        for p in [&self.person_a, &self.person_b] {
            if p.head.clamp_to(self.image_w, self.image_h).is_none() {
                return Err(AnnotationError::Invalid(format!(
                    "pair {}: head of {} lies outside the image",
                    self.pair_id, p.identity_id
                )));
            }
        }
        Ok(())
    }

    pub fn identities(&self) -> [&str; 2] {
        [&self.person_a.identity_id, &self.person_b.identity_id]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMark {
    pub relation: RelationId,
    pub maybe: bool,
}

impl LabelMark {
    pub fn sure(relation: RelationId) -> Self {
        Self {
            relation,
            maybe: false,
        }
    }
}

/// One annotator's labels for one pair. No labels means the pair was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorRecord {
    pub annotator_id: String,
    pub pair_id: String,
    labels: Vec<LabelMark>,
}

impl AnnotatorRecord {
    pub fn new(
        annotator_id: impl Into<String>,
        pair_id: impl Into<String>,
        labels: Vec<LabelMark>,
    ) -> Result<Self, AnnotationError> {
        if labels.len() > MAX_LABELS {
            return Err(AnnotationError::Invalid(format!(
                "{} labels given, at most {MAX_LABELS} allowed",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.relation) {
                return Err(AnnotationError::Invalid(format!(
                    "relation {} given twice",
                    l.relation
                )));
            }
        }
        Ok(Self {
            annotator_id: annotator_id.into(),
            pair_id: pair_id.into(),
            labels,
        })
    }

    pub fn skipped(annotator_id: impl Into<String>, pair_id: impl Into<String>) -> Self {
        Self {
            annotator_id: annotator_id.into(),
            pair_id: pair_id.into(),
            labels: Vec::new(),
        }
    }

    pub fn labels(&self) -> &[LabelMark] {
        &self.labels
    }

    pub fn is_skipped(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn relation_set(&self) -> BTreeSet<RelationId> {
        self.labels.iter().map(|l| l.relation).collect()
    }
}

/// Annotators sharing one exact relation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelGroup {
    pub relations: BTreeSet<RelationId>,
    pub annotators: Vec<String>,
}

impl LabelGroup {
    pub fn size(&self) -> usize {
        self.annotators.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub pair_id: String,
    pub agr: usize,
    /// Non-skipped records.
    pub n_annotators: usize,
    pub n_skipped: usize,
    /// Groups ordered by size (descending), then by relation set.
    pub groups: Vec<LabelGroup>,
}

impl AgreementResult {
    /// Relation set of the largest group. When several groups tie, the one
    /// with the smallest relation set in lexicographic id order.
    pub fn modal_set(&self) -> &BTreeSet<RelationId> {
        &self.groups[0].relations
    }

    /// True when another group is as large as the modal one.
    pub fn tied(&self) -> bool {
        self.groups.len() > 1 && self.groups[1].size() == self.agr
    }

    pub fn consensus(&self, threshold: usize) -> Option<&BTreeSet<RelationId>> {
        (self.agr >= threshold.max(1)).then(|| self.modal_set())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PairAgreement {
    /// Every annotator skipped the pair.
    Skipped { pair_id: String, n_skipped: usize },
    Rated(AgreementResult),
}

impl PairAgreement {
    pub fn pair_id(&self) -> &str {
        match self {
            PairAgreement::Skipped { pair_id, .. } => pair_id,
            PairAgreement::Rated(r) => &r.pair_id,
        }
    }

    pub fn rated(&self) -> Option<&AgreementResult> {
        match self {
            PairAgreement::Rated(r) => Some(r),
            PairAgreement::Skipped { .. } => None,
        }
    }
}

/// Exact-set agreement over all records of one pair.
pub fn compute_agreement(records: &[AnnotatorRecord]) -> Result<PairAgreement, AnnotationError> {
    let first = records
        .first()
        .ok_or_else(|| AnnotationError::Invalid("no records for pair".into()))?;
    let pair_id = first.pair_id.clone();
    let mut annotators = HashSet::new();
    for r in records {
        if r.pair_id != pair_id {
            return Err(AnnotationError::Invalid(format!(
                "records of pairs {pair_id} and {} mixed",
                r.pair_id
            )));
        }
        if !annotators.insert(r.annotator_id.as_str()) {
            return Err(AnnotationError::Invalid(format!(
                "annotator {} labels pair {pair_id} twice",
                r.annotator_id
            )));
        }
    }

    let n_skipped = records.iter().filter(|r| r.is_skipped()).count();
    let mut by_set: BTreeMap<BTreeSet<RelationId>, Vec<String>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_skipped()) {
        by_set
            .entry(r.relation_set())
            .or_default()
            .push(r.annotator_id.clone());
    }
    if by_set.is_empty() {
        return Ok(PairAgreement::Skipped { pair_id, n_skipped });
    }
    let mut groups: Vec<LabelGroup> = by_set
        .into_iter()
        .map(|(relations, mut annotators)| {
            annotators.sort();
            LabelGroup {
                relations,
                annotators,
            }
        })
        .collect();
    // stable: equal sizes keep the BTreeMap (set) order
    groups.sort_by_key(|g| std::cmp::Reverse(g.size()));
    Ok(PairAgreement::Rated(AgreementResult {
        pair_id,
        agr: groups[0].size(),
        n_annotators: records.len() - n_skipped,
        n_skipped,
        groups,
    }))
}

/// Groups records by pair id (ascending) and computes agreement for each.
pub fn agree_all(records: &[AnnotatorRecord]) -> Result<Vec<PairAgreement>, AnnotationError> {
    let mut by_pair: BTreeMap<&str, Vec<AnnotatorRecord>> = BTreeMap::new();
    for r in records {
        by_pair.entry(r.pair_id.as_str()).or_default().push(r.clone());
    }
    by_pair
        .into_par_iter()
        .map(|(_, rs)| compute_agreement(&rs))
        .collect()
}

/// Consensus label set of a pair that passed the consistency threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pair_id: String,
    /// Consensus set, ascending by taxonomy index.
    pub relations: Vec<RelationId>,
    /// Lowest-index member of the consensus set.
    pub primary: RelationId,
    pub domain: DomainId,
    pub agr: usize,
    /// Consensus relations span more than one domain.
    pub cross_domain: bool,
}

impl GroundTruth {
    pub fn contains(&self, r: RelationId) -> bool {
        self.relations.contains(&r)
    }
}

/// Keeps pairs whose agreement reaches `threshold` (values below 1 act as 1).
pub fn consistency_filter(
    results: &[PairAgreement],
    threshold: usize,
    taxonomy: &Taxonomy,
) -> Vec<GroundTruth> {
    results
        .iter()
        .filter_map(PairAgreement::rated)
        .filter_map(|r| {
            let set = r.consensus(threshold)?;
            let relations: Vec<RelationId> = set.iter().copied().collect();
            let primary = relations[0];
            let domain = taxonomy.domain_of(primary);
            let cross_domain = relations.iter().any(|&x| taxonomy.domain_of(x) != domain);
            Some(GroundTruth {
                pair_id: r.pair_id.clone(),
                relations,
                primary,
                domain,
                agr: r.agr,
                cross_domain,
            })
        })
        .collect()
}

/// Pair counts at one consistency level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub consistency: usize,
    pub pairs: usize,
    pub relations: BTreeMap<String, usize>,
    pub domains: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsReport {
    pub n_pairs: usize,
    pub n_skipped_pairs: usize,
    pub n_records: usize,
    pub n_skipped_records: usize,
    pub n_marks: usize,
    pub n_maybe: usize,
    /// Non-skipped records by label count.
    pub labels_per_record: BTreeMap<usize, usize>,
    /// Non-skipped pairs by number of distinct relations across annotators.
    pub relations_per_pair: BTreeMap<usize, usize>,
    /// Rated pairs by agreement.
    pub agr_counts: BTreeMap<usize, usize>,
    pub levels: Vec<LevelCounts>,
}

fn fractions(counts: &BTreeMap<usize, usize>) -> BTreeMap<usize, f64> {
    let total: usize = counts.values().sum();
    counts
        .iter()
        .map(|(&k, &v)| (k, if total == 0 { 0.0 } else { v as f64 / total as f64 }))
        .collect()
}

impl StatisticsReport {
    pub fn labels_per_record_fraction(&self) -> BTreeMap<usize, f64> {
        fractions(&self.labels_per_record)
    }

    pub fn relations_per_pair_fraction(&self) -> BTreeMap<usize, f64> {
        fractions(&self.relations_per_pair)
    }

    /// Fraction of label marks flagged "maybe".
    pub fn maybe_fraction(&self) -> f64 {
        if self.n_marks == 0 {
            0.0
        } else {
            self.n_maybe as f64 / self.n_marks as f64
        }
    }

    /// Agreement histogram over all pairs, skipped pairs included in the
    /// denominator.
    pub fn agr_fraction(&self) -> BTreeMap<usize, f64> {
        self.agr_counts
            .iter()
            .map(|(&k, &v)| (k, v as f64 / self.n_pairs.max(1) as f64))
            .collect()
    }

    pub fn skipped_pair_fraction(&self) -> f64 {
        self.n_skipped_pairs as f64 / self.n_pairs.max(1) as f64
    }

    /// Fraction of all pairs retained at `agr >= threshold`.
    pub fn retained_fraction(&self, threshold: usize) -> f64 {
        let kept: usize = self
            .agr_counts
            .iter()
            .filter(|(&k, _)| k >= threshold.max(1))
            .map(|(_, &v)| v)
            .sum();
        kept as f64 / self.n_pairs.max(1) as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary, percentages with one decimal.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "pairs: {} ({} skipped by all annotators)",
            self.n_pairs, self.n_skipped_pairs
        );
        let _ = writeln!(
            out,
            "records: {} ({} skipped), label marks: {}",
            self.n_records, self.n_skipped_records, self.n_marks
        );
        let lpr = self.labels_per_record_fraction();
        let _ = writeln!(
            out,
            "labels per record {}: {} %",
            keys_slash(&lpr),
            pct_slash(lpr.values())
        );
        let rpp = self.relations_per_pair_fraction();
        let _ = writeln!(
            out,
            "relations per pair {}: {} %",
            keys_slash(&rpp),
            pct_slash(rpp.values())
        );
        let _ = writeln!(out, "maybe marks: {} %", pct(self.maybe_fraction()));
        let agr = self.agr_fraction();
        let desc: Vec<(usize, f64)> = agr.iter().rev().map(|(&k, &v)| (k, v)).collect();
        let _ = writeln!(
            out,
            "agreement {}: {} %",
            desc.iter().map(|(k, _)| k.to_string()).collect::<Vec<_>>().join("/"),
            pct_slash(desc.iter().map(|(_, v)| v))
        );
        let _ = writeln!(out, "skipped pairs: {} %", pct(self.skipped_pair_fraction()));
        for level in &self.levels {
            let _ = writeln!(
                out,
                "consistency {}: {} pairs ({} % of all)",
                level.consistency,
                level.pairs,
                pct(self.retained_fraction(level.consistency))
            );
        }
        out
    }
}

fn keys_slash(m: &BTreeMap<usize, f64>) -> String {
    m.keys().map(|k| k.to_string()).collect::<Vec<_>>().join("/")
}

/// Percentage with one decimal; a trailing `.0` is dropped.
pub fn pct(f: f64) -> String {
    let s = format!("{:.1}", 100.0 * f);
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

fn pct_slash<'a>(vals: impl Iterator<Item = &'a f64>) -> String {
    vals.map(|&v| pct(v)).collect::<Vec<_>>().join("/")
}

pub fn label_statistics(
    records: &[AnnotatorRecord],
    taxonomy: &Taxonomy,
) -> Result<StatisticsReport, AnnotationError> {
    let agreements = agree_all(records)?;

    let mut labels_per_record = BTreeMap::new();
    let mut n_marks = 0;
    let mut n_maybe = 0;
    let mut n_skipped_records = 0;
    let mut union: HashMap<&str, BTreeSet<RelationId>> = HashMap::new();
    for r in records {
        if r.is_skipped() {
            n_skipped_records += 1;
            continue;
        }
        *labels_per_record.entry(r.labels().len()).or_insert(0) += 1;
        n_marks += r.labels().len();
        n_maybe += r.labels().iter().filter(|l| l.maybe).count();
        union
            .entry(r.pair_id.as_str())
            .or_default()
            .extend(r.labels().iter().map(|l| l.relation));
    }
    let mut relations_per_pair = BTreeMap::new();
    for set in union.values() {
        *relations_per_pair.entry(set.len()).or_insert(0) += 1;
    }

    let mut agr_counts = BTreeMap::new();
    let mut n_skipped_pairs = 0;
    for a in &agreements {
        match a {
            PairAgreement::Skipped { .. } => n_skipped_pairs += 1,
            PairAgreement::Rated(r) => *agr_counts.entry(r.agr).or_insert(0) += 1,
        }
    }

    let max_agr = agr_counts.keys().copied().max().unwrap_or(0).max(5);
    let levels = (1..=max_agr)
        .map(|c| {
            let gt = consistency_filter(&agreements, c, taxonomy);
            let mut relations: BTreeMap<String, usize> = taxonomy
                .relations()
                .map(|r| (taxonomy.relation_name(r).to_string(), 0))
                .collect();
            let mut domains: BTreeMap<String, usize> = taxonomy
                .domains()
                .map(|d| (taxonomy.domain_name(d).to_string(), 0))
                .collect();
            for g in &gt {
                *relations
                    .get_mut(taxonomy.relation_name(g.primary))
                    .expect("known relation") += 1;
                *domains
                    .get_mut(taxonomy.domain_name(g.domain))
                    .expect("known domain") += 1;
            }
            LevelCounts {
                consistency: c,
                pairs: gt.len(),
                relations,
                domains,
            }
        })
        .collect();

    Ok(StatisticsReport {
        n_pairs: agreements.len(),
        n_skipped_pairs,
        n_records: records.len(),
        n_skipped_records,
        n_marks,
        n_maybe,
        labels_per_record,
        relations_per_pair,
        agr_counts,
        levels,
    })
}

// ---------------------------------------------------------------------------
// TSV formats

pub const ANNOTATIONS_HEADER: &str = "annotator_id\tpair_id\tlabels";
pub const PAIRS_HEADER: &str = "pair_id\tphoto_id\tidentity_a\txa\tya\twa\tha\tidentity_b\txb\tyb\twb\thb\timage_w\timage_h";
pub const GROUNDTRUTH_HEADER: &str = "pair_id\tagr\tprimary\tdomain\trelations\tcross_domain";

fn data_lines<'a>(text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, &'a str)>, AnnotationError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((n, h)) => return Err(ingest(n, format!("expected header {header:?}, found {h:?}"))),
        None => return Err(ingest(1, "empty file")),
    }
    Ok(lines.filter(|(_, l)| !l.trim().is_empty()))
}

/// Parses one `labels` field: `;`-separated `relation[?]` entries.
pub fn parse_labels(field: &str, taxonomy: &Taxonomy) -> Result<Vec<LabelMark>, String> {
    let mut marks = Vec::new();
    for entry in field.split(';') {
        let entry = entry.trim();
        if entry.is_empty() {
            if field.trim().is_empty() {
                continue;
            }
            return Err(format!("empty label entry in {field:?}"));
        }
        let (name, maybe) = match entry.strip_suffix('?') {
            Some(n) => (n, true),
            None => (entry, false),
        };
        let relation = taxonomy.parse_relation(name).map_err(|e| e.to_string())?;
        marks.push(LabelMark { relation, maybe });
    }
    Ok(marks)
}

/// Parses an annotation file. When `known_pairs` is given, rows naming any
/// other pair are rejected.
pub fn parse_annotations(
    text: &str,
    taxonomy: &Taxonomy,
    known_pairs: Option<&HashSet<String>>,
) -> Result<Vec<AnnotatorRecord>, AnnotationError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in data_lines(text, ANNOTATIONS_HEADER)? {
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(ingest(n, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let annotator = fields[0].trim();
        let pair = fields[1].trim();
        if annotator.is_empty() || pair.is_empty() {
            return Err(ingest(n, "empty annotator_id or pair_id"));
        }
        if let Some(known) = known_pairs {
            if !known.contains(pair) {
                return Err(ingest(n, format!("unknown pair_id {pair:?}")));
            }
        }
        if !seen.insert((annotator.to_string(), pair.to_string())) {
            return Err(ingest(n, format!("annotator {annotator} labels pair {pair} twice")));
        }
        let labels = parse_labels(fields.get(2).copied().unwrap_or(""), taxonomy)
            .map_err(|m| ingest(n, m))?;
        let record = AnnotatorRecord::new(annotator, pair, labels).map_err(|e| ingest(n, e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn format_labels(labels: &[LabelMark], taxonomy: &Taxonomy) -> String {
    labels
        .iter()
        .map(|l| {
            let name = taxonomy.relation_name(l.relation);
            if l.maybe {
                format!("{name}?")
            } else {
                name.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_annotations(records: &[AnnotatorRecord], taxonomy: &Taxonomy) -> String {
    let mut out = String::from(ANNOTATIONS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            r.annotator_id,
            r.pair_id,
            format_labels(r.labels(), taxonomy)
        );
    }
    out
}

fn parse_f64(s: &str, line: usize, what: &str) -> Result<f64, AnnotationError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| ingest(line, format!("{what}: not a number: {s:?}")))
}

pub fn parse_pairs(text: &str) -> Result<Vec<PersonPair>, AnnotationError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in data_lines(text, PAIRS_HEADER)? {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 14 {
            return Err(ingest(n, format!("expected 14 fields, found {}", f.len())));
        }
        let num = |i: usize, what: &str| parse_f64(f[i], n, what);
        let head = |i: usize| -> Result<BBox, AnnotationError> {
            BBox::new(num(i, "x")?, num(i + 1, "y")?, num(i + 2, "w")?, num(i + 3, "h")?)
                .map_err(|e| ingest(n, e.to_string()))
        };
        let pair = PersonPair {
            pair_id: f[0].trim().to_string(),
            photo_id: f[1].trim().to_string(),
            person_a: Person {
                identity_id: f[2].trim().to_string(),
                head: head(3)?,
            },
            person_b: Person {
                identity_id: f[7].trim().to_string(),
                head: head(8)?,
            },
            image_w: num(12, "image_w")?,
            image_h: num(13, "image_h")?,
        };
        pair.validate().map_err(|e| ingest(n, e.to_string()))?;
        if !ids.insert(pair.pair_id.clone()) {
            return Err(ingest(n, format!("duplicate pair_id {}", pair.pair_id)));
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn write_pairs(pairs: &[PersonPair]) -> String {
    let mut out = String::from(PAIRS_HEADER);
    out.push('\n');
    for p in pairs {
        let (a, b) = (&p.person_a, &p.person_b);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.pair_id,
            p.photo_id,
            a.identity_id,
            a.head.x,
            a.head.y,
            a.head.w,
            a.head.h,
            b.identity_id,
            b.head.x,
            b.head.y,
            b.head.w,
            b.head.h,
            p.image_w,
            p.image_h
        );
    }
    out
}

pub fn write_groundtruth(gt: &[GroundTruth], taxonomy: &Taxonomy) -> String {
    let mut out = String::from(GROUNDTRUTH_HEADER);
    out.push('\n');
    for g in gt {
        let rels = g
            .relations
            .iter()
            .map(|&r| taxonomy.relation_name(r))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            g.pair_id,
            g.agr,
            taxonomy.relation_name(g.primary),
            taxonomy.domain_name(g.domain),
            rels,
            g.cross_domain
        );
    }
    out
}

pub fn parse_groundtruth(text: &str, taxonomy: &Taxonomy) -> Result<Vec<GroundTruth>, AnnotationError> {
    let mut out = Vec::new();
    for (n, line) in data_lines(text, GROUNDTRUTH_HEADER)? {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(ingest(n, format!("expected 6 fields, found {}", f.len())));
        }
        let agr = f[1]
            .trim()
            .parse::<usize>()
            .map_err(|_| ingest(n, format!("bad agr {:?}", f[1])))?;
        let primary = taxonomy
            .parse_relation(f[2])
            .map_err(|e| ingest(n, e.to_string()))?;
        let domain = taxonomy
            .parse_domain(f[3])
            .map_err(|e| ingest(n, e.to_string()))?;
        let mut relations = f[4]
            .split(';')
            .map(|s| taxonomy.parse_relation(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ingest(n, e.to_string()))?;
        relations.sort();
        relations.dedup();
        let cross_domain = f[5]
            .trim()
            .parse::<bool>()
            .map_err(|_| ingest(n, format!("bad cross_domain flag {:?}", f[5])))?;
        if relations.first() != Some(&primary) || taxonomy.domain_of(primary) != domain {
            return Err(ingest(n, "primary relation or domain inconsistent with relation set"));
        }
        out.push(GroundTruth {
            pair_id: f[0].trim().to_string(),
            relations,
            primary,
            domain,
            agr,
            cross_domain,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> Taxonomy {
        Taxonomy::builtin()
    }

    fn rec(t: &Taxonomy, annotator: &str, names: &[&str]) -> AnnotatorRecord {
        let labels = names
            .iter()
            .map(|n| LabelMark::sure(t.parse_relation(n).unwrap()))
            .collect();
        AnnotatorRecord::new(annotator, "p1", labels).unwrap()
    }

    fn agr_of(records: &[AnnotatorRecord]) -> usize {
        compute_agreement(records).unwrap().rated().unwrap().agr
    }

    #[test]
    fn unanimous() {
        let t = tax();
        let rs: Vec<_> = (0..5)
            .map(|i| rec(&t, &format!("a{i}"), &["grandma-grandchild"]))
            .collect();
        assert_eq!(agr_of(&rs), 5);
    }

    #[test]
    fn superset_annotator_not_counted() {
        let t = tax();
        let rs = vec![
            rec(&t, "a0", &["colleagues"]),
            rec(&t, "a1", &["colleagues"]),
            rec(&t, "a2", &["colleagues"]),
            rec(&t, "a3", &["colleagues", "friends"]),
            AnnotatorRecord::skipped("a4", "p1"),
        ];
        let res = compute_agreement(&rs).unwrap();
        let r = res.rated().unwrap();
        assert_eq!(r.agr, 3);
        assert_eq!(r.n_annotators, 4);
        assert_eq!(r.n_skipped, 1);
        assert_eq!(r.groups.iter().map(LabelGroup::size).sum::<usize>(), 4);
    }

    #[test]
    fn all_distinct() {
        let t = tax();
        let rs = vec![
            rec(&t, "a0", &["friends"]),
            rec(&t, "a1", &["colleagues"]),
            rec(&t, "a2", &["leader-subordinate"]),
            rec(&t, "a3", &["trainer-trainee"]),
            rec(&t, "a4", &["friends", "colleagues"]),
        ];
        assert_eq!(agr_of(&rs), 1);
    }

    #[test]
    fn maybe_flags_ignored_and_label_order_irrelevant() {
        let t = tax();
        let f = t.parse_relation("friends").unwrap();
        let c = t.parse_relation("colleagues").unwrap();
        let rs = vec![
            AnnotatorRecord::new("a0", "p1", vec![LabelMark::sure(f), LabelMark::sure(c)]).unwrap(),
            AnnotatorRecord::new("a1", "p1", vec![LabelMark { relation: c, maybe: true }, LabelMark::sure(f)])
                .unwrap(),
        ];
        assert_eq!(agr_of(&rs), 2);
    }

    #[test]
    fn all_skipped() {
        let rs = vec![AnnotatorRecord::skipped("a0", "p1"), AnnotatorRecord::skipped("a1", "p1")];
        assert!(matches!(
            compute_agreement(&rs).unwrap(),
            PairAgreement::Skipped { n_skipped: 2, .. }
        ));
    }

    #[test]
    fn record_limits() {
        let t = tax();
        let marks: Vec<_> = t.relations().take(4).map(LabelMark::sure).collect();
        assert!(AnnotatorRecord::new("a", "p", marks).is_err());
        let r = t.parse_relation("friends").unwrap();
        assert!(AnnotatorRecord::new("a", "p", vec![LabelMark::sure(r), LabelMark::sure(r)]).is_err());
    }

    #[test]
    fn duplicate_annotator_rejected() {
        let t = tax();
        let rs = vec![rec(&t, "a0", &["friends"]), rec(&t, "a0", &["friends"])];
        assert!(compute_agreement(&rs).is_err());
    }

    #[test]
    fn consensus_threshold_and_primary() {
        let t = tax();
        let rs = vec![
            rec(&t, "a0", &["colleagues", "friends"]),
            rec(&t, "a1", &["friends", "colleagues"]),
            rec(&t, "a2", &["colleagues", "friends"]),
            rec(&t, "a3", &["friends"]),
        ];
        let res = vec![compute_agreement(&rs).unwrap()];
        let gt = consistency_filter(&res, 3, &t);
        assert_eq!(gt.len(), 1);
        assert_eq!(gt[0].primary, t.parse_relation("friends").unwrap());
        assert!(gt[0].cross_domain);
        assert!(consistency_filter(&res, 4, &t).is_empty());
    }

    #[test]
    fn labels_field_parsing() {
        let t = tax();
        let marks = parse_labels("friends; colleagues?", &t).unwrap();
        assert_eq!(marks.len(), 2);
        assert!(!marks[0].maybe && marks[1].maybe);
        assert!(parse_labels("", &t).unwrap().is_empty());
        assert!(parse_labels("friends;;colleagues", &t).is_err());
        assert!(parse_labels("boss", &t).is_err());
    }

    #[test]
    fn annotation_ingest_reports_line() {
        let t = tax();
        let text = "annotator_id\tpair_id\tlabels\na0\tp1\tfriends\na1\tp1\tboss\n";
        match parse_annotations(text, &t, None) {
            Err(AnnotationError::Ingest { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let known: HashSet<String> = ["p1".to_string()].into();
        let text = "annotator_id\tpair_id\tlabels\na0\tp2\tfriends\n";
        assert!(matches!(
            parse_annotations(text, &t, Some(&known)),
            Err(AnnotationError::Ingest { line: 2, .. })
        ));
    }

    #[test]
    fn annotation_ingest_skip_rows() {
        let t = tax();
        let text = "annotator_id\tpair_id\tlabels\na0\tp1\t\na1\tp1\na2\tp1\tfriends?\n";
        let rs = parse_annotations(text, &t, None).unwrap();
        assert!(rs[0].is_skipped() && rs[1].is_skipped());
        assert!(rs[2].labels()[0].maybe);
    }

    #[test]
    fn pairs_round_trip() {
        let pair = PersonPair {
            pair_id: "p1".into(),
            photo_id: "ph1".into(),
            person_a: Person {
                identity_id: "i1".into(),
                head: BBox::new(10.5, 20.0, 30.0, 40.25).unwrap(),
            },
            person_b: Person {
                identity_id: "i2".into(),
                head: BBox::new(100.0, 20.0, 0.1 + 0.2, 40.0).unwrap(),
            },
            image_w: 640.0,
            image_h: 480.0,
        };
        let back = parse_pairs(&write_pairs(std::slice::from_ref(&pair))).unwrap();
        assert_eq!(back, vec![pair]);
    }

    #[test]
    fn pairs_reject_same_identity() {
        let text = format!("{PAIRS_HEADER}\np1\tph\ti1\t0\t0\t10\t10\ti1\t20\t0\t10\t10\t100\t100\n");
        assert!(matches!(parse_pairs(&text), Err(AnnotationError::Ingest { line: 2, .. })));
    }

    #[test]
    fn groundtruth_round_trip() {
        let t = tax();
        let rs = vec![
            rec(&t, "a0", &["colleagues"]),
            rec(&t, "a1", &["colleagues"]),
            rec(&t, "a2", &["colleagues"]),
        ];
        let gt = consistency_filter(&[compute_agreement(&rs).unwrap()], 3, &t);
        let back = parse_groundtruth(&write_groundtruth(&gt, &t), &t).unwrap();
        assert_eq!(back, gt);
    }

    #[test]
    fn pct_formatting() {
        assert_eq!(pct(0.53), "53");
        assert_eq!(pct(0.388), "38.8");
        assert_eq!(pct(0.0026), "0.3");
    }
}
