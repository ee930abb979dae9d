//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code under test except for plain data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relscope::annotations::{AnnotatorRecord, GroundTruth, LabelMark};
use relscope::splits::{SplitKind, SplitManifest, SrSplit};
use relscope::taxonomy::RelationId;

// ---------------------------------------------------------------------------
// Agreement

/// Random table for one pair: 1..=5 annotators, each skipping or giving
/// 1..=3 distinct labels drawn from the first `n_labels` relations.
pub fn random_table(rng: &mut ChaCha8Rng, pair: &str, n_labels: usize) -> Vec<AnnotatorRecord> {
    let n = rng.random_range(1..=5);
    let pool: Vec<usize> = (0..n_labels).collect();
    (0..n)
        .map(|a| {
            let ann = format!("a{a}");
            if rng.random_bool(0.15) {
                return AnnotatorRecord::skipped(ann, pair);
            }
            let k = rng.random_range(1..=3.min(n_labels));
            let picked: Vec<usize> = pool.choose_multiple(rng, k).copied().collect();
            let labels = picked
                .into_iter()
                .map(|r| LabelMark {
                    relation: RelationId(r),
                    maybe: rng.random_bool(0.1),
                })
                .collect();
            AnnotatorRecord::new(ann, pair, labels).unwrap()
        })
        .collect()
}

/// Largest subset of non-skipped annotators whose relation sets are all
/// identical, by enumerating every subset. `None` when all skipped.
pub fn brute_agr(records: &[AnnotatorRecord]) -> Option<usize> {
    let sets: Vec<BTreeSet<usize>> = records
        .iter()
        .filter(|r| !r.labels().is_empty())
        .map(|r| r.labels().iter().map(|l| l.relation.0).collect())
        .collect();
    if sets.is_empty() {
        return None;
    }
    let n = sets.len();
    let mut best = 0;
    for mask in 1u32..(1 << n) {
        let members: Vec<&BTreeSet<usize>> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| &sets[i]).collect();
        if members.iter().all(|s| *s == members[0]) {
            best = best.max(members.len());
        }
    }
    Some(best)
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Default)]
pub struct Recount {
    pub n_pairs: usize,
    pub labels_per_record: BTreeMap<usize, f64>,
    pub relations_per_pair: BTreeMap<usize, f64>,
    pub maybe: f64,
    pub agr: BTreeMap<usize, f64>,
    pub skipped_pairs: f64,
}

/// Recounts the statistics marginals straight from the records.
pub fn recount(records: &[AnnotatorRecord]) -> Recount {
    let mut by_pair: BTreeMap<&str, Vec<AnnotatorRecord>> = BTreeMap::new();
    for r in records {
        by_pair.entry(&r.pair_id).or_default().push(r.clone());
    }
    let rated: Vec<&AnnotatorRecord> = records.iter().filter(|r| !r.labels().is_empty()).collect();

    let mut lpr = BTreeMap::new();
    for r in &rated {
        *lpr.entry(r.labels().len()).or_insert(0.0) += 1.0;
    }
    for v in lpr.values_mut() {
        *v /= rated.len() as f64;
    }

    let marks: usize = rated.iter().map(|r| r.labels().len()).sum();
    let maybes = rated
        .iter()
        .flat_map(|r| r.labels())
        .filter(|l| l.maybe)
        .count();

    let mut rpp = BTreeMap::new();
    let mut agr = BTreeMap::new();
    let mut skipped = 0usize;
    let mut n_rated = 0usize;
    for recs in by_pair.values() {
        match brute_agr(recs) {
            None => skipped += 1,
            Some(a) => {
                n_rated += 1;
                *agr.entry(a).or_insert(0.0) += 1.0;
                let union: BTreeSet<usize> = recs
                    .iter()
                    .flat_map(|r| r.labels().iter().map(|l| l.relation.0))
                    .collect();
                *rpp.entry(union.len()).or_insert(0.0) += 1.0;
            }
        }
    }
    let n_pairs = by_pair.len();
    for v in rpp.values_mut() {
        *v /= n_rated as f64;
    }
    for v in agr.values_mut() {
        *v /= n_pairs as f64;
    }
    Recount {
        n_pairs,
        labels_per_record: lpr,
        relations_per_pair: rpp,
        maybe: if marks == 0 { 0.0 } else { maybes as f64 / marks as f64 },
        agr,
        skipped_pairs: skipped as f64 / n_pairs as f64,
    }
}

pub fn max_abs_diff(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>) -> f64 {
    let keys: BTreeSet<usize> = a.keys().chain(b.keys()).copied().collect();
    keys.iter()
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

fn rec(pair: &str, ann: usize, sets: &[usize]) -> AnnotatorRecord {
    if sets.is_empty() {
        return AnnotatorRecord::skipped(format!("a{ann}"), pair);
    }
    let labels = sets.iter().map(|&r| LabelMark::sure(RelationId(r))).collect();
    AnnotatorRecord::new(format!("a{ann}"), pair, labels).unwrap()
}

/// 1000 pairs, five annotators each, built so the marginals land on
/// 92.3/7.5/0.3 labels per record, 53/38.8/7.4/0.8 relations per pair and
/// 42/19.9/20.7 for agreement 5/4/3.
pub fn marginal_fixture() -> Vec<AnnotatorRecord> {
    // (count, five label sets)
    let (a, b, c, d) = (0usize, 12usize, 15usize, 8usize);
    let templates: Vec<(usize, [Vec<usize>; 5])> = vec![
        // agr 5
        (400, [vec![a], vec![a], vec![a], vec![a], vec![a]]),
        (20, [vec![a, b], vec![a, b], vec![a, b], vec![a, b], vec![a, b]]),
        // agr 4
        (130, [vec![a], vec![a], vec![a], vec![a], vec![]]),
        (69, [vec![a], vec![a], vec![a], vec![a], vec![b]]),
        // agr 3
        (128, [vec![a], vec![a], vec![a], vec![a, b], vec![a, b]]),
        (79, [vec![a], vec![a], vec![a], vec![b], vec![b]]),
        // agr 2
        (92, [vec![a], vec![a], vec![b], vec![b], vec![]]),
        (14, [vec![a], vec![a], vec![b], vec![b], vec![a, b, c]]),
        (60, [vec![a], vec![a], vec![b], vec![b], vec![c]]),
        (8, [vec![a], vec![a], vec![b], vec![c], vec![d]]),
    ];
    let mut out = Vec::new();
    let mut k = 0;
    for (count, sets) in templates {
        for _ in 0..count {
            let pair = format!("p{k:04}");
            for (i, s) in sets.iter().enumerate() {
                out.push(rec(&pair, i, s));
            }
            k += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Splits

/// Scans AC and SR manifests for every structural invariant. Returns a list
/// of violations, empty when everything holds.
pub fn check_ac(m: &SplitManifest, gt: &[GroundTruth], album_of: &BTreeMap<String, String>, expected_test: &[String]) -> Vec<String> {
    let mut bad = Vec::new();
    if m.kind != SplitKind::AC {
        bad.push("AC manifest has wrong kind".into());
    }
    bad.extend(disjoint(m));
    let mut want: Vec<String> = expected_test.to_vec();
    want.sort();
    let mut got = m.test.clone();
    got.sort();
    if want != got {
        bad.push("AC test differs from the preserved list".into());
    }
    let covered: BTreeSet<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
    if covered.len() != gt.len() || gt.iter().any(|g| !covered.contains(&g.pair_id)) {
        bad.push("AC manifest does not cover the ground truth exactly".into());
    }
    let train_albums: BTreeSet<&String> = m.train.iter().map(|p| &album_of[p]).collect();
    let val_albums: BTreeSet<&String> = m.val.iter().map(|p| &album_of[p]).collect();
    if let Some(x) = train_albums.intersection(&val_albums).next() {
        bad.push(format!("album {x} in both AC train and val"));
    }
    // every val album is complete
    for p in gt.iter().filter(|g| !m.test.contains(&g.pair_id)) {
        if val_albums.contains(&album_of[&p.pair_id]) && !m.val.contains(&p.pair_id) {
            bad.push(format!("pair {} of a val album is not in val", p.pair_id));
        }
    }
    bad
}

pub fn check_sr(
    s: &SrSplit,
    gt: &[GroundTruth],
    identities: &BTreeMap<String, [String; 2]>,
    held: RelationId,
    always_train: RelationId,
) -> Vec<String> {
    let m = &s.manifest;
    let mut bad = disjoint(m);
    let name = &m.name;
    let test: BTreeSet<&String> = m.test.iter().collect();
    let train: BTreeSet<&String> = m.train.iter().collect();
    for g in gt {
        let carries = g.relations.contains(&held);
        if carries != test.contains(&g.pair_id) {
            bad.push(format!("{name}: pair {} held-out membership wrong", g.pair_id));
        }
        if g.relations.contains(&always_train) && !carries && !train.contains(&g.pair_id) {
            bad.push(format!("{name}: pair {} with the always-train relation is not in train", g.pair_id));
        }
    }
    let side_ids = |ids: &[String]| -> BTreeSet<String> {
        ids.iter().flat_map(|p| identities[p].iter().cloned()).collect()
    };
    let (ti, vi) = (side_ids(&m.train), side_ids(&m.val));
    if let Some(x) = ti.intersection(&vi).next() {
        bad.push(format!("{name}: identity {x} on both sides of train/val"));
    }
    let (lo, hi) = (
        s.fold_sizes.iter().min().copied().unwrap_or(0),
        s.fold_sizes.iter().max().copied().unwrap_or(0),
    );
    if hi - lo > 1 {
        bad.push(format!("{name}: fold sizes {:?} differ by more than one", s.fold_sizes));
    }
    let accounted = m.train.len() + m.val.len() + m.test.len() + s.discarded.len();
    if accounted != gt.len() {
        bad.push(format!("{name}: {accounted} pairs accounted for, {} in ground truth", gt.len()));
    }
    bad
}

fn disjoint(m: &SplitManifest) -> Vec<String> {
    let mut bad = Vec::new();
    let sets = [("train", &m.train), ("val", &m.val), ("test", &m.test)];
    for (i, (na, a)) in sets.iter().enumerate() {
        let sa: BTreeSet<&String> = a.iter().collect();
        if sa.len() != a.len() {
            bad.push(format!("{}: duplicate ids in {na}", m.name));
        }
        for (nb, b) in &sets[i + 1..] {
            if b.iter().any(|x| sa.contains(x)) {
                bad.push(format!("{}: {na} and {nb} overlap", m.name));
            }
        }
    }
    bad
}

// ---------------------------------------------------------------------------
// SVM

pub fn hinge_objective(x: &[[f64; 2]], y: &[f64], lambda: f64, w: [f64; 2], b: f64) -> f64 {
    let n = x.len() as f64;
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(p, s)| (1.0 - s * (w[0] * p[0] + w[1] * p[1] + b)).max(0.0))
        .sum();
    0.5 * lambda * (w[0] * w[0] + w[1] * w[1]) + loss / n
}

/// Best objective for fixed `w`: the hinge sum is piecewise linear in `b`
/// with kinks at `b = y_i - w . x_i`, so one of them is a minimizer.
pub fn best_over_bias(x: &[[f64; 2]], y: &[f64], lambda: f64, w: [f64; 2]) -> (f64, f64) {
    x.iter()
        .zip(y)
        .map(|(p, s)| {
            let b = s - (w[0] * p[0] + w[1] * p[1]);
            (hinge_objective(x, y, lambda, w, b), b)
        })
        .fold((f64::INFINITY, 0.0), |acc, v| if v.0 < acc.0 { v } else { acc })
}

/// Grid minimum over `w` in `[-5, 5]^2`: a full pass at step 0.01, then
/// three local passes at 0.001 and 0.0001 (+-20 steps each).
pub fn grid_minimum(x: &[[f64; 2]], y: &[f64], lambda: f64) -> f64 {
    use rayon::prelude::*;
    let coarse = (0..=1000usize)
        .into_par_iter()
        .map(|i| {
            let w0 = -5.0 + 0.01 * i as f64;
            let mut best = (f64::INFINITY, [0.0, 0.0]);
            for j in 0..=1000 {
                let w = [w0, -5.0 + 0.01 * j as f64];
                let (j, _) = best_over_bias(x, y, lambda, w);
                if j < best.0 {
                    best = (j, w);
                }
            }
            best
        })
        .reduce(|| (f64::INFINITY, [0.0, 0.0]), |a, b| if b.0 < a.0 { b } else { a });

    let (mut best, mut center) = coarse;
    for step in [0.001, 0.001, 0.0001, 0.0001] {
        let c = center;
        for i in -20..=20 {
            for j in -20..=20 {
                let w = [c[0] + step * i as f64, c[1] + step * j as f64];
                let (v, _) = best_over_bias(x, y, lambda, w);
                if v < best {
                    best = v;
                    center = w;
                }
            }
        }
    }
    best
}

/// Two overlapping Gaussian blobs, 10 points each.
pub fn svm_problem(seed: u64) -> (Vec<[f64; 2]>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let shift: f64 = rng.random_range(0.5..2.5);
    let mut x = Vec::new();
    let mut pos = Vec::new();
    for i in 0..20 {
        let p = i % 2 == 0;
        let c = if p { shift } else { -shift };
        x.push([
            c + rng.sample::<f64, _>(normal),
            0.5 * c + rng.sample::<f64, _>(normal),
        ]);
        pos.push(p);
    }
    (x, pos)
}
