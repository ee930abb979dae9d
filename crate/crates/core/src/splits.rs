//! All-class (AC) recognition splits and single-relation (SR)
//! leave-one-relation-out splits.
//!
//! AC keeps a fixed external test list and carves a validation set out of the
//! remaining pairs one whole album at a time.
//!
//! SR builds one manifest per held-out relation. The held-out relation's pairs
//! are the test set. Everything else is divided into identity folds; one fold
//! is validation and the rest are training. Pairs that straddle the two sides
//! are discarded. Pairs carrying a relation whose domain has no other relation
//! can never be held out, and are always kept in training.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{GroundTruth, PersonPair};
use crate::taxonomy::{RelationId, Taxonomy};

pub const DEFAULT_VAL_ALBUMS: usize = 8;
pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("need {needed} eligible albums for validation, found {found}")]
    NotEnoughAlbums { needed: usize, found: usize },
    #[error("relation {0} has no pairs")]
    EmptyRelation(String),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    AC,
    SR,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: String,
    pub kind: SplitKind,
    /// Name of the held-out relation (SR only).
    pub held_out: Option<String>,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    /// Checks that no pair id is listed twice, within or across parts.
    pub fn validate(&self) -> Result<(), SplitError> {
        let mut seen = BTreeSet::new();
        for (part, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(SplitError::Input(format!(
                        "split {}: pair {id} listed more than once (again in {part})",
                        self.name
                    )));
                }
            }
        }
        if self.kind == SplitKind::SR && self.held_out.is_none() {
            return Err(SplitError::Input(format!("SR split {} has no held-out relation", self.name)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SplitError> {
        let m: Self = serde_json::from_str(s).map_err(|e| SplitError::Input(format!("bad split manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn held_out_relation(&self, taxonomy: &Taxonomy) -> Result<Option<RelationId>, SplitError> {
        self.held_out
            .as_deref()
            .map(|n| taxonomy.parse_relation(n))
            .transpose()
            .map_err(|e| SplitError::Input(e.to_string()))
    }
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

// ---------------------------------------------------------------------------
// AC

/// `album_of` maps every ground-truth pair id to its album.
pub fn make_ac_split(
    gt: &[GroundTruth],
    album_of: &BTreeMap<String, String>,
    preserved_test: &[String],
    n_val_albums: usize,
    seed: u64,
) -> Result<SplitManifest, SplitError> {
    let gt_ids: BTreeSet<&str> = gt.iter().map(|g| g.pair_id.as_str()).collect();
    let test: BTreeSet<&str> = preserved_test.iter().map(String::as_str).collect();
    if test.len() != preserved_test.len() {
        return Err(SplitError::Input("preserved test list has duplicate pair ids".into()));
    }
    if let Some(missing) = test.iter().find(|id| !gt_ids.contains(*id)) {
        return Err(SplitError::Input(format!(
            "test pair {missing} has no consensus ground truth"
        )));
    }

    let mut by_album: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for id in gt_ids.iter().filter(|id| !test.contains(*id)) {
        let album = album_of
            .get(*id)
            .ok_or_else(|| SplitError::Input(format!("pair {id} has no album")))?;
        by_album.entry(album.as_str()).or_default().push(id);
    }
    let mut albums: Vec<&str> = by_album.keys().copied().collect();
    if albums.len() < n_val_albums {
        return Err(SplitError::NotEnoughAlbums {
            needed: n_val_albums,
            found: albums.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    albums.shuffle(&mut rng);
    let val_albums: BTreeSet<&str> = albums[..n_val_albums].iter().copied().collect();

    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (album, ids) in &by_album {
        let dest = if val_albums.contains(album) { &mut val } else { &mut train };
        dest.extend(ids.iter().map(|s| s.to_string()));
    }
    Ok(SplitManifest {
        name: "ac".into(),
        kind: SplitKind::AC,
        held_out: None,
        seed,
        train: sorted(train),
        val: sorted(val),
        test: sorted(preserved_test.to_vec()),
    })
}

/// Pair id to album id, through the pair's photo.
pub fn album_index(pairs: &[PersonPair], photo_album: &BTreeMap<String, String>) -> Result<BTreeMap<String, String>, SplitError> {
    pairs
        .iter()
        .map(|p| {
            photo_album
                .get(&p.photo_id)
                .map(|a| (p.pair_id.clone(), a.clone()))
                .ok_or_else(|| SplitError::Input(format!("photo {} has no album", p.photo_id)))
        })
        .collect()
}

pub const ALBUMS_HEADER: &str = "photo_id\talbum_id";

/// Parses a `photo_id album_id` TSV.
pub fn parse_albums(text: &str) -> Result<BTreeMap<String, String>, SplitError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == ALBUMS_HEADER => {}
        _ => return Err(SplitError::Input(format!("album file: line 1: expected header {ALBUMS_HEADER:?}"))),
    }
    let mut out = BTreeMap::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.trim_end().split('\t').collect();
        if f.len() != 2 || f[0].is_empty() || f[1].is_empty() {
            return Err(SplitError::Input(format!("album file: line {}: expected 2 fields", i + 1)));
        }
        if out.insert(f[0].to_string(), f[1].to_string()).is_some() {
            return Err(SplitError::Input(format!("album file: line {}: photo {} listed twice", i + 1, f[0])));
        }
    }
    Ok(out)
}

pub fn write_albums(photo_album: &BTreeMap<String, String>) -> String {
    let mut out = format!("{ALBUMS_HEADER}\n");
    for (p, a) in photo_album {
        out.push_str(&format!("{p}\t{a}\n"));
    }
    out
}

/// One pair id per line; blank lines and `#` comments are skipped.
pub fn parse_id_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

// ---------------------------------------------------------------------------
// SR

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrSplit {
    pub manifest: SplitManifest,
    /// Distinct identities per fold, before discarding.
    pub fold_sizes: Vec<usize>,
    pub val_fold: usize,
    /// Pairs dropped because their identities sit on both sides.
    pub discarded: Vec<String>,
}

/// Identity-to-fold assignment. Identities are taken in decreasing pair count
/// (ties in seeded random order) and each goes to a fold with the fewest
/// identities, preferring the fold holding most of its partners, then the one
/// with the lightest pair load, then the lowest index.
pub fn assign_folds(
    pairs: &[(&str, &str)],
    n_folds: usize,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<String, usize> {
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    let mut partners: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for &(a, b) in pairs {
        for (x, y) in [(a, b), (b, a)] {
            *count.entry(x).or_default() += 1;
            partners.entry(x).or_default().push(y);
        }
    }
    let mut order: Vec<&str> = count.keys().copied().collect();
    order.shuffle(rng);
    order.sort_by_key(|id| std::cmp::Reverse(count[id]));

    let mut fold_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut n_ids = vec![0usize; n_folds];
    let mut load = vec![0usize; n_folds];
    for id in order {
        let min_ids = *n_ids.iter().min().expect("at least one fold");
        let mut affinity = vec![0usize; n_folds];
        for p in &partners[id] {
            if let Some(&f) = fold_of.get(*p) {
                affinity[f] += 1;
            }
        }
        let f = (0..n_folds)
            .filter(|&f| n_ids[f] == min_ids)
            .min_by_key(|&f| (std::cmp::Reverse(affinity[f]), load[f], f))
            .expect("some fold has the minimum");
        n_ids[f] += 1;
        load[f] += count[id];
        fold_of.insert(id.to_string(), f);
    }
    fold_of
}

/// Relations that can never be held out: the only member of their domain.
pub fn always_train_relations(taxonomy: &Taxonomy) -> BTreeSet<RelationId> {
    taxonomy
        .single_relation_domains()
        .into_iter()
        .flat_map(|d| taxonomy.relations_of(d).iter().copied())
        .collect()
}

/// One split per relation that can be held out. `identities` maps each
/// ground-truth pair id to its two identity ids.
pub fn make_sr_splits(
    gt: &[GroundTruth],
    identities: &BTreeMap<String, [String; 2]>,
    taxonomy: &Taxonomy,
    n_folds: usize,
    seed: u64,
) -> Result<Vec<SrSplit>, SplitError> {
    if n_folds < 2 {
        return Err(SplitError::Input(format!("need at least 2 folds, got {n_folds}")));
    }
    for g in gt {
        if !identities.contains_key(&g.pair_id) {
            return Err(SplitError::Input(format!("pair {} has no identities", g.pair_id)));
        }
    }
    let forced = always_train_relations(taxonomy);
    let held_out: Vec<RelationId> = taxonomy.relations().filter(|r| !forced.contains(r)).collect();
    for &r in &held_out {
        if !gt.iter().any(|g| g.contains(r)) {
            return Err(SplitError::EmptyRelation(taxonomy.relation_name(r).to_string()));
        }
    }
    Ok(held_out
        .par_iter()
        .enumerate()
        .map(|(k, &r)| sr_split(gt, identities, taxonomy, &forced, r, n_folds, seed.wrapping_add(k as u64)))
        .collect())
}

fn sr_split(
    gt: &[GroundTruth],
    identities: &BTreeMap<String, [String; 2]>,
    taxonomy: &Taxonomy,
    forced: &BTreeSet<RelationId>,
    held: RelationId,
    n_folds: usize,
    seed: u64,
) -> SrSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (test, rest): (Vec<&GroundTruth>, Vec<&GroundTruth>) = gt.iter().partition(|g| g.contains(held));
    let ids = |g: &GroundTruth| {
        let [a, b] = &identities[&g.pair_id];
        (a.as_str(), b.as_str())
    };
    let edges: Vec<(&str, &str)> = rest.iter().map(|g| ids(g)).collect();
    let fold_of = assign_folds(&edges, n_folds, &mut rng);
    let val_fold = rng.random_range(0..n_folds);
    let mut fold_sizes = vec![0; n_folds];
    for &f in fold_of.values() {
        fold_sizes[f] += 1;
    }

    let (mut train, mut val, mut discarded) = (Vec::new(), Vec::new(), Vec::new());
    let mut train_ids: BTreeSet<&str> = BTreeSet::new();
    let mut val_candidates = Vec::new();
    for g in &rest {
        let (a, b) = ids(g);
        let in_val = (fold_of[a] == val_fold, fold_of[b] == val_fold);
        if g.relations.iter().any(|r| forced.contains(r)) {
            train.push(g.pair_id.clone());
            train_ids.extend([a, b]);
            continue;
        }
        match in_val {
            (true, true) => val_candidates.push((g.pair_id.clone(), a, b)),
            (false, false) => {
                train.push(g.pair_id.clone());
                train_ids.extend([a, b]);
            }
            _ => discarded.push(g.pair_id.clone()),
        }
    }
    for (id, a, b) in val_candidates {
        if train_ids.contains(a) || train_ids.contains(b) {
            discarded.push(id);
        } else {
            val.push(id);
        }
    }
    let name = taxonomy.relation_name(held).to_string();
    SrSplit {
        manifest: SplitManifest {
            name: format!("sr-{name}"),
            kind: SplitKind::SR,
            held_out: Some(name),
            seed,
            train: sorted(train),
            val: sorted(val),
            test: sorted(test.iter().map(|g| g.pair_id.clone()).collect()),
        },
        fold_sizes,
        val_fold,
        discarded: sorted(discarded),
    }
}
