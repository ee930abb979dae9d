//! Synthetic corpora: albums, photos, person pairs, noisy annotator records and
//! feature blocks with a known class structure.
//!
//! Each relation r in domain d gets a prototype `alpha * u_d + beta * v_r`
//! over orthonormal directions, so prototypes inside a domain sit `delta`
//! apart and prototypes across domains sit further. Features of the Gaussian
//! kinds are the prototype plus unit isotropic noise. Location & scale blocks
//! come from the generated head boxes; age and gender blocks come from latent
//! per-identity attributes fixed at the identity's first appearance. When
//! picking the two people of a pair, identities whose attributes fit the
//! relation's roles are preferred.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{self, AnnotatorRecord, BBox, LabelMark, Person, PersonPair};
use crate::featstore::{
    self, AttributeKind, FeatureManifest, FeatureStore, FeatureTable, KindEntry, AGE_CLASSES, GENDER_CLASSES,
};
use crate::pairgeom::{self, GeomThresholds};
use crate::splits;
use crate::taxonomy::{RelationId, Taxonomy};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Kinds drawn from the Gaussian prototypes.
pub const GAUSSIAN_KINDS: [AttributeKind; 6] = [
    AttributeKind::HeadAppearance,
    AttributeKind::HeadPose,
    AttributeKind::FaceEmotion,
    AttributeKind::Clothing,
    AttributeKind::Proximity,
    AttributeKind::Activity,
];

/// Synthetic block sizes: extractor-sized blocks kept, proximity and activity
/// shrunk.
pub fn default_gaussian_dims() -> BTreeMap<AttributeKind, usize> {
    GAUSSIAN_KINDS
        .into_iter()
        .map(|k| {
            let d = match k {
                AttributeKind::Proximity => 25,
                AttributeKind::Activity => 32,
                other => other.full_dim(),
            };
            (k, d)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_pairs: usize,
    pub n_albums: usize,
    pub n_identities: usize,
    pub n_photos: usize,
    pub n_annotators: usize,
    /// Per-relation share of pairs, in taxonomy order. Empty means balanced.
    pub proportions: Vec<f64>,
    /// Probability that an annotator deviates from the true relation.
    pub noise: f64,
    /// Distance between prototypes of two relations of the same domain, in
    /// noise standard deviations.
    pub margin: f64,
    /// Domain direction weight relative to the relation direction weight.
    pub domain_weight: f64,
    pub maybe_rate: f64,
    /// Share of albums whose pairs form the preserved test list.
    pub test_album_fraction: f64,
    pub dims: BTreeMap<AttributeKind, usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_pairs: 800,
            n_albums: 40,
            n_identities: 400,
            n_photos: 400,
            n_annotators: 5,
            proportions: Vec::new(),
            noise: 0.1,
            margin: 10.0,
            domain_weight: 1.5,
            maybe_rate: 0.08,
            test_album_fraction: 0.2,
            dims: default_gaussian_dims(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn proportions_for(&self, n_relations: usize) -> Vec<f64> {
        if self.proportions.is_empty() {
            vec![1.0 / n_relations as f64; n_relations]
        } else {
            self.proportions.clone()
        }
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), SpecError> {
        let bad = |m: String| Err(SpecError::Invalid(m));
        let p = self.proportions_for(taxonomy.n_relations());
        if p.len() != taxonomy.n_relations() {
            return bad(format!("{} proportions for {} relations", p.len(), taxonomy.n_relations()));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("proportions must be finite and non-negative".into());
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return bad(format!("proportions sum to {s}, not 1"));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad(format!("noise rate {} must lie in [0, 1)", self.noise));
        }
        if !(0.0..=1.0).contains(&self.maybe_rate) {
            return bad(format!("maybe rate {} must lie in [0, 1]", self.maybe_rate));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return bad(format!("margin {} must be positive", self.margin));
        }
        if !(self.domain_weight.is_finite() && self.domain_weight >= 0.0) {
            return bad("domain weight must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.test_album_fraction) {
            return bad("test album fraction must lie in [0, 1)".into());
        }
        if self.n_pairs == 0 || self.n_annotators == 0 {
            return bad("need at least one pair and one annotator".into());
        }
        if self.n_albums == 0 || self.n_identities < 2 * self.n_albums || self.n_photos < self.n_albums {
            return bad(format!(
                "{} albums need at least 2 identities and 1 photo each ({} identities, {} photos)",
                self.n_albums, self.n_identities, self.n_photos
            ));
        }
        for (k, &d) in &self.dims {
            if !GAUSSIAN_KINDS.contains(k) {
                return bad(format!("dimension of {k} is fixed and cannot be set"));
            }
            if d == 0 {
                return bad(format!("kind {k} has dimension 0"));
            }
        }
        if self.dims.len() != GAUSSIAN_KINDS.len() {
            return bad("dims must list every Gaussian kind".into());
        }
        let n_dirs = taxonomy.n_domains() + taxonomy.n_relations();
        if self.gaussian_dim() < n_dirs {
            return bad(format!("Gaussian kinds span {} dims, need {n_dirs}", self.gaussian_dim()));
        }
        Ok(())
    }

    fn gaussian_dim(&self) -> usize {
        self.dims.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityTruth {
    pub album: String,
    pub age: String,
    pub gender: String,
}

/// Latent values behind a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SynthSpec,
    /// True relation name per pair.
    pub relations: BTreeMap<String, String>,
    pub identities: BTreeMap<String, IdentityTruth>,
    /// Prototype per relation name, over the concatenated Gaussian kinds in
    /// registry order.
    pub prototypes: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub pairs: Vec<PersonPair>,
    pub records: Vec<AnnotatorRecord>,
    pub photo_album: BTreeMap<String, String>,
    pub test_pairs: Vec<String>,
    pub store: FeatureStore,
    pub truth: Truth,
}

pub const PAIRS_FILE: &str = "pairs.tsv";
pub const ANNOTATIONS_FILE: &str = "annotations.tsv";
pub const ALBUMS_FILE: &str = "albums.tsv";
pub const TEST_LIST_FILE: &str = "test_pairs.txt";
pub const FEATURES_DIR: &str = "features";
pub const TRUTH_FILE: &str = "truth.json";

impl SynthCorpus {
    pub fn write_dir(&self, dir: &Path, taxonomy: &Taxonomy) -> Result<(), SpecError> {
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|source| SpecError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        std::fs::create_dir_all(dir).map_err(|source| SpecError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write(PAIRS_FILE, annotations::write_pairs(&self.pairs))?;
        write(ANNOTATIONS_FILE, annotations::write_annotations(&self.records, taxonomy))?;
        write(ALBUMS_FILE, splits::write_albums(&self.photo_album))?;
        let mut list = self.test_pairs.join("\n");
        list.push('\n');
        write(TEST_LIST_FILE, list)?;
        write(TRUTH_FILE, serde_json::to_string_pretty(&self.truth).expect("truth serializes") + "\n")?;
        self.store
            .write_dir(&dir.join(FEATURES_DIR))
            .map_err(|e| SpecError::Invalid(e.to_string()))
    }
}

// Age indices into AGE_CLASSES.
const INFANT: usize = 0;
const CHILD: usize = 1;
const YOUNG: usize = 2;
const MIDDLE: usize = 3;
const SENIOR: usize = 4;
const UNKNOWN: usize = 5;
const MALE: usize = 0;
const FEMALE: usize = 1;

#[derive(Debug, Clone, Copy)]
struct Role {
    gender: Option<usize>,
    ages: &'static [usize],
}

impl Role {
    fn fits(&self, l: &Latent) -> bool {
        self.ages.contains(&l.age) && self.gender.is_none_or(|g| g == l.gender)
    }
}

const ADULT: &[usize] = &[YOUNG, MIDDLE];
const KID: &[usize] = &[INFANT, CHILD];

/// Typical roles of the two people in each builtin relation, by relation
/// index. Custom taxonomies beyond 16 relations fall back to adults.
fn roles(r: RelationId) -> [Role; 2] {
    let any = |ages| Role { gender: None, ages };
    let male = |ages| Role { gender: Some(MALE), ages };
    let female = |ages| Role { gender: Some(FEMALE), ages };
    match r.0 {
        0 => [male(ADULT), any(KID)],
        1 => [female(ADULT), any(KID)],
        2 => [male(&[SENIOR]), any(&[CHILD, YOUNG])],
        3 => [female(&[SENIOR]), any(&[CHILD, YOUNG])],
        5 | 6 => [any(&[CHILD, YOUNG]), any(&[CHILD, YOUNG])],
        7 => [male(ADULT), female(ADULT)],
        9 => [any(&[MIDDLE, SENIOR]), any(&[CHILD, YOUNG])],
        11 => [any(&[MIDDLE, SENIOR]), any(ADULT)],
        12..=14 => [any(&[YOUNG]), any(&[YOUNG])],
        _ => [any(ADULT), any(ADULT)],
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Orthonormal directions via Gram-Schmidt on Gaussian vectors.
fn orthonormal(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// A soft class distribution peaked at `class`.
fn soft_distribution(class: usize, n: usize, peak: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let logits: Vec<f64> = (0..n)
        .map(|i| if i == class { peak } else { 0.0 } + 0.5 * gaussian(rng))
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Exact per-relation counts by largest remainder.
fn stratified_counts(p: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|v| v * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

struct Latent {
    age: usize,
    gender: usize,
}

pub fn generate(spec: &SynthSpec, taxonomy: &Taxonomy) -> Result<SynthCorpus, SpecError> {
    spec.validate(taxonomy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_rel = taxonomy.n_relations();

    // Albums, photos, identities.
    let album_name = |a: usize| format!("al{a:03}");
    let mut album_photos: Vec<Vec<String>> = vec![Vec::new(); spec.n_albums];
    let mut album_ids: Vec<Vec<String>> = vec![Vec::new(); spec.n_albums];
    let mut photo_album = BTreeMap::new();
    let mut photo_size = BTreeMap::new();
    for p in 0..spec.n_photos {
        let a = p % spec.n_albums;
        let name = format!("ph{p:05}");
        let w = *[640.0, 800.0, 1024.0].choose(&mut rng).expect("non-empty");
        photo_size.insert(name.clone(), (w, w * 0.75));
        photo_album.insert(name.clone(), album_name(a));
        album_photos[a].push(name);
    }
    for i in 0..spec.n_identities {
        album_ids[i % spec.n_albums].push(format!("id{i:05}"));
    }

    let mut n_test_albums = (spec.test_album_fraction * spec.n_albums as f64).round() as usize;
    n_test_albums = n_test_albums.min(spec.n_albums - 1);
    let mut album_order: Vec<usize> = (0..spec.n_albums).collect();
    album_order.shuffle(&mut rng);
    let test_albums: BTreeSet<usize> = album_order[..n_test_albums].iter().copied().collect();

    // Prototypes.
    let gdim = spec.gaussian_dim();
    let dirs = orthonormal(taxonomy.n_domains() + n_rel, gdim, &mut rng);
    let beta = spec.margin / 2f64.sqrt();
    let alpha = spec.domain_weight * beta;
    let prototypes: Vec<Vec<f64>> = taxonomy
        .relations()
        .map(|r| {
            let u = &dirs[taxonomy.domain_of(r).0];
            let v = &dirs[taxonomy.n_domains() + r.0];
            u.iter().zip(v).map(|(a, b)| alpha * a + beta * b).collect()
        })
        .collect();

    // Relations, stratified then shuffled.
    let counts = stratified_counts(&spec.proportions_for(n_rel), spec.n_pairs);
    let mut rels: Vec<RelationId> = counts
        .iter()
        .enumerate()
        .flat_map(|(r, &c)| std::iter::repeat_n(RelationId(r), c))
        .collect();
    rels.shuffle(&mut rng);

    let mut latent: BTreeMap<String, Latent> = BTreeMap::new();
    let mut heads: BTreeMap<(String, String), BBox> = BTreeMap::new();
    let mut pairs = Vec::with_capacity(spec.n_pairs);
    let mut records = Vec::with_capacity(spec.n_pairs * spec.n_annotators);
    let mut test_pairs = Vec::new();
    let mut truth_rel = BTreeMap::new();
    let kinds_dims: Vec<(AttributeKind, usize)> = spec.dims.iter().map(|(k, d)| (*k, *d)).collect();
    let mut tables: BTreeMap<AttributeKind, FeatureTable> = BTreeMap::new();
    let th = GeomThresholds::default();

    for (i, &r) in rels.iter().enumerate() {
        let pair_id = format!("p{i:05}");
        let a = rng.random_range(0..spec.n_albums);
        let photo = album_photos[a].choose(&mut rng).expect("album has photos").clone();
        let role = roles(r);
        let mut picked: Vec<String> = Vec::with_capacity(2);
        for slot in role {
            let free: Vec<&String> = album_ids[a].iter().filter(|id| !picked.contains(id)).collect();
            let fitting: Vec<&String> = free
                .iter()
                .copied()
                .filter(|id| latent.get(*id).is_none_or(|l| slot.fits(l)))
                .collect();
            let pool = if fitting.is_empty() { &free } else { &fitting };
            picked.push((*pool.choose(&mut rng).expect("album has 2 identities")).clone());
        }
        for (id, role) in picked.iter().zip(role) {
            latent.entry(id.clone()).or_insert_with(|| Latent {
                age: *role.ages.choose(&mut rng).expect("role ages"),
                gender: role.gender.unwrap_or_else(|| rng.random_range(0..2)),
            });
        }
        let (iw, ih) = photo_size[&photo];
        let mut person = |id: &String| {
            let head = *heads.entry((photo.clone(), id.clone())).or_insert_with(|| {
                let w = iw * rng.random_range(0.05..0.12);
                let h = w * rng.random_range(1.1..1.3);
                BBox {
                    x: rng.random_range(0.0..iw - w),
                    y: rng.random_range(0.0..ih * 0.5),
                    w,
                    h,
                }
            });
            Person {
                identity_id: id.clone(),
                head,
            }
        };
        let pair = PersonPair {
            pair_id: pair_id.clone(),
            photo_id: photo.clone(),
            person_a: person(&picked[0]),
            person_b: person(&picked[1]),
            image_w: iw,
            image_h: ih,
        };

        // Features. Per-person blocks follow the oriented order.
        let geom = pairgeom::geom_feature(&pair, &th).map_err(|e| SpecError::Invalid(e.to_string()))?;
        let (pa, pb) = pairgeom::orient(&pair);
        let (la, lb) = (&latent[&pa.identity_id], &latent[&pb.identity_id]);
        let age_dist = |l: &Latent, rng: &mut ChaCha8Rng| {
            let shown = if rng.random_bool(0.05) { UNKNOWN } else { l.age };
            soft_distribution(shown, AGE_CLASSES.len(), 3.0, rng)
        };
        let head_age = featstore::derive_pair_age(&age_dist(la, &mut rng), &age_dist(lb, &mut rng));
        let body_age = featstore::derive_pair_age(&age_dist(la, &mut rng), &age_dist(lb, &mut rng));
        let gender_dist = |l: &Latent, rng: &mut ChaCha8Rng| soft_distribution(l.gender, GENDER_CLASSES.len(), 2.5, rng);
        let head_gender = featstore::derive_pair_gender(&gender_dist(la, &mut rng), &gender_dist(lb, &mut rng));
        let body_gender = featstore::derive_pair_gender(&gender_dist(la, &mut rng), &gender_dist(lb, &mut rng));
        let derived = [
            (AttributeKind::HeadAge, head_age),
            (AttributeKind::BodyAge, body_age),
            (AttributeKind::HeadGender, head_gender),
            (AttributeKind::BodyGender, body_gender),
        ];
        for (k, v) in derived {
            let v = v.map_err(|e| SpecError::Invalid(e.to_string()))?;
            tables.entry(k).or_default().insert(pair_id.clone(), v);
        }
        tables
            .entry(AttributeKind::HeadLocScale)
            .or_default()
            .insert(pair_id.clone(), geom.head.to_vec());
        tables
            .entry(AttributeKind::BodyLocScale)
            .or_default()
            .insert(pair_id.clone(), geom.body.to_vec());
        let mut offset = 0;
        for &(k, d) in &kinds_dims {
            let v: Vec<f64> = prototypes[r.0][offset..offset + d]
                .iter()
                .map(|m| m + gaussian(&mut rng))
                .collect();
            tables.entry(k).or_default().insert(pair_id.clone(), v);
            offset += d;
        }

        // Annotators.
        for k in 0..spec.n_annotators {
            let annotator = format!("ann{k}");
            let label = if rng.random_bool(spec.noise) {
                if rng.random_bool(0.5) {
                    None
                } else {
                    let other = (r.0 + rng.random_range(1..n_rel)) % n_rel;
                    Some(RelationId(other))
                }
            } else {
                Some(r)
            };
            let rec = match label {
                None => AnnotatorRecord::skipped(annotator, pair_id.clone()),
                Some(rel) => AnnotatorRecord::new(
                    annotator,
                    pair_id.clone(),
                    vec![LabelMark {
                        relation: rel,
                        maybe: rng.random_bool(spec.maybe_rate),
                    }],
                )
                .expect("one label"),
            };
            records.push(rec);
        }

        if test_albums.contains(&a) {
            test_pairs.push(pair_id.clone());
        }
        truth_rel.insert(pair_id, taxonomy.relation_name(r).to_string());
        pairs.push(pair);
    }

    let manifest = FeatureManifest {
        kinds: AttributeKind::ALL
            .into_iter()
            .map(|k| KindEntry {
                name: k,
                dim: spec.dims.get(&k).copied().unwrap_or_else(|| k.full_dim()),
                source: "synthetic".into(),
                file: format!("{k}.tsv"),
            })
            .collect(),
    };
    let store = FeatureStore::new(manifest, tables).map_err(|e| SpecError::Invalid(e.to_string()))?;

    let identities = album_ids
        .iter()
        .enumerate()
        .flat_map(|(a, ids)| ids.iter().map(move |id| (a, id)))
        .filter_map(|(a, id)| {
            latent.get(id).map(|l| {
                (
                    id.clone(),
                    IdentityTruth {
                        album: album_name(a),
                        age: AGE_CLASSES[l.age].to_string(),
                        gender: GENDER_CLASSES[l.gender].to_string(),
                    },
                )
            })
        })
        .collect();
    let truth = Truth {
        spec: spec.clone(),
        relations: truth_rel,
        identities,
        prototypes: taxonomy
            .relations()
            .map(|r| (taxonomy.relation_name(r).to_string(), prototypes[r.0].clone()))
            .collect(),
    };
    Ok(SynthCorpus {
        pairs,
        records,
        photo_album,
        test_pairs,
        store,
        truth,
    })
}
