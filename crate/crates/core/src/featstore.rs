//! Attribute registry, feature files, per-attribute preprocessing and fusion.
//!
//! Every pair is described by up to 12 attribute blocks. Blocks are stored one
//! TSV file per kind (`pair_id v0 v1 ...`) next to a JSON manifest listing the
//! kinds, their dimensions and where they came from. Fusion concatenates the
//! requested blocks in registry order and z-scores each dimension with
//! statistics from the training split.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("missing feature {kind} for pair {pair_id}")]
    Missing { pair_id: String, kind: AttributeKind },
    #[error("input error: {0}")]
    Input(String),
    #[error("{file}, line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> FeatureError {
    FeatureError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// The 12 attribute categories, in registry (fusion) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    HeadAge,
    HeadGender,
    HeadLocScale,
    HeadAppearance,
    HeadPose,
    FaceEmotion,
    BodyAge,
    BodyGender,
    BodyLocScale,
    Clothing,
    Proximity,
    Activity,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 12] = [
        AttributeKind::HeadAge,
        AttributeKind::HeadGender,
        AttributeKind::HeadLocScale,
        AttributeKind::HeadAppearance,
        AttributeKind::HeadPose,
        AttributeKind::FaceEmotion,
        AttributeKind::BodyAge,
        AttributeKind::BodyGender,
        AttributeKind::BodyLocScale,
        AttributeKind::Clothing,
        AttributeKind::Proximity,
        AttributeKind::Activity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttributeKind::HeadAge => "head_age",
            AttributeKind::HeadGender => "head_gender",
            AttributeKind::HeadLocScale => "head_loc_scale",
            AttributeKind::HeadAppearance => "head_appearance",
            AttributeKind::HeadPose => "head_pose",
            AttributeKind::FaceEmotion => "face_emotion",
            AttributeKind::BodyAge => "body_age",
            AttributeKind::BodyGender => "body_gender",
            AttributeKind::BodyLocScale => "body_loc_scale",
            AttributeKind::Clothing => "clothing",
            AttributeKind::Proximity => "proximity",
            AttributeKind::Activity => "activity",
        }
    }

    /// Extracted from the head region (as opposed to the body region).
    pub fn is_head(self) -> bool {
        matches!(
            self,
            AttributeKind::HeadAge
                | AttributeKind::HeadGender
                | AttributeKind::HeadLocScale
                | AttributeKind::HeadAppearance
                | AttributeKind::HeadPose
                | AttributeKind::FaceEmotion
        )
    }

    /// Block dimension at full scale. Per-person extractor outputs are stored
    /// person A then person B; age and gender append the derived pair slots.
    pub fn full_dim(self) -> usize {
        match self {
            AttributeKind::HeadAge | AttributeKind::BodyAge => PAIR_AGE_DIM,
            AttributeKind::HeadGender | AttributeKind::BodyGender => PAIR_GENDER_DIM,
            AttributeKind::HeadLocScale | AttributeKind::BodyLocScale => crate::pairgeom::RegionGeom::DIM,
            AttributeKind::HeadAppearance => 2 * 40,
            AttributeKind::HeadPose => 2 * 5,
            AttributeKind::FaceEmotion => 2 * 7,
            AttributeKind::Clothing => 2 * 8,
            AttributeKind::Proximity => PROXIMITY_POOLED_DIM,
            AttributeKind::Activity => 1024,
        }
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttributeKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase().replace(['-', ' '], "_");
        AttributeKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| FeatureError::Input(format!("unknown attribute kind {s:?}")))
    }
}

/// Parses `all` or a comma-separated list of kind names.
pub fn parse_kinds(s: &str) -> Result<Vec<AttributeKind>, FeatureError> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(AttributeKind::ALL.to_vec());
    }
    let mut kinds = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<AttributeKind>, _>>()?;
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        return Err(FeatureError::Input("no attribute kinds given".into()));
    }
    Ok(kinds)
}

// ---------------------------------------------------------------------------
// Manifest and registry

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindEntry {
    pub name: AttributeKind,
    pub dim: usize,
    /// External model name, or "synthetic".
    pub source: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub kinds: Vec<KindEntry>,
}

impl FeatureManifest {
    pub fn entry(&self, kind: AttributeKind) -> Option<&KindEntry> {
        self.kinds.iter().find(|e| e.name == kind)
    }
}

/// Kind dimensions, always iterated in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRegistry {
    dims: BTreeMap<AttributeKind, usize>,
}

impl FeatureRegistry {
    pub fn new(dims: impl IntoIterator<Item = (AttributeKind, usize)>) -> Result<Self, FeatureError> {
        let mut map = BTreeMap::new();
        for (k, d) in dims {
            if d == 0 {
                return Err(FeatureError::Input(format!("kind {k} has dimension 0")));
            }
            if map.insert(k, d).is_some() {
                return Err(FeatureError::Input(format!("kind {k} listed twice")));
            }
        }
        Ok(Self { dims: map })
    }

    pub fn full_scale() -> Self {
        Self::new(AttributeKind::ALL.map(|k| (k, k.full_dim()))).expect("valid dims")
    }

    pub fn from_manifest(m: &FeatureManifest) -> Result<Self, FeatureError> {
        Self::new(m.kinds.iter().map(|e| (e.name, e.dim)))
    }

    pub fn dim(&self, kind: AttributeKind) -> Option<usize> {
        self.dims.get(&kind).copied()
    }

    pub fn kinds(&self) -> impl Iterator<Item = (AttributeKind, usize)> + '_ {
        self.dims.iter().map(|(&k, &d)| (k, d))
    }

    pub fn total_dim(&self) -> usize {
        self.dims.values().sum()
    }
}

// ---------------------------------------------------------------------------
// Feature files

pub type FeatureTable = BTreeMap<String, Vec<f64>>;

pub fn feature_header(dim: usize) -> String {
    let mut h = String::from("pair_id");
    for i in 0..dim {
        let _ = write!(h, "\tv{i}");
    }
    h
}

/// Rows are written in key order; floats use the shortest representation that
/// parses back to the same value.
pub fn write_feature_table(table: &FeatureTable, dim: usize) -> String {
    let mut out = feature_header(dim);
    out.push('\n');
    for (id, values) in table {
        out.push_str(id);
        for v in values {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_feature_table(text: &str, dim: usize, file: &str) -> Result<FeatureTable, FeatureError> {
    let perr = |line: usize, message: String| FeatureError::Parse {
        file: file.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, h)) if h == feature_header(dim) => {}
        Some((n, h)) => {
            let found = h.split('\t').count().saturating_sub(1);
            return Err(perr(n, format!("header does not match dimension {dim} (found {found} value columns)")));
        }
        None => return Err(perr(1, "empty file".into())),
    }
    let mut table = FeatureTable::new();
    for (n, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or("").trim();
        if id.is_empty() {
            return Err(perr(n, "empty pair_id".into()));
        }
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| perr(n, format!("bad value {f:?}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != dim {
            return Err(perr(n, format!("expected {dim} values, found {}", values.len())));
        }
        if table.insert(id.to_string(), values).is_some() {
            return Err(perr(n, format!("duplicate pair_id {id}")));
        }
    }
    Ok(table)
}

/// Feature tables of every kind in a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub manifest: FeatureManifest,
    pub registry: FeatureRegistry,
    tables: BTreeMap<AttributeKind, FeatureTable>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl FeatureStore {
    pub fn new(manifest: FeatureManifest, tables: BTreeMap<AttributeKind, FeatureTable>) -> Result<Self, FeatureError> {
        let registry = FeatureRegistry::from_manifest(&manifest)?;
        for (kind, table) in &tables {
            let dim = registry
                .dim(*kind)
                .ok_or_else(|| FeatureError::Input(format!("table for {kind} not in manifest")))?;
            if let Some((id, v)) = table.iter().find(|(_, v)| v.len() != dim) {
                return Err(FeatureError::Shape {
                    expected: format!("{kind} block of {dim}"),
                    actual: format!("{} values for {id}", v.len()),
                });
            }
        }
        Ok(Self {
            manifest,
            registry,
            tables,
        })
    }

    pub fn table(&self, kind: AttributeKind) -> Option<&FeatureTable> {
        self.tables.get(&kind)
    }

    pub fn block(&self, pair_id: &str, kind: AttributeKind) -> Result<&[f64], FeatureError> {
        self.tables
            .get(&kind)
            .and_then(|t| t.get(pair_id))
            .map(Vec::as_slice)
            .ok_or_else(|| FeatureError::Missing {
                pair_id: pair_id.to_string(),
                kind,
            })
    }

    pub fn load_dir(dir: &Path) -> Result<Self, FeatureError> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
        let manifest: FeatureManifest = serde_json::from_str(&text).map_err(|e| FeatureError::Parse {
            file: mpath.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let mut tables = BTreeMap::new();
        for e in &manifest.kinds {
            let path = dir.join(&e.file);
            let text = std::fs::read_to_string(&path).map_err(|err| io_err(&path, err))?;
            tables.insert(e.name, parse_feature_table(&text, e.dim, &e.file)?);
        }
        Self::new(manifest, tables)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), FeatureError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for e in &self.manifest.kinds {
            if let Some(t) = self.tables.get(&e.name) {
                let path = dir.join(&e.file);
                std::fs::write(&path, write_feature_table(t, e.dim)).map_err(|err| io_err(&path, err))?;
            }
        }
        let mpath = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&mpath, json + "\n").map_err(|e| io_err(&mpath, e))
    }
}

// ---------------------------------------------------------------------------
// Proximity tensors

pub const PROXIMITY_CHANNELS: usize = 338;
pub const PROXIMITY_SIDE: usize = 50;
pub const PROXIMITY_POOLED_DIM: usize = PROXIMITY_SIDE * PROXIMITY_SIDE;
pub const PRX_MAGIC: &[u8; 4] = b"PRX1";

/// Channel-major `C x H x W` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ProximityTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, FeatureError> {
        if data.len() != channels * height * width {
            return Err(FeatureError::Shape {
                expected: format!("{channels}x{height}x{width} = {} values", channels * height * width),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn at(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height + i) * self.width + j]
    }

    /// `PRX1`, three little-endian u32 dims, then little-endian f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(PRX_MAGIC);
        for d in [self.channels, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        if bytes.len() < 16 || &bytes[..4] != PRX_MAGIC {
            return Err(FeatureError::Input("not a PRX1 proximity tensor".into()));
        }
        let dim = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes")) as usize;
        let (c, h, w) = (dim(0), dim(1), dim(2));
        let body = &bytes[16..];
        if body.len() != 4 * c * h * w {
            return Err(FeatureError::Shape {
                expected: format!("{} bytes of data for {c}x{h}x{w}", 4 * c * h * w),
                actual: format!("{} bytes", body.len()),
            });
        }
        let data = body
            .chunks_exact(4)
            .map(|ch| f32::from_le_bytes(ch.try_into().expect("4 bytes")))
            .collect();
        Self::new(c, h, w, data)
    }
}

/// Elementwise maximum over channels, flattened row-major.
pub fn max_over_channels(t: &ProximityTensor) -> Vec<f64> {
    let plane = t.height * t.width;
    let mut out = vec![f64::NEG_INFINITY; plane];
    for ch in t.data.chunks_exact(plane) {
        for (o, &v) in out.iter_mut().zip(ch) {
            *o = o.max(v as f64);
        }
    }
    out
}

/// Pools a full-size `338 x 50 x 50` proximity tensor into 2500 values.
pub fn pool_proximity(t: &ProximityTensor) -> Result<Vec<f64>, FeatureError> {
    let expected = (PROXIMITY_CHANNELS, PROXIMITY_SIDE, PROXIMITY_SIDE);
    if (t.channels, t.height, t.width) != expected {
        return Err(FeatureError::Shape {
            expected: format!("{}x{}x{}", expected.0, expected.1, expected.2),
            actual: format!("{}x{}x{}", t.channels, t.height, t.width),
        });
    }
    Ok(max_over_channels(t))
}

// ---------------------------------------------------------------------------
// Derived pair attributes

pub const AGE_CLASSES: [&str; 6] = ["infant", "child", "young", "middleAge", "senior", "unknown"];
pub const GENDER_CLASSES: [&str; 2] = ["male", "female"];
pub const AGE_DIFF_SLOTS: [&str; 3] = ["smallAgeDiff", "middleAgeDiff", "largeAgeDiff"];
pub const GENDER_PAIR_SLOTS: [&str; 2] = ["sameGender", "diffGender"];
pub const PAIR_AGE_DIM: usize = 2 * AGE_CLASSES.len() + AGE_DIFF_SLOTS.len();
pub const PAIR_GENDER_DIM: usize = 2 * GENDER_CLASSES.len() + GENDER_PAIR_SLOTS.len();
const UNKNOWN_AGE: usize = 5;

fn check_distribution(p: &[f64], n: usize, what: &str) -> Result<(), FeatureError> {
    if p.len() != n {
        return Err(FeatureError::Shape {
            expected: format!("{n}-class {what} distribution"),
            actual: format!("{} values", p.len()),
        });
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(FeatureError::Input(format!("{what} distribution has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(FeatureError::Input(format!("{what} distribution sums to {s}, not 1")));
    }
    Ok(())
}

fn argmax(p: &[f64]) -> usize {
    crate::svm::argmax_first(p)
}

/// One-hot age-difference slot from the ordinal gap of the two argmax
/// classes: gap 0-1 small, 2 middle, 3+ large. All zero if either is unknown.
pub fn age_difference_slots(age_a: &[f64], age_b: &[f64]) -> Result<[f64; 3], FeatureError> {
    check_distribution(age_a, AGE_CLASSES.len(), "age")?;
    check_distribution(age_b, AGE_CLASSES.len(), "age")?;
    let (ia, ib) = (argmax(age_a), argmax(age_b));
    let mut slots = [0.0; 3];
    if ia != UNKNOWN_AGE && ib != UNKNOWN_AGE {
        let slot = match ia.abs_diff(ib) {
            0 | 1 => 0,
            2 => 1,
            _ => 2,
        };
        slots[slot] = 1.0;
    }
    Ok(slots)
}

/// `age_a(6) age_b(6) [small, middle, large]`.
pub fn derive_pair_age(age_a: &[f64], age_b: &[f64]) -> Result<Vec<f64>, FeatureError> {
    let slots = age_difference_slots(age_a, age_b)?;
    let mut v = Vec::with_capacity(PAIR_AGE_DIM);
    v.extend_from_slice(age_a);
    v.extend_from_slice(age_b);
    v.extend(slots);
    Ok(v)
}

pub fn gender_pair_slots(gender_a: &[f64], gender_b: &[f64]) -> Result<[f64; 2], FeatureError> {
    check_distribution(gender_a, GENDER_CLASSES.len(), "gender")?;
    check_distribution(gender_b, GENDER_CLASSES.len(), "gender")?;
    Ok(if argmax(gender_a) == argmax(gender_b) {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    })
}

/// `gender_a(2) gender_b(2) [same, diff]`.
pub fn derive_pair_gender(gender_a: &[f64], gender_b: &[f64]) -> Result<Vec<f64>, FeatureError> {
    let slots = gender_pair_slots(gender_a, gender_b)?;
    let mut v = Vec::with_capacity(PAIR_GENDER_DIM);
    v.extend_from_slice(gender_a);
    v.extend_from_slice(gender_b);
    v.extend(slots);
    Ok(v)
}

// ---------------------------------------------------------------------------
// Standardization and fusion

/// Per-dimension z-score. Dimensions that are constant on the fitting rows are
/// only centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self, FeatureError> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.is_empty() {
            return Err(FeatureError::Input("cannot standardize on zero rows".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 * m.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, v: &mut [f64]) {
        for ((x, m), s) in v.iter_mut().zip(&self.mean).zip(&self.scale) {
            *x = (*x - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedVector {
    pub pair_id: String,
    pub kinds: Vec<AttributeKind>,
    pub values: Vec<f64>,
}

/// Concatenates blocks in registry order; optionally standardized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fuser {
    kinds: Vec<(AttributeKind, usize)>,
    standardizer: Option<Standardizer>,
}

impl Fuser {
    pub fn new(registry: &FeatureRegistry, kinds: &[AttributeKind]) -> Result<Self, FeatureError> {
        let mut sorted = kinds.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.is_empty() {
            return Err(FeatureError::Input("no kinds to fuse".into()));
        }
        let kinds = sorted
            .into_iter()
            .map(|k| {
                registry
                    .dim(k)
                    .map(|d| (k, d))
                    .ok_or_else(|| FeatureError::Input(format!("kind {k} not in the feature manifest")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            kinds,
            standardizer: None,
        })
    }

    pub fn kinds(&self) -> Vec<AttributeKind> {
        self.kinds.iter().map(|(k, _)| *k).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.kinds.iter().map(|(_, d)| d).sum()
    }

    /// `(kind, start, len)` of every block inside a fused vector.
    pub fn layout(&self) -> Vec<(AttributeKind, usize, usize)> {
        let mut start = 0;
        self.kinds
            .iter()
            .map(|&(k, d)| {
                let item = (k, start, d);
                start += d;
                item
            })
            .collect()
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    /// Plain concatenation, no standardization.
    pub fn concat(&self, store: &FeatureStore, pair_id: &str) -> Result<Vec<f64>, FeatureError> {
        let mut v = Vec::with_capacity(self.total_dim());
        for &(k, _) in &self.kinds {
            v.extend_from_slice(store.block(pair_id, k)?);
        }
        Ok(v)
    }

    /// Fits standardization statistics on the given (training) pairs.
    pub fn fit<S: AsRef<str>>(mut self, store: &FeatureStore, train_ids: &[S]) -> Result<Self, FeatureError> {
        let rows = train_ids
            .iter()
            .map(|id| self.concat(store, id.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        self.standardizer = Some(Standardizer::fit(rows.iter().map(Vec::as_slice), self.total_dim())?);
        Ok(self)
    }

    pub fn fuse(&self, store: &FeatureStore, pair_id: &str) -> Result<FusedVector, FeatureError> {
        let mut values = self.concat(store, pair_id)?;
        if let Some(s) = &self.standardizer {
            s.apply(&mut values);
        }
        Ok(FusedVector {
            pair_id: pair_id.to_string(),
            kinds: self.kinds(),
            values,
        })
    }

    pub fn fuse_all<S: AsRef<str>>(&self, store: &FeatureStore, ids: &[S]) -> Result<Vec<FusedVector>, FeatureError> {
        ids.iter().map(|id| self.fuse(store, id.as_ref())).collect()
    }

    /// Block of `kind` inside a fused vector produced by this fuser.
    pub fn slice<'a>(&self, fused: &'a FusedVector, kind: AttributeKind) -> Option<&'a [f64]> {
        self.layout()
            .into_iter()
            .find(|(k, _, _)| *k == kind)
            .map(|(_, s, d)| &fused.values[s..s + d])
    }
}

pub fn write_fused(rows: &[FusedVector]) -> String {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let table: FeatureTable = rows.iter().map(|r| (r.pair_id.clone(), r.values.clone())).collect();
    write_feature_table(&table, dim)
}

/// Reads a fused-vector TSV; the dimension is taken from the header.
pub fn parse_fused(text: &str, file: &str) -> Result<FeatureTable, FeatureError> {
    let dim = text
        .lines()
        .next()
        .map(|h| h.trim_end_matches('\r').split('\t').count().saturating_sub(1))
        .unwrap_or(0);
    parse_feature_table(text, dim, file)
}
