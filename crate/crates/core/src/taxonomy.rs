//! Two-level label space: social domains, each owning a disjoint set of
//! social relations.
//!
//! The built-in taxonomy has 5 domains and 16 relations. The relation
//! strings are a reconstruction rather than an official list, so an alias
//! table accepts common spelling variants.
//! Alternative taxonomies can be loaded from a JSON manifest of the form
//! `{ "domains": [ { "name": ..., "relations": [ ... ] } ] }`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a domain inside a [`Taxonomy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainId(pub usize);

/// Index of a relation inside a [`Taxonomy`]. Lower index means earlier in
/// taxonomy order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub usize);

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TaxonomyError {
    #[error("unknown relation name {name:?}; nearest candidates: {}", candidates.join(", "))]
    UnknownRelation { name: String, candidates: Vec<String> },
    #[error("unknown domain name {name:?}; nearest candidates: {}", candidates.join(", "))]
    UnknownDomain { name: String, candidates: Vec<String> },
    #[error("invalid taxonomy manifest: {0}")]
    Manifest(String),
}

/// Domain and relation names of the built-in taxonomy, in index order.
const BUILTIN: &[(&str, &[&str])] = &[
    (
        "Attachment",
        &["father-child", "mother-child", "grandpa-grandchild", "grandma-grandchild"],
    ),
    ("Reciprocity", &["friends", "siblings", "classmates"]),
    ("Mating", &["lovers/spouses"]),
    (
        "Hierarchical power",
        &["presenter-audience", "teacher-student", "trainer-trainee", "leader-subordinate"],
    ),
    (
        "Coalitional groups",
        &["band members", "dance team members", "sport team members", "colleagues"],
    ),
];

const BUILTIN_ALIASES: &[(&str, &str)] = &[
    ("father child", "father-child"),
    ("mother child", "mother-child"),
    ("grandfather-grandchild", "grandpa-grandchild"),
    ("grandmother-grandchild", "grandma-grandchild"),
    ("friend", "friends"),
    ("sibling", "siblings"),
    ("classmate", "classmates"),
    ("lovers", "lovers/spouses"),
    ("spouses", "lovers/spouses"),
    ("lovers-spouses", "lovers/spouses"),
    ("couple", "lovers/spouses"),
    ("presenter-audiences", "presenter-audience"),
    ("teacher-students", "teacher-student"),
    ("trainer-trainees", "trainer-trainee"),
    ("leader-subordinates", "leader-subordinate"),
    ("band member", "band members"),
    ("band-members", "band members"),
    ("dance team member", "dance team members"),
    ("dance-team-members", "dance team members"),
    ("sport team member", "sport team members"),
    ("sports team members", "sport team members"),
    ("sport-team-members", "sport team members"),
    ("colleague", "colleagues"),
];

/// On-disk manifest shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyManifest {
    pub domains: Vec<DomainEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aliases: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub name: String,
    pub relations: Vec<String>,
}

/// Immutable domain/relation hierarchy.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    domains: Vec<String>,
    relations: Vec<String>,
    relation_domain: Vec<DomainId>,
    domain_relations: Vec<Vec<RelationId>>,
    lookup: HashMap<String, RelationId>,
    aliases: BTreeMap<String, String>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Lowercases, trims, collapses whitespace runs and drops spaces around
/// `-` and `/`.
pub fn normalize_name(s: &str) -> String {
    let collapsed = s
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .replace(" -", "-")
        .replace("- ", "-")
        .replace(" /", "/")
        .replace("/ ", "/")
}

impl Taxonomy {
    /// The 5-domain, 16-relation social taxonomy.
    pub fn builtin() -> Self {
        let manifest = TaxonomyManifest {
            domains: BUILTIN
                .iter()
                .map(|(d, rs)| DomainEntry {
                    name: d.to_string(),
                    relations: rs.iter().map(|r| r.to_string()).collect(),
                })
                .collect(),
            aliases: BUILTIN_ALIASES
                .iter()
                .map(|(a, c)| (a.to_string(), c.to_string()))
                .collect(),
        };
        Self::from_manifest(manifest).expect("builtin taxonomy is valid")
    }

    pub fn from_manifest(manifest: TaxonomyManifest) -> Result<Self, TaxonomyError> {
        if manifest.domains.is_empty() {
            return Err(TaxonomyError::Manifest("no domains".into()));
        }
        let mut domains = Vec::new();
        let mut relations = Vec::new();
        let mut relation_domain = Vec::new();
        let mut domain_relations = Vec::new();
        let mut lookup = HashMap::new();
        let mut domain_seen = HashMap::new();

        for (di, entry) in manifest.domains.iter().enumerate() {
            let dname = entry.name.trim().to_string();
            if dname.is_empty() {
                return Err(TaxonomyError::Manifest(format!("domain {di} has an empty name")));
            }
            if domain_seen.insert(normalize_name(&dname), di).is_some() {
                return Err(TaxonomyError::Manifest(format!("duplicate domain {dname:?}")));
            }
            if entry.relations.is_empty() {
                return Err(TaxonomyError::Manifest(format!("domain {dname:?} has no relations")));
            }
            let mut owned = Vec::new();
            for r in &entry.relations {
                let canonical = normalize_name(r);
                if canonical.is_empty() {
                    return Err(TaxonomyError::Manifest(format!(
                        "empty relation name in domain {dname:?}"
                    )));
                }
                let id = RelationId(relations.len());
                if lookup.insert(canonical.clone(), id).is_some() {
                    return Err(TaxonomyError::Manifest(format!("duplicate relation {canonical:?}")));
                }
                relations.push(canonical);
                relation_domain.push(DomainId(di));
                owned.push(id);
            }
            domains.push(dname);
            domain_relations.push(owned);
        }

        let mut aliases = BTreeMap::new();
        for (alias, target) in &manifest.aliases {
            let a = normalize_name(alias);
            let t = normalize_name(target);
            if lookup.contains_key(&a) {
                return Err(TaxonomyError::Manifest(format!(
                    "alias {a:?} shadows a canonical relation name"
                )));
            }
            if !lookup.contains_key(&t) {
                return Err(TaxonomyError::Manifest(format!(
                    "alias {a:?} points at unknown relation {t:?}"
                )));
            }
            aliases.insert(a, t);
        }

        Ok(Self {
            domains,
            relations,
            relation_domain,
            domain_relations,
            lookup,
            aliases,
        })
    }

    pub fn from_json(s: &str) -> Result<Self, TaxonomyError> {
        let manifest: TaxonomyManifest =
            serde_json::from_str(s).map_err(|e| TaxonomyError::Manifest(e.to_string()))?;
        Self::from_manifest(manifest)
    }

    pub fn manifest(&self) -> TaxonomyManifest {
        TaxonomyManifest {
            domains: self
                .domains
                .iter()
                .zip(&self.domain_relations)
                .map(|(d, rs)| DomainEntry {
                    name: d.clone(),
                    relations: rs.iter().map(|r| self.relations[r.0].clone()).collect(),
                })
                .collect(),
            aliases: self.aliases.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes")
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn domains(&self) -> impl Iterator<Item = DomainId> + '_ {
        (0..self.domains.len()).map(DomainId)
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        (0..self.relations.len()).map(RelationId)
    }

    /// Owning domain of a relation.
    ///
    /// Panics if `r` does not belong to this taxonomy; ids obtained from
    /// [`Taxonomy::parse_relation`] or [`Taxonomy::relations`] always do.
    pub fn domain_of(&self, r: RelationId) -> DomainId {
        self.relation_domain[r.0]
    }

    /// Relations of a domain, in taxonomy order.
    pub fn relations_of(&self, d: DomainId) -> &[RelationId] {
        &self.domain_relations[d.0]
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        &self.relations[r.0]
    }

    pub fn domain_name(&self, d: DomainId) -> &str {
        &self.domains[d.0]
    }

    pub fn relation_names(&self) -> Vec<String> {
        self.relations.clone()
    }

    pub fn domain_names(&self) -> Vec<String> {
        self.domains.clone()
    }

    pub fn parse_relation(&self, s: &str) -> Result<RelationId, TaxonomyError> {
        let key = normalize_name(s);
        if let Some(&id) = self.lookup.get(&key) {
            return Ok(id);
        }
        if let Some(target) = self.aliases.get(&key) {
            return Ok(self.lookup[target]);
        }
        let pool = self.relations.iter().chain(self.aliases.keys());
        Err(TaxonomyError::UnknownRelation {
            name: s.to_string(),
            candidates: nearest(&key, pool),
        })
    }

    pub fn parse_domain(&self, s: &str) -> Result<DomainId, TaxonomyError> {
        let key = normalize_name(s);
        if let Some(i) = self.domains.iter().position(|d| normalize_name(d) == key) {
            return Ok(DomainId(i));
        }
        Err(TaxonomyError::UnknownDomain {
            name: s.to_string(),
            candidates: nearest(&key, self.domains.iter()),
        })
    }

    /// Domains with a single relation. Leaving that relation out would leave
    /// the domain without training data.
    pub fn single_relation_domains(&self) -> Vec<DomainId> {
        self.domains()
            .filter(|&d| self.relations_of(d).len() == 1)
            .collect()
    }
}

fn nearest<'a>(key: &str, pool: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut scored: Vec<(usize, &String)> = pool
        .map(|c| (strsim::levenshtein(key, &normalize_name(c)), c))
        .collect();
    scored.sort();
    scored.into_iter().take(3).map(|(_, c)| c.clone()).collect()
}
