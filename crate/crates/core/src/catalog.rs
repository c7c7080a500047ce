//! Database schemas with the statistics the cost model consumes.
//!
//! The order of relations, and of attributes within each relation, is
//! canonical: it fixes the column layout of every state vector built against
//! the catalog, so two catalogs with the same relations in a different order
//! are different catalogs.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeStats {
    pub name: String,
    #[serde(rename = "distinct")]
    pub distinct_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationStats {
    pub name: String,
    #[serde(rename = "rows")]
    pub row_count: u64,
    pub attributes: Vec<AttributeStats>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDocument {
    relations: Vec<RelationStats>,
}

/// Immutable schema plus statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    relations: Vec<RelationStats>,
    /// Global index of each relation's first attribute.
    attribute_offsets: Vec<usize>,
    relation_index: HashMap<String, usize>,
    num_attributes: usize,
}

impl Catalog {
    pub fn new(relations: Vec<RelationStats>) -> Result<Self> {
        if relations.len() < 2 {
            return Err(Error::Statistics(format!(
                "a catalog needs at least 2 relations, got {}",
                relations.len()
            )));
        }
        let mut relation_index = HashMap::with_capacity(relations.len());
        let mut attribute_offsets = Vec::with_capacity(relations.len());
        let mut num_attributes = 0;
        for (i, rel) in relations.iter().enumerate() {
            if relation_index.insert(rel.name.clone(), i).is_some() {
                return Err(Error::DuplicateName {
                    kind: "relation",
                    name: rel.name.clone(),
                });
            }
            if rel.row_count == 0 {
                return Err(Error::Statistics(format!(
                    "relation `{}` has zero rows",
                    rel.name
                )));
            }
            if rel.attributes.is_empty() {
                return Err(Error::Statistics(format!(
                    "relation `{}` has no attributes",
                    rel.name
                )));
            }
            let mut seen = HashMap::new();
            for attr in &rel.attributes {
                if seen.insert(attr.name.as_str(), ()).is_some() {
                    return Err(Error::DuplicateName {
                        kind: "attribute",
                        name: format!("{}.{}", rel.name, attr.name),
                    });
                }
                if attr.distinct_count == 0 || attr.distinct_count > rel.row_count {
                    return Err(Error::Statistics(format!(
                        "{}.{} has distinct count {} outside [1, {}]",
                        rel.name, attr.name, attr.distinct_count, rel.row_count
                    )));
                }
            }
            attribute_offsets.push(num_attributes);
            num_attributes += rel.attributes.len();
        }
        Ok(Self {
            relations,
            attribute_offsets,
            relation_index,
            num_attributes,
        })
    }

    /// Number of relations (`n`).
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Total number of attributes across all relations (`k`).
    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    pub fn relations(&self) -> &[RelationStats] {
        &self.relations
    }

    pub fn relation(&self, name: &str) -> Result<&RelationStats> {
        self.relation_index(name).map(|i| &self.relations[i])
    }

    pub fn relation_index(&self, name: &str) -> Result<usize> {
        self.relation_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn attribute(&self, relation: &str, attribute: &str) -> Result<&AttributeStats> {
        let rel = self.relation(relation)?;
        rel.attributes
            .iter()
            .find(|a| a.name == attribute)
            .ok_or_else(|| Error::UnknownAttribute {
                relation: relation.to_string(),
                attribute: attribute.to_string(),
            })
    }

    /// Column of `relation.attribute` in the selection vector: relations in
    /// canonical order, then attributes in declaration order.
    pub fn global_attribute_index(&self, relation: &str, attribute: &str) -> Result<usize> {
        let ri = self.relation_index(relation)?;
        let pos = self.relations[ri]
            .attributes
            .iter()
            .position(|a| a.name == attribute)
            .ok_or_else(|| Error::UnknownAttribute {
                relation: relation.to_string(),
                attribute: attribute.to_string(),
            })?;
        Ok(self.attribute_offsets[ri] + pos)
    }

    pub fn to_json(&self) -> String {
        let doc = CatalogDocument {
            relations: self.relations.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("catalog serializes")
    }

    /// Stable hex digest of the canonical document; checkpoints carry it so a
    /// model is never applied to a catalog with a different vector layout.
    pub fn fingerprint(&self) -> String {
        let doc = CatalogDocument {
            relations: self.relations.clone(),
        };
        let bytes = serde_json::to_vec(&doc).expect("catalog serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn load_catalog(text: &str) -> Result<Catalog> {
    let doc: CatalogDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Catalog::new(doc.relations)
}

/// Parameters for [`generate_catalog`]. Ranges are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CatalogSpec {
    pub n_relations: usize,
    pub row_range: (u64, u64),
    pub attrs_per_relation: (usize, usize),
}

impl Default for CatalogSpec {
    fn default() -> Self {
        Self {
            n_relations: 10,
            row_range: (500, 10_000),
            attrs_per_relation: (2, 4),
        }
    }
}

/// Synthetic catalog. Relations are named `R1..Rn`; the first attribute of
/// each is `id`, a key (distinct = rows), the rest `a1, a2, ...` with
/// log-uniform distinct counts. Row counts are log-uniform over the range.
pub fn generate_catalog(seed: u64, spec: CatalogSpec) -> Result<Catalog> {
    let CatalogSpec {
        n_relations,
        row_range: (min_rows, max_rows),
        attrs_per_relation: (min_attrs, max_attrs),
    } = spec;
    if n_relations < 2 {
        return Err(Error::InvalidRange(format!(
            "n_relations must be at least 2, got {n_relations}"
        )));
    }
    if min_rows == 0 || min_rows > max_rows {
        return Err(Error::InvalidRange(format!(
            "row range [{min_rows}, {max_rows}]"
        )));
    }
    if min_attrs == 0 || min_attrs > max_attrs {
        return Err(Error::InvalidRange(format!(
            "attribute range [{min_attrs}, {max_attrs}]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relations = (1..=n_relations)
        .map(|i| {
            let rows = log_uniform(&mut rng, min_rows, max_rows);
            let n_attrs = rng.random_range(min_attrs..=max_attrs);
            let mut attributes = vec![AttributeStats {
                name: "id".to_string(),
                distinct_count: rows,
            }];
            for a in 1..n_attrs {
                let floor = (rows / 100).max(1);
                attributes.push(AttributeStats {
                    name: format!("a{a}"),
                    distinct_count: log_uniform(&mut rng, floor, rows),
                });
            }
            RelationStats {
                name: format!("R{i}"),
                row_count: rows,
                attributes,
            }
        })
        .collect();
    Catalog::new(relations)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: u64, hi: u64) -> u64 {
    if lo == hi {
        return lo;
    }
    let (l, h) = ((lo as f64).ln(), (hi as f64 + 1.0).ln());
    let v = rng.random_range(l..h).exp().floor() as u64;
    v.clamp(lo, hi)
}
