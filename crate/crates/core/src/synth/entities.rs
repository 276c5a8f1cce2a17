use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::tokenize;
use crate::types::DomainTag;

const BUILTIN: &str = include_str!("../../data/entities.json");

/// Entity lists plus the metadata the pattern generators need.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCatalog {
    pub country: Vec<String>,
    pub animal: Vec<String>,
    pub color: Vec<String>,
    /// Region name → member countries.
    pub regions: BTreeMap<String, Vec<String>>,
    /// Animals from smallest to largest.
    pub animal_size_order: Vec<String>,
}

impl EntityCatalog {
    pub fn builtin() -> Self {
        let catalog: Self = serde_json::from_str(BUILTIN).expect("bundled entity catalog parses");
        catalog.validate().expect("bundled entity catalog is valid");
        catalog
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let catalog: Self = serde_json::from_str(&text)?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<()> {
        for domain in [DomainTag::Country, DomainTag::Animal, DomainTag::Color] {
            self.vocabulary(domain)?;
        }
        let countries: HashSet<&String> = self.country.iter().collect();
        for (region, members) in &self.regions {
            if let Some(m) = members.iter().find(|m| !countries.contains(m)) {
                return Err(Error::Vocabulary(format!(
                    "region {region} lists unknown country {m:?}"
                )));
            }
        }
        let animals: HashSet<&String> = self.animal.iter().collect();
        let ordered: HashSet<&String> = self.animal_size_order.iter().collect();
        if animals != ordered || ordered.len() != self.animal_size_order.len() {
            return Err(Error::Vocabulary(
                "animal_size_order must be a permutation of the animals".into(),
            ));
        }
        Ok(())
    }

    pub fn vocabulary(&self, domain: DomainTag) -> Result<EntityVocabulary> {
        let entities = match domain {
            DomainTag::Country => &self.country,
            DomainTag::Animal => &self.animal,
            DomainTag::Color => &self.color,
            other => return Err(Error::Vocabulary(format!("no built-in entity list for {other}"))),
        };
        EntityVocabulary::new(domain, entities.clone())
    }

    pub fn region(&self, name: &str) -> Result<&[String]> {
        self.regions
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Vocabulary(format!("unknown region {name:?}")))
    }
}

/// Expected entity count for the ICL domains.
pub fn expected_entity_count(domain: DomainTag) -> Option<usize> {
    match domain {
        DomainTag::Country => Some(25),
        DomainTag::Animal => Some(16),
        DomainTag::Color => Some(15),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityVocabulary {
    pub domain: DomainTag,
    pub entities: Vec<String>,
}

impl EntityVocabulary {
    /// Checks distinctness, the per-domain count, and that every entity is a
    /// single token; the error lists each offending entity.
    pub fn new(domain: DomainTag, entities: Vec<String>) -> Result<Self> {
        if let Some(n) = expected_entity_count(domain) {
            if entities.len() != n {
                return Err(Error::Vocabulary(format!(
                    "{domain} needs {n} entities, got {}",
                    entities.len()
                )));
            }
        }
        let mut seen = HashSet::new();
        let mut problems = Vec::new();
        for e in &entities {
            if !seen.insert(e) {
                problems.push(format!("{e:?}: duplicate"));
            }
            let n = tokenize(e).len();
            if n != 1 {
                problems.push(format!("{e:?}: {n} tokens"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Vocabulary(problems.join("; ")));
        }
        Ok(Self { domain, entities })
    }

    /// A custom vocabulary (no count requirement).
    pub fn custom(entities: Vec<String>) -> Result<Self> {
        Self::new(DomainTag::Custom, entities)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.entities.iter().any(|e| e == entity)
    }

    /// The first `n` entities, as a custom vocabulary.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n > self.entities.len() {
            return Err(Error::NotEnoughEntities {
                needed: n,
                available: self.entities.len(),
            });
        }
        Self::custom(self.entities[..n].to_vec())
    }
}
