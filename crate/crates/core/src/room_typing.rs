//! Rule-based room typing over tag predictions.
//!
//! Each image carries scene, concept and object labels from an upstream
//! multi-head classifier. An ordered [`RuleTable`] turns those labels into a
//! coarse [`RoomType`]; the first matching rule wins and [`RoomType::Other`]
//! is the fallback.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{canonical_label, parse_json, CatalogError, PropertyCatalog, TagSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoomType {
    #[serde(rename = "bedroom")]
    Bedroom,
    #[serde(rename = "living room")]
    LivingRoom,
    #[serde(rename = "bathroom")]
    Bathroom,
    #[serde(rename = "other")]
    Other,
}

impl RoomType {
    pub const ALL: [RoomType; 4] = [
        RoomType::Bedroom,
        RoomType::LivingRoom,
        RoomType::Bathroom,
        RoomType::Other,
    ];

    /// Canonical name, as used for metadata room counts and group ids.
    pub fn as_str(self) -> &'static str {
        match self {
            RoomType::Bedroom => "bedroom",
            RoomType::LivingRoom => "living room",
            RoomType::Bathroom => "bathroom",
            RoomType::Other => "other",
        }
    }
}

impl fmt::Display for RoomType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoomType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let label = canonical_label(s);
        RoomType::ALL
            .into_iter()
            .find(|rt| rt.as_str() == label)
            .ok_or_else(|| format!("unknown room type `{s}`"))
    }
}

/// One row of the rule table. Empty lists impose no constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub target: RoomType,
    /// Any-of: the image must carry at least one of these scenes.
    #[serde(default)]
    pub scenes: Vec<String>,
    /// All-of.
    #[serde(default)]
    pub concepts: Vec<String>,
    /// All-of.
    #[serde(default)]
    pub objects: Vec<String>,
    /// None-of.
    #[serde(default)]
    pub exclude_concepts: Vec<String>,
    /// None-of.
    #[serde(default)]
    pub exclude_objects: Vec<String>,
}

impl Rule {
    pub fn matches(&self, tags: &TagSet) -> bool {
        let has = |list: &[String], label: &String| list.contains(label);
        (self.scenes.is_empty() || self.scenes.iter().any(|s| has(&tags.scenes, s)))
            && self.concepts.iter().all(|c| has(&tags.concepts, c))
            && self.objects.iter().all(|o| has(&tags.objects, o))
            && !self.exclude_concepts.iter().any(|c| has(&tags.concepts, c))
            && !self.exclude_objects.iter().any(|o| has(&tags.objects, o))
    }

    fn canonicalize(&mut self) {
        for list in [
            &mut self.scenes,
            &mut self.concepts,
            &mut self.objects,
            &mut self.exclude_concepts,
            &mut self.exclude_objects,
        ] {
            for label in list.iter_mut() {
                *label = canonical_label(label);
            }
        }
    }
}

/// Ordered rules; first match wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTable {
    pub rules: Vec<Rule>,
}

fn labels(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| canonical_label(s)).collect()
}

impl Default for RuleTable {
    /// The built-in table, in Bathroom, Bedroom, Living Room precedence.
    fn default() -> Self {
        let interior = ["Guestroom", "Property Interior", "Undetermined"];
        RuleTable {
            rules: vec![
                Rule {
                    target: RoomType::Bathroom,
                    scenes: labels(&["Bathroom"]),
                    concepts: vec![],
                    objects: vec![],
                    exclude_concepts: vec![],
                    exclude_objects: vec![],
                },
                Rule {
                    target: RoomType::Bedroom,
                    scenes: labels(&interior),
                    concepts: labels(&["Indoor"]),
                    objects: labels(&["Bed"]),
                    exclude_concepts: labels(&["Closeup"]),
                    exclude_objects: vec![],
                },
                Rule {
                    target: RoomType::LivingRoom,
                    scenes: labels(&interior),
                    concepts: labels(&["Indoor"]),
                    objects: labels(&["Couch"]),
                    exclude_concepts: labels(&["Closeup"]),
                    exclude_objects: labels(&["Bed"]),
                },
            ],
        }
    }
}

impl RuleTable {
    /// Parses a rules document (`{"rules": [...]}`) and canonicalizes its labels.
    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let value = parse_json(text)?;
        let mut table: RuleTable =
            serde_json::from_value(value).map_err(|e| CatalogError::SchemaViolation {
                at: "rules".into(),
                message: e.to_string(),
            })?;
        for rule in &mut table.rules {
            rule.canonicalize();
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CatalogError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Returns the target of the first matching rule, or [`RoomType::Other`].
pub fn classify_room_type(tags: &TagSet, rules: &RuleTable) -> RoomType {
    rules
        .rules
        .iter()
        .find(|r| r.matches(tags))
        .map_or(RoomType::Other, |r| r.target)
}

/// Buckets every catalog image by room type, preserving catalog order.
pub fn partition_by_room_type(
    catalog: &PropertyCatalog,
    rules: &RuleTable,
) -> BTreeMap<RoomType, Vec<String>> {
    let mut buckets: BTreeMap<RoomType, Vec<String>> = BTreeMap::new();
    for img in &catalog.images {
        buckets
            .entry(classify_room_type(&img.tags, rules))
            .or_default()
            .push(img.image_id.clone());
    }
    buckets
}
