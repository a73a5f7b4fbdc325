//! Property catalogs and grouping documents.
//!
//! A catalog is the input unit of the engine: one property, its images with
//! precomputed tag predictions, and the owner-supplied metadata (room counts
//! and bed types). A grouping document is the output unit.
//!
//! Catalogs are parsed through [`serde_json::Value`] rather than derived
//! deserializers so that schema errors can name the exact offending path
//! (`images[3].image_id`) and unknown fields can be skipped with a warning.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum CatalogError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: Arc<io::Error>,
    },
    #[error("{path}: malformed document at line {line}, column {column}: {message}")]
    MalformedDocument {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation at `{at}`: {message}")]
    SchemaViolation { at: String, message: String },
}

impl CatalogError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        CatalogError::Io {
            path: path.to_path_buf(),
            source: Arc::new(source),
        }
    }

    fn schema(at: impl Into<String>, message: impl Into<String>) -> Self {
        CatalogError::SchemaViolation {
            at: at.into(),
            message: message.into(),
        }
    }
}

/// Canonical form of a tag or room-type label: trimmed, lowercase, single
/// spaces between words.
pub fn canonical_label(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Bed-type strings are matched exactly (case included), so only whitespace
/// is normalized.
pub fn canonical_bed_type(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Scene, concept and object labels predicted for one image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    pub scenes: Vec<String>,
    pub concepts: Vec<String>,
    pub objects: Vec<String>,
}

impl TagSet {
    /// Builds a tag set with every label canonicalized.
    pub fn new<S: AsRef<str>>(scenes: &[S], concepts: &[S], objects: &[S]) -> Self {
        let canon = |v: &[S]| v.iter().map(|s| canonical_label(s.as_ref())).collect();
        TagSet {
            scenes: canon(scenes),
            concepts: canon(concepts),
            objects: canon(objects),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty() && self.concepts.is_empty() && self.objects.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub uri: String,
    pub tags: TagSet,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyMetadata {
    /// Room-type name (canonical label) to number of physical rooms.
    pub room_counts: BTreeMap<String, u32>,
    /// Bed-type strings, one per bedroom, duplicates allowed.
    pub bed_types: Vec<String>,
}

impl PropertyMetadata {
    pub fn room_count(&self, room_type: &str) -> Option<u32> {
        self.room_counts.get(room_type).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyCatalog {
    pub property_id: String,
    pub images: Vec<ImageRecord>,
    pub metadata: PropertyMetadata,
}

impl PropertyCatalog {
    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|img| img.image_id == image_id)
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.images.iter().map(|img| img.image_id.clone()).collect()
    }

    /// Checks the catalog invariants and canonicalizes all labels in place.
    pub fn validate(mut self) -> Result<Self, CatalogError> {
        if self.property_id.trim().is_empty() {
            return Err(CatalogError::schema("property_id", "must be non-empty"));
        }
        if self.images.is_empty() {
            return Err(CatalogError::schema("images", "at least one image is required"));
        }
        let mut seen = BTreeSet::new();
        for (i, img) in self.images.iter_mut().enumerate() {
            if img.image_id.is_empty() {
                return Err(CatalogError::schema(
                    format!("images[{i}].image_id"),
                    "must be non-empty",
                ));
            }
            if !seen.insert(img.image_id.clone()) {
                return Err(CatalogError::schema(
                    format!("images[{i}].image_id"),
                    format!("duplicate image_id `{}`", img.image_id),
                ));
            }
            img.tags = TagSet::new(&img.tags.scenes, &img.tags.concepts, &img.tags.objects);
        }
        let mut counts = BTreeMap::new();
        for (name, &count) in &self.metadata.room_counts {
            if count == 0 {
                return Err(CatalogError::schema(
                    format!("metadata.room_counts.{name}"),
                    "room count must be a positive integer",
                ));
            }
            counts.insert(canonical_label(name), count);
        }
        self.metadata.room_counts = counts;
        self.metadata.bed_types = self
            .metadata
            .bed_types
            .iter()
            .map(|b| canonical_bed_type(b))
            .collect();
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("catalog serializes");
        out.push('\n');
        out
    }
}

/// Reads and validates a catalog document.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<PropertyCatalog, CatalogError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CatalogError::io(path, e))?;
    parse_catalog(&text).map_err(|e| match e {
        CatalogError::MalformedDocument {
            line,
            column,
            message,
            ..
        } => CatalogError::MalformedDocument {
            path: path.to_path_buf(),
            line,
            column,
            message,
        },
        other => other,
    })
}

pub fn write_catalog(catalog: &PropertyCatalog, path: impl AsRef<Path>) -> Result<(), CatalogError> {
    let path = path.as_ref();
    fs::write(path, catalog.to_json()).map_err(|e| CatalogError::io(path, e))
}

pub(crate) fn parse_json(text: &str) -> Result<Value, CatalogError> {
    serde_json::from_str(text).map_err(|e| CatalogError::MalformedDocument {
        path: PathBuf::new(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Parses a catalog from document text.
pub fn parse_catalog(text: &str) -> Result<PropertyCatalog, CatalogError> {
    let root = parse_json(text)?;
    let obj = as_object(&root, "$")?;
    warn_unknown(obj, "$", &["property_id", "images", "metadata"]);

    let property_id = req_str(obj, "property_id", "property_id")?;
    let images_val = req(obj, "images", "images")?;
    let images_arr = images_val
        .as_array()
        .ok_or_else(|| CatalogError::schema("images", "expected an array"))?;
    let mut images = Vec::with_capacity(images_arr.len());
    for (i, item) in images_arr.iter().enumerate() {
        let at = format!("images[{i}]");
        let img = as_object(item, &at)?;
        warn_unknown(img, &at, &["image_id", "uri", "tags"]);
        let image_id = req_str(img, "image_id", &format!("{at}.image_id"))?;
        let uri = req_str(img, "uri", &format!("{at}.uri"))?;
        let tags_at = format!("{at}.tags");
        let tags_obj = as_object(req(img, "tags", &tags_at)?, &tags_at)?;
        warn_unknown(tags_obj, &tags_at, &["scenes", "concepts", "objects"]);
        let scenes = req_str_list(tags_obj, "scenes", &tags_at)?;
        let concepts = req_str_list(tags_obj, "concepts", &tags_at)?;
        let objects = req_str_list(tags_obj, "objects", &tags_at)?;
        images.push(ImageRecord {
            image_id,
            uri,
            tags: TagSet {
                scenes,
                concepts,
                objects,
            },
        });
    }

    let meta = as_object(req(obj, "metadata", "metadata")?, "metadata")?;
    warn_unknown(meta, "metadata", &["room_counts", "bed_types"]);
    let counts_obj = as_object(
        req(meta, "room_counts", "metadata.room_counts")?,
        "metadata.room_counts",
    )?;
    let mut room_counts = BTreeMap::new();
    for (name, v) in counts_obj {
        let at = format!("metadata.room_counts.{name}");
        let count = v
            .as_i64()
            .ok_or_else(|| CatalogError::schema(&at, "expected an integer"))?;
        if count < 1 {
            return Err(CatalogError::schema(&at, "room count must be a positive integer"));
        }
        let count = u32::try_from(count).map_err(|_| CatalogError::schema(&at, "room count too large"))?;
        let key = canonical_label(name);
        if room_counts.insert(key.clone(), count).is_some() {
            return Err(CatalogError::schema(&at, format!("room type `{key}` listed twice")));
        }
    }
    let bed_types = req_str_list(meta, "bed_types", "metadata")?;

    PropertyCatalog {
        property_id,
        images,
        metadata: PropertyMetadata {
            room_counts,
            bed_types,
        },
    }
    .validate()
}

fn as_object<'a>(v: &'a Value, at: &str) -> Result<&'a Map<String, Value>, CatalogError> {
    v.as_object()
        .ok_or_else(|| CatalogError::schema(at, "expected an object"))
}

fn req<'a>(obj: &'a Map<String, Value>, key: &str, at: &str) -> Result<&'a Value, CatalogError> {
    obj.get(key)
        .ok_or_else(|| CatalogError::schema(at, format!("missing field `{key}`")))
}

fn req_str(obj: &Map<String, Value>, key: &str, at: &str) -> Result<String, CatalogError> {
    req(obj, key, at)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| CatalogError::schema(at, "expected a string"))
}

fn req_str_list(obj: &Map<String, Value>, key: &str, parent: &str) -> Result<Vec<String>, CatalogError> {
    let at = format!("{parent}.{key}");
    let arr = req(obj, key, &at)?
        .as_array()
        .ok_or_else(|| CatalogError::schema(&at, "expected an array of strings"))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_owned)
                .ok_or_else(|| CatalogError::schema(format!("{at}[{i}]"), "expected a string"))
        })
        .collect()
}

fn warn_unknown(obj: &Map<String, Value>, at: &str, known: &[&str]) {
    for key in obj.keys().filter(|k| !known.contains(&k.as_str())) {
        warn!("ignoring unknown field `{key}` at `{at}`");
    }
}

/// One room-space group in the output document.
///
/// Fields are declared in sorted order so the serialized keys are sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub bed_type: Option<String>,
    pub group_id: String,
    pub image_ids: Vec<String>,
    pub mean_internal_score: f64,
}

/// Grouping result for one property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingOutput {
    pub property_id: String,
    /// Room-type name to its groups, in group index order.
    pub room_types: BTreeMap<String, Vec<GroupRecord>>,
    pub unassigned: Vec<String>,
}

/// Group ids follow `<room_type>-<1-based index>`.
pub fn group_id(room_type: &str, index: usize) -> String {
    format!("{room_type}-{}", index + 1)
}

impl GroupingOutput {
    /// Every id mentioned by the output, in document order.
    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.room_types
            .values()
            .flatten()
            .flat_map(|g| g.image_ids.iter())
            .chain(self.unassigned.iter())
    }

    pub fn groups(&self, room_type: &str) -> &[GroupRecord] {
        self.room_types.get(room_type).map_or(&[], Vec::as_slice)
    }

    /// Checks the structural invariants: no id appears twice, group ids are
    /// unique, scores lie in [0,1] and only bedroom groups carry bed types.
    pub fn validate(&self) -> Result<(), CatalogError> {
        let mut seen = BTreeSet::new();
        for id in self.all_ids() {
            if !seen.insert(id) {
                return Err(CatalogError::schema(
                    "room_types",
                    format!("image `{id}` appears more than once"),
                ));
            }
        }
        let mut group_ids = BTreeSet::new();
        for (room_type, groups) in &self.room_types {
            for g in groups {
                let at = format!("room_types.{room_type}.{}", g.group_id);
                if !group_ids.insert(&g.group_id) {
                    return Err(CatalogError::schema(at, "duplicate group_id"));
                }
                if !(0.0..=1.0).contains(&g.mean_internal_score) {
                    return Err(CatalogError::schema(at, "mean_internal_score outside [0,1]"));
                }
                if g.bed_type.is_some() && room_type != "bedroom" {
                    return Err(CatalogError::schema(at, "bed_type is only allowed on bedroom groups"));
                }
            }
        }
        Ok(())
    }

    /// Checks that the output covers exactly `ids`, each once.
    pub fn check_coverage<S: AsRef<str>>(&self, ids: &[S]) -> Result<(), CatalogError> {
        self.validate()?;
        let expected: BTreeSet<&str> = ids.iter().map(AsRef::as_ref).collect();
        let actual: BTreeSet<&str> = self.all_ids().map(String::as_str).collect();
        if let Some(missing) = expected.difference(&actual).next() {
            return Err(CatalogError::schema("unassigned", format!("image `{missing}` is not covered")));
        }
        if let Some(extra) = actual.difference(&expected).next() {
            return Err(CatalogError::schema("room_types", format!("unknown image `{extra}`")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("grouping serializes");
        out.push('\n');
        out
    }
}

/// Validates and writes a grouping document.
pub fn write_grouping(g: &GroupingOutput, path: impl AsRef<Path>) -> Result<(), CatalogError> {
    let path = path.as_ref();
    g.validate()?;
    fs::write(path, g.to_json()).map_err(|e| CatalogError::io(path, e))
}

pub fn read_grouping(path: impl AsRef<Path>) -> Result<GroupingOutput, CatalogError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CatalogError::io(path, e))?;
    let g: GroupingOutput = serde_json::from_str(&text).map_err(|e| CatalogError::MalformedDocument {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    g.validate()?;
    Ok(g)
}
