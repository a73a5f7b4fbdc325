//! Per-property orchestration of the grouping stages.
//!
//! Each stage is a pure function of its inputs so the stages can be run
//! separately with file handoff or chained in one call with identical
//! results.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bedmap::{build_frequency_dict, map_spaces, BedAssignment, BedmapError, BedroomGroup, Predictor};
use crate::catalog::{group_id, CatalogError, GroupRecord, GroupingOutput, PropertyCatalog};
use crate::clustering::{
    emptied_groups, mean_internal_score, remove_noise, spectral_cluster, ClusterError, ClusterWarning,
    SpectralParams,
};
use crate::metrics::MetricError;
use crate::overlap::{build_overlap_matrix, CallAccounting, ImageRef, OverlapError, OverlapMatrix, ScorerBackend};
use crate::room_typing::{partition_by_room_type, RoomType, RuleTable};
use crate::synthgen::SynthError;

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Overlap(#[from] OverlapError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Bedmap(#[from] BedmapError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl PipelineError {
    /// True for failures of an external service rather than of the input.
    pub fn is_remote(&self) -> bool {
        matches!(self, PipelineError::Bedmap(BedmapError::RemoteFailure { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Info,
    Warning,
    Error,
}

/// One structured diagnostic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub level: Level,
    pub message: String,
    pub property_id: String,
    pub stage: String,
}

impl Diagnostic {
    pub fn new(level: Level, property_id: &str, stage: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            level,
            message: message.into(),
            property_id: property_id.to_owned(),
            stage: stage.to_owned(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostic serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub rules: RuleTable,
    pub tau: f64,
    pub seed: u64,
    /// Threads used to score pairs within one matrix.
    pub parallelism: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            rules: RuleTable::default(),
            tau: DEFAULT_TAU,
            seed: 0,
            parallelism: 1,
        }
    }
}

/// Room types that are clustered, with their images in catalog order, plus
/// the images set aside.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomPlan {
    pub clustered: BTreeMap<RoomType, (usize, Vec<String>)>,
    pub set_aside: Vec<String>,
}

/// Decides which images are clustered and with which `k`.
///
/// Images typed Other and room types without a metadata count are set
/// aside.
pub fn plan_rooms(catalog: &PropertyCatalog, rules: &RuleTable, diags: &mut Vec<Diagnostic>) -> RoomPlan {
    let mut plan = RoomPlan {
        clustered: BTreeMap::new(),
        set_aside: Vec::new(),
    };
    for (room_type, ids) in partition_by_room_type(catalog, rules) {
        if room_type == RoomType::Other {
            plan.set_aside.extend(ids);
            continue;
        }
        match catalog.metadata.room_count(room_type.as_str()) {
            Some(k) if k > 0 => {
                plan.clustered.insert(room_type, (k as usize, ids));
            }
            _ => {
                diags.push(Diagnostic::new(
                    Level::Warning,
                    &catalog.property_id,
                    "room_typing",
                    format!("{} {room_type} image(s) left unassigned: no room count in metadata", ids.len()),
                ));
                plan.set_aside.extend(ids);
            }
        }
    }
    plan
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProperty {
    pub matrices: BTreeMap<RoomType, OverlapMatrix>,
    pub accounting: BTreeMap<RoomType, CallAccounting>,
}

/// Builds one overlap matrix per clustered room type.
pub fn score_property(
    catalog: &PropertyCatalog,
    backend: &ScorerBackend,
    opts: &PipelineOptions,
    diags: &mut Vec<Diagnostic>,
) -> Result<ScoredProperty, PipelineError> {
    let plan = plan_rooms(catalog, &opts.rules, diags);
    let uri_of: HashMap<&str, &str> = catalog.images.iter().map(|i| (i.image_id.as_str(), i.uri.as_str())).collect();
    let mut out = ScoredProperty {
        matrices: BTreeMap::new(),
        accounting: BTreeMap::new(),
    };
    for (room_type, (_, ids)) in plan.clustered {
        let refs: Vec<ImageRef> = ids.iter().map(|id| ImageRef::new(id, uri_of[id.as_str()])).collect();
        let (m, calls) = build_overlap_matrix(&refs, backend, opts.parallelism)?;
        out.matrices.insert(room_type, m);
        out.accounting.insert(room_type, calls);
    }
    Ok(out)
}

/// Clusters every room type, prunes noise and assembles the grouping
/// document. Bed types are left unset.
///
/// `matrices` must hold one matrix per room type clustered by
/// [`plan_rooms`], over the same ids.
pub fn cluster_property(
    catalog: &PropertyCatalog,
    matrices: &BTreeMap<RoomType, OverlapMatrix>,
    opts: &PipelineOptions,
    diags: &mut Vec<Diagnostic>,
) -> Result<GroupingOutput, PipelineError> {
    let pid = &catalog.property_id;
    let plan = plan_rooms(catalog, &opts.rules, &mut Vec::new());
    let mut unassigned = plan.set_aside;
    let mut room_types = BTreeMap::new();
    for (room_type, (k, ids)) in &plan.clustered {
        let w = matrices.get(room_type).filter(|m| m.ids() == ids.as_slice()).ok_or_else(|| {
            OverlapError::BackendFailure {
                subject: room_type.to_string(),
                message: "no overlap matrix matching the catalog".into(),
            }
        })?;
        let (grouping, mut warnings) = spectral_cluster(w, &SpectralParams::with_k(*k, opts.seed))?;
        let pruned = remove_noise(&grouping, w, opts.tau);
        warnings.extend(emptied_groups(&grouping, &pruned));
        for warning in warnings {
            let message = match warning {
                ClusterWarning::DegenerateInput { images, k } => {
                    format!("{room_type}: {images} image(s) for {k} rooms; using singletons")
                }
                ClusterWarning::EmptiedGroup { index } => {
                    format!("{room_type}: noise removal emptied {}", group_id(room_type.as_str(), index))
                }
            };
            diags.push(Diagnostic::new(Level::Warning, pid, "clustering", message));
        }
        let records: Vec<GroupRecord> = pruned
            .groups
            .iter()
            .enumerate()
            .map(|(i, members)| GroupRecord {
                bed_type: None,
                group_id: group_id(room_type.as_str(), i),
                image_ids: members.clone(),
                mean_internal_score: mean_internal_score(members, w),
            })
            .collect();
        unassigned.extend(pruned.unassigned);
        room_types.insert(room_type.as_str().to_owned(), records);
    }
    let order: HashMap<&str, usize> = catalog.images.iter().enumerate().map(|(i, img)| (img.image_id.as_str(), i)).collect();
    unassigned.sort_by_key(|id| order[id.as_str()]);
    let out = GroupingOutput {
        property_id: pid.clone(),
        room_types,
        unassigned,
    };
    out.check_coverage(&catalog.image_ids())?;
    Ok(out)
}

/// Maps non-empty bedroom groups to bed types in group order and writes the
/// choices into `grouping`.
///
/// Returns `None` when there is nothing to map or the catalog lists no bed
/// types.
pub fn map_property(
    catalog: &PropertyCatalog,
    grouping: &mut GroupingOutput,
    predictor: &mut dyn Predictor,
    diags: &mut Vec<Diagnostic>,
) -> Result<Option<BedAssignment>, PipelineError> {
    let uri_of: HashMap<String, String> = catalog.images.iter().map(|i| (i.image_id.clone(), i.uri.clone())).collect();
    let Some(groups) = grouping.room_types.get_mut(RoomType::Bedroom.as_str()) else {
        return Ok(None);
    };
    let todo: Vec<BedroomGroup> = groups
        .iter()
        .filter(|g| !g.image_ids.is_empty())
        .map(|g| BedroomGroup::from_record(g, &uri_of))
        .collect();
    if todo.is_empty() {
        return Ok(None);
    }
    if catalog.metadata.bed_types.is_empty() {
        diags.push(Diagnostic::new(
            Level::Warning,
            &catalog.property_id,
            "bedmap",
            "no bed types in metadata; bedroom groups left unmapped",
        ));
        return Ok(None);
    }
    let inventory = build_frequency_dict(&catalog.metadata.bed_types)?;
    let assignment = map_spaces(&todo, &inventory, predictor)?;
    for g in groups.iter_mut() {
        g.bed_type = assignment.assignments.get(&g.group_id).cloned();
    }
    if !assignment.leftover.is_empty() {
        diags.push(Diagnostic::new(
            Level::Info,
            &catalog.property_id,
            "bedmap",
            format!("unused bed types: {:?}", assignment.leftover),
        ));
    }
    Ok(Some(assignment))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub grouping: GroupingOutput,
    pub scored: ScoredProperty,
    pub assignment: Option<BedAssignment>,
}

/// All stages for one property.
pub fn run_property(
    catalog: &PropertyCatalog,
    backend: &ScorerBackend,
    predictor: &mut dyn Predictor,
    opts: &PipelineOptions,
    diags: &mut Vec<Diagnostic>,
) -> Result<PipelineRun, PipelineError> {
    let scored = score_property(catalog, backend, opts, diags)?;
    let mut grouping = cluster_property(catalog, &scored.matrices, opts, diags)?;
    let assignment = map_property(catalog, &mut grouping, predictor, diags)?;
    Ok(PipelineRun {
        grouping,
        scored,
        assignment,
    })
}
