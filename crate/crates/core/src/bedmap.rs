//! Sequential mapping of bedroom groups to bed-type strings.
//!
//! The property inventory is consumed as a frequency dictionary: every step
//! offers the bed types that still have a positive count, takes the
//! predictor's choice and decrements it. Each inventory entry is therefore
//! used at most once.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{canonical_bed_type, GroupRecord};

/// Environment variable holding the bearer token for [`RemoteService`].
pub const TOKEN_ENV: &str = "ROOMGROUP_PREDICTOR_TOKEN";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BedmapError {
    #[error("bed inventory is empty")]
    EmptyInventory,
    #[error("group {group_id} has no images")]
    EmptyGroup { group_id: String },
    #[error("inventory exhausted before group {group_id}")]
    InventoryExhausted { group_id: String },
    #[error("predictor answered `{choice}` for {group_id}, expected one of {options:?}")]
    PredictorViolation {
        group_id: String,
        choice: String,
        options: Vec<String>,
    },
    #[error("remote predictor at {endpoint} failed after {attempts} attempt(s): {message}")]
    RemoteFailure {
        endpoint: String,
        attempts: usize,
        message: String,
    },
}

/// Remaining count per bed type. Counts are always positive.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BedInventory {
    counts: BTreeMap<String, usize>,
}

impl BedInventory {
    pub fn counts(&self) -> &BTreeMap<String, usize> {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Bed types with a positive count, in sorted order.
    pub fn options(&self) -> Vec<String> {
        self.counts.keys().cloned().collect()
    }

    fn take(&mut self, bed_type: &str) -> bool {
        match self.counts.get_mut(bed_type) {
            Some(c) => {
                *c -= 1;
                if *c == 0 {
                    self.counts.remove(bed_type);
                }
                true
            }
            None => false,
        }
    }
}

pub fn build_frequency_dict<S: AsRef<str>>(bed_types: &[S]) -> Result<BedInventory, BedmapError> {
    if bed_types.is_empty() {
        return Err(BedmapError::EmptyInventory);
    }
    let mut counts = BTreeMap::new();
    for b in bed_types {
        *counts.entry(canonical_bed_type(b.as_ref())).or_insert(0) += 1;
    }
    Ok(BedInventory { counts })
}

/// One question put to a predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictRequest {
    pub group_id: String,
    pub image_ids: Vec<String>,
    pub image_uris: Vec<String>,
    pub options: Vec<String>,
}

/// Chooses one bed type from `request.options`.
///
/// Answers outside the options are rejected by [`map_spaces`].
pub trait Predictor {
    fn predict(&mut self, request: &PredictRequest) -> Result<String, BedmapError>;
}

/// A bedroom group ready for mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct BedroomGroup {
    pub group_id: String,
    pub image_ids: Vec<String>,
    pub image_uris: Vec<String>,
}

impl BedroomGroup {
    pub fn new(group_id: impl Into<String>, image_ids: Vec<String>, image_uris: Vec<String>) -> Self {
        BedroomGroup {
            group_id: group_id.into(),
            image_ids,
            image_uris,
        }
    }

    /// Uses the image ids as URIs when `uri_of` has no entry.
    pub fn from_record(g: &GroupRecord, uri_of: &HashMap<String, String>) -> Self {
        let uris = g
            .image_ids
            .iter()
            .map(|id| uri_of.get(id).cloned().unwrap_or_else(|| id.clone()))
            .collect();
        BedroomGroup::new(g.group_id.clone(), g.image_ids.clone(), uris)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapStep {
    pub group_id: String,
    pub options: Vec<String>,
    pub choice: String,
    /// False when a single option made the choice forced.
    pub queried: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BedAssignment {
    pub assignments: BTreeMap<String, String>,
    pub trace: Vec<MapStep>,
    /// Inventory left after the last group.
    pub leftover: BTreeMap<String, usize>,
}

/// Assigns a bed type to each group in the given order.
pub fn map_spaces(
    groups: &[BedroomGroup],
    inventory: &BedInventory,
    predictor: &mut dyn Predictor,
) -> Result<BedAssignment, BedmapError> {
    let mut remaining = inventory.clone();
    let mut out = BedAssignment::default();
    for g in groups {
        if g.image_ids.is_empty() {
            return Err(BedmapError::EmptyGroup {
                group_id: g.group_id.clone(),
            });
        }
        let options = remaining.options();
        if options.is_empty() {
            return Err(BedmapError::InventoryExhausted {
                group_id: g.group_id.clone(),
            });
        }
        let (choice, queried) = if options.len() == 1 {
            (options[0].clone(), false)
        } else {
            let request = PredictRequest {
                group_id: g.group_id.clone(),
                image_ids: g.image_ids.clone(),
                image_uris: g.image_uris.clone(),
                options: options.clone(),
            };
            (canonical_bed_type(&predictor.predict(&request)?), true)
        };
        if !remaining.take(&choice) {
            return Err(BedmapError::PredictorViolation {
                group_id: g.group_id.clone(),
                choice,
                options,
            });
        }
        log::debug!("{} -> {choice} (options {options:?})", g.group_id);
        out.assignments.insert(g.group_id.clone(), choice.clone());
        out.trace.push(MapStep {
            group_id: g.group_id.clone(),
            options,
            choice,
            queried,
        });
    }
    out.leftover = remaining.counts;
    Ok(out)
}

/// Always picks the first offered option.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstOption;

impl Predictor for FirstOption {
    fn predict(&mut self, request: &PredictRequest) -> Result<String, BedmapError> {
        Ok(request.options[0].clone())
    }
}

/// Answers from known ground truth.
///
/// Looks up the group id first, then takes the majority bed type over the
/// group's images (ties to the smallest string). Falls back to the first
/// option when the truth is unknown or no longer offered.
#[derive(Debug, Clone, Default)]
pub struct OracleFromTruth {
    by_group: HashMap<String, String>,
    by_image: HashMap<String, String>,
}

impl OracleFromTruth {
    pub fn by_group(truth: impl IntoIterator<Item = (String, String)>) -> Self {
        OracleFromTruth {
            by_group: canonical_values(truth),
            by_image: HashMap::new(),
        }
    }

    pub fn by_image(truth: impl IntoIterator<Item = (String, String)>) -> Self {
        OracleFromTruth {
            by_group: HashMap::new(),
            by_image: canonical_values(truth),
        }
    }

    fn truth_for(&self, request: &PredictRequest) -> Option<String> {
        if let Some(t) = self.by_group.get(&request.group_id) {
            return Some(t.clone());
        }
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for id in &request.image_ids {
            if let Some(t) = self.by_image.get(id) {
                *votes.entry(t).or_insert(0) += 1;
            }
        }
        let best = votes.values().copied().max()?;
        votes.into_iter().find(|&(_, c)| c == best).map(|(t, _)| t.to_owned())
    }
}

fn canonical_values(truth: impl IntoIterator<Item = (String, String)>) -> HashMap<String, String> {
    truth.into_iter().map(|(k, v)| (k, canonical_bed_type(&v))).collect()
}

impl Predictor for OracleFromTruth {
    fn predict(&mut self, request: &PredictRequest) -> Result<String, BedmapError> {
        Ok(self
            .truth_for(request)
            .filter(|t| request.options.contains(t))
            .unwrap_or_else(|| request.options[0].clone()))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    group_id: &'a str,
    image_uris: &'a [String],
    options: &'a [String],
    prompt_context: String,
}

#[derive(Deserialize)]
struct WireResponse {
    bed_type: String,
}

/// HTTP client for an external bed-type predictor.
///
/// Transport and status errors are retried up to `retries` more times. An
/// answer outside the options triggers one re-ask that lists the allowed
/// answers; a second off-menu answer is returned as is and rejected by
/// [`map_spaces`].
pub struct RemoteService {
    endpoint: String,
    token: Option<String>,
    retries: usize,
    agent: ureq::Agent,
}

impl RemoteService {
    pub const DEFAULT_RETRIES: usize = 2;
    pub const PROMPT: &'static str = "select exactly one option";

    /// Reads the bearer token from [`TOKEN_ENV`] when set.
    pub fn new(endpoint: impl Into<String>, retries: usize, timeout: Duration) -> Self {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::with_token(endpoint, retries, timeout, token)
    }

    pub fn with_token(endpoint: impl Into<String>, retries: usize, timeout: Duration, token: Option<String>) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        RemoteService {
            endpoint: endpoint.into(),
            token,
            retries,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    fn post(&self, body: &WireRequest<'_>) -> Result<String, String> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let parsed: WireResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        Ok(parsed.bed_type)
    }

    fn ask(&self, request: &PredictRequest, prompt_context: String) -> Result<String, BedmapError> {
        let body = WireRequest {
            group_id: &request.group_id,
            image_uris: &request.image_uris,
            options: &request.options,
            prompt_context,
        };
        let mut last = String::new();
        for attempt in 0..=self.retries {
            match self.post(&body) {
                Ok(answer) => return Ok(canonical_bed_type(&answer)),
                Err(e) => {
                    log::warn!("predictor attempt {} for {} failed: {e}", attempt + 1, request.group_id);
                    last = e;
                }
            }
        }
        Err(BedmapError::RemoteFailure {
            endpoint: self.endpoint.clone(),
            attempts: self.retries + 1,
            message: last,
        })
    }
}

impl Predictor for RemoteService {
    fn predict(&mut self, request: &PredictRequest) -> Result<String, BedmapError> {
        let answer = self.ask(request, Self::PROMPT.to_owned())?;
        if request.options.contains(&answer) {
            return Ok(answer);
        }
        log::warn!("predictor answered `{answer}` for {}, re-asking", request.group_id);
        let reminder = format!("{}; answer must be one of: {}", Self::PROMPT, request.options.join(" | "));
        self.ask(request, reminder)
    }
}
