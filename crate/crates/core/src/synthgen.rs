//! Synthetic properties with planted room layouts.
//!
//! Every image gets a camera pose inside one physical room. Pair scores are
//! a heading-only surrogate: images of different rooms score a constant
//! base, images of the same room score by how far apart their headings are.
//! All outputs are pure functions of the configuration and seed.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::RangeInclusive;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ImageRecord, PropertyCatalog, PropertyMetadata, TagSet};
use crate::overlap::{Activation, DenseLayer, Embedding, HeadWeights, OverlapError, PairScorer};
use crate::room_typing::RoomType;

/// Score of any pair taken in different rooms.
pub const CROSS_ROOM_SCORE: f64 = 0.05;
/// Lowest noiseless score of a same-room pair.
pub const SAME_ROOM_FLOOR: f64 = 0.1;

const SAME_ROOM_WEIGHT: f64 = 8.0;
const HEADING_WEIGHT: f64 = 3.0;
const HEAD_BIAS: f64 = -6.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("no room type has two rooms to draw negative pairs from")]
    InsufficientRooms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub property_id: String,
    pub rooms_per_type: BTreeMap<RoomType, usize>,
    pub images_per_room: RangeInclusive<usize>,
    pub score_noise_sigma: f64,
    pub overlap_heading_max: f64,
    pub seed: u64,
    pub bed_vocab: Vec<String>,
    /// Side of the square room, in meters.
    pub room_size: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            property_id: "synth-0".into(),
            rooms_per_type: BTreeMap::from([(RoomType::Bedroom, 2)]),
            images_per_room: 2..=5,
            score_noise_sigma: 0.0,
            overlap_heading_max: FRAC_PI_2,
            seed: 0,
            bed_vocab: ["1 King Bed", "1 Queen Bed", "2 Twin Beds", "1 Double Bed"]
                .map(String::from)
                .to_vec(),
            room_size: 5.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_owned()));
        if self.property_id.trim().is_empty() {
            return bad("property_id is empty");
        }
        if self.rooms_per_type.values().any(|&c| c == 0) {
            return bad("room counts must be at least 1");
        }
        if *self.images_per_room.start() == 0 || self.images_per_room.start() > self.images_per_room.end() {
            return bad("images_per_room must be a non-empty range starting at 1 or more");
        }
        if !(self.score_noise_sigma >= 0.0 && self.score_noise_sigma.is_finite()) {
            return bad("score_noise_sigma must be finite and non-negative");
        }
        if !(self.overlap_heading_max > 0.0 && self.overlap_heading_max.is_finite()) {
            return bad("overlap_heading_max must be positive");
        }
        if !(self.room_size > 0.0 && self.room_size.is_finite()) {
            return bad("room_size must be positive");
        }
        if self.rooms_per_type.contains_key(&RoomType::Bedroom) && self.bed_vocab.is_empty() {
            return bad("bed_vocab is empty but bedrooms are requested");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub room_type: RoomType,
    pub room_index: usize,
    pub position: [f64; 2],
    /// Radians in `[0, 2π)`.
    pub heading: f64,
}

impl CameraPose {
    fn same_room(&self, other: &CameraPose) -> bool {
        self.room_type == other.room_type && self.room_index == other.room_index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthImage {
    pub pose: CameraPose,
}

/// Planted layout of one property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub property_id: String,
    pub images: BTreeMap<String, TruthImage>,
    /// Bedroom room index to its bed type.
    pub bed_types: BTreeMap<usize, String>,
}

impl GroundTruth {
    pub fn room_of(&self, image_id: &str) -> Option<(RoomType, usize)> {
        self.images
            .get(image_id)
            .map(|t| (t.pose.room_type, t.pose.room_index))
    }

    pub fn bed_type(&self, room_index: usize) -> Option<&str> {
        self.bed_types.get(&room_index).map(String::as_str)
    }

    pub fn bedroom_count(&self) -> usize {
        let mut rooms: Vec<usize> = self
            .images
            .values()
            .filter(|t| t.pose.room_type == RoomType::Bedroom)
            .map(|t| t.pose.room_index)
            .collect();
        rooms.sort_unstable();
        rooms.dedup();
        rooms.len()
    }

    /// Image ids per room, by room type and room index, ids sorted.
    pub fn partition(&self) -> BTreeMap<RoomType, Vec<Vec<String>>> {
        let mut rooms: BTreeMap<RoomType, BTreeMap<usize, Vec<String>>> = BTreeMap::new();
        for (id, t) in &self.images {
            rooms
                .entry(t.pose.room_type)
                .or_default()
                .entry(t.pose.room_index)
                .or_default()
                .push(id.clone());
        }
        rooms
            .into_iter()
            .map(|(rt, by_room)| (rt, by_room.into_values().collect()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("truth serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

const LIVING_SCENES: [&str; 3] = ["guestroom", "property interior", "undetermined"];

fn tags_for(room_type: RoomType, rng: &mut ChaCha8Rng) -> TagSet {
    let pick_extras = |pool: &[&'static str], rng: &mut ChaCha8Rng| -> Vec<&'static str> {
        pool.iter().copied().filter(|_| rng.random_bool(0.5)).collect()
    };
    let (scenes, concepts, objects): (Vec<&str>, Vec<&str>, Vec<&str>) = match room_type {
        RoomType::Bedroom => {
            let scene = *LIVING_SCENES.choose(rng).expect("non-empty");
            let mut objects = vec!["bed"];
            objects.extend(pick_extras(&["lamp", "pillow", "nightstand"], rng));
            let mut concepts = vec!["indoor"];
            concepts.extend(pick_extras(&["bright", "cozy"], rng));
            (vec![scene], concepts, objects)
        }
        RoomType::LivingRoom => {
            let scene = *LIVING_SCENES.choose(rng).expect("non-empty");
            let mut objects = vec!["couch"];
            objects.extend(pick_extras(&["table", "lamp", "television"], rng));
            let mut concepts = vec!["indoor"];
            concepts.extend(pick_extras(&["bright", "spacious"], rng));
            (vec![scene], concepts, objects)
        }
        RoomType::Bathroom => {
            let mut objects = pick_extras(&["sink", "toilet", "towel"], rng);
            if objects.is_empty() {
                objects.push("sink");
            }
            (vec!["bathroom"], vec!["indoor"], objects)
        }
        RoomType::Other => {
            let scene = *["pool", "kitchen", "exterior"].choose(rng).expect("non-empty");
            (vec![scene], vec!["outdoor"], pick_extras(&["chair", "tree"], rng))
        }
    };
    TagSet::new(&scenes, &concepts, &objects)
}

/// Generates one property and its planted ground truth.
///
/// Images are shuffled before ids are assigned, so id order carries no room
/// information.
pub fn generate_property(cfg: &SynthConfig) -> Result<(PropertyCatalog, GroundTruth), SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drafts: Vec<(CameraPose, TagSet)> = Vec::new();
    for (&room_type, &rooms) in &cfg.rooms_per_type {
        for room_index in 0..rooms {
            let count = rng.random_range(cfg.images_per_room.clone());
            for _ in 0..count {
                let pose = CameraPose {
                    room_type,
                    room_index,
                    position: [
                        rng.random_range(0.0..cfg.room_size),
                        rng.random_range(0.0..cfg.room_size),
                    ],
                    heading: rng.random_range(0.0..TAU),
                };
                drafts.push((pose, tags_for(room_type, &mut rng)));
            }
        }
    }
    drafts.shuffle(&mut rng);

    let bedrooms = cfg.rooms_per_type.get(&RoomType::Bedroom).copied().unwrap_or(0);
    let bed_types: BTreeMap<usize, String> = (0..bedrooms)
        .map(|r| (r, cfg.bed_vocab.choose(&mut rng).expect("validated").clone()))
        .collect();

    let width = drafts.len().saturating_sub(1).to_string().len().max(3);
    let mut images = Vec::with_capacity(drafts.len());
    let mut truth = BTreeMap::new();
    for (i, (pose, tags)) in drafts.into_iter().enumerate() {
        let image_id = format!("img-{i:0width$}");
        images.push(ImageRecord {
            uri: format!("synth://{}/{image_id}.jpg", cfg.property_id),
            image_id: image_id.clone(),
            tags,
        });
        truth.insert(image_id, TruthImage { pose });
    }

    let mut metadata = PropertyMetadata::default();
    for (&rt, &count) in &cfg.rooms_per_type {
        if rt != RoomType::Other {
            metadata.room_counts.insert(rt.as_str().to_owned(), count as u32);
        }
    }
    let mut beds: Vec<String> = bed_types.values().cloned().collect();
    beds.sort();
    metadata.bed_types = beds;

    let catalog = PropertyCatalog {
        property_id: cfg.property_id.clone(),
        images,
        metadata,
    };
    let truth = GroundTruth {
        property_id: cfg.property_id.clone(),
        images: truth,
        bed_types,
    };
    Ok((catalog, truth))
}

/// Absolute heading difference wrapped to `[0, π]`.
pub fn heading_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

/// Noiseless surrogate score of a pose pair.
pub fn base_overlap(p: &CameraPose, q: &CameraPose, heading_max: f64) -> f64 {
    if !p.same_room(q) {
        return CROSS_ROOM_SCORE;
    }
    (1.0 - heading_gap(p.heading, q.heading) / heading_max).max(SAME_ROOM_FLOOR)
}

/// Surrogate score with additive Gaussian noise, clamped to `[0,1]`.
///
/// `pair` identifies the unordered pair; the noise draw depends only on the
/// seed and the pair, so the score is symmetric.
pub fn synth_overlap_score(p: &CameraPose, q: &CameraPose, pair: (usize, usize), cfg: &SynthConfig) -> f64 {
    let base = base_overlap(p, q, cfg.overlap_heading_max);
    if cfg.score_noise_sigma == 0.0 {
        return base;
    }
    let (lo, hi) = if pair.0 <= pair.1 { pair } else { (pair.1, pair.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((lo as u64) << 32) | hi as u64);
    let noise = Normal::new(0.0, cfg.score_noise_sigma).expect("validated sigma").sample(&mut rng);
    (base + noise).clamp(0.0, 1.0)
}

/// Direct scorer over a generated property.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    cfg: SynthConfig,
    poses: HashMap<String, (usize, CameraPose)>,
}

impl SyntheticOracle {
    /// Pair indices follow the sorted order of the truth's image ids.
    pub fn new(truth: &GroundTruth, cfg: &SynthConfig) -> Self {
        let poses = truth
            .images
            .iter()
            .enumerate()
            .map(|(i, (id, t))| (id.clone(), (i, t.pose)))
            .collect();
        SyntheticOracle { cfg: cfg.clone(), poses }
    }
}

impl PairScorer for SyntheticOracle {
    fn score(&self, a: &str, b: &str) -> Result<f64, OverlapError> {
        let lookup = |id: &str| {
            self.poses.get(id).ok_or_else(|| OverlapError::BackendFailure {
                subject: id.to_owned(),
                message: "image not in synthetic ground truth".into(),
            })
        };
        let (i, p) = lookup(a)?;
        let (j, q) = lookup(b)?;
        Ok(synth_overlap_score(p, q, (*i, *j), &self.cfg))
    }
}

/// Embeddings and head weights whose scores track the surrogate.
///
/// Each embedding is a one-hot room indicator followed by `(cos h, sin h)`.
/// On the element-wise product the head sees `[same room]` and the two terms
/// of `cos Δh`, so its logit is `8·[same room] + 3·cos Δh − 6`.
pub fn synth_embeddings_and_weights(truth: &GroundTruth) -> (Vec<Embedding>, HeadWeights) {
    let mut rooms: Vec<(RoomType, usize)> = truth.images.values().map(|t| (t.pose.room_type, t.pose.room_index)).collect();
    rooms.sort_unstable();
    rooms.dedup();
    let slot: HashMap<(RoomType, usize), usize> = rooms.iter().enumerate().map(|(i, r)| (*r, i)).collect();
    let dim = rooms.len() + 2;

    let embeddings = truth
        .images
        .iter()
        .map(|(id, t)| {
            let mut v = vec![0.0f32; dim];
            v[slot[&(t.pose.room_type, t.pose.room_index)]] = 1.0;
            v[dim - 2] = t.pose.heading.cos() as f32;
            v[dim - 1] = t.pose.heading.sin() as f32;
            Embedding::new(id.clone(), v)
        })
        .collect();

    let mut row = vec![SAME_ROOM_WEIGHT; dim];
    row[dim - 2] = HEADING_WEIGHT;
    row[dim - 1] = HEADING_WEIGHT;
    let weights = HeadWeights {
        layers: vec![DenseLayer {
            weights: vec![row],
            bias: vec![HEAD_BIAS],
            activation: Activation::Sigmoid,
        }],
    };
    (embeddings, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub self_supervised_pos: usize,
    pub negatives: usize,
    pub manual_slots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Pretrain,
    Finetune,
}

/// Augmentation applied to an image to form a positive pair with itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    /// `[x, y, width, height]` as fractions of the image.
    pub crop: [f64; 4],
    pub flip: bool,
    pub brightness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairKind {
    SelfPositive { image_id: String, transform: Transform },
    Negative { image_a: String, image_b: String },
    /// Placeholder for a human-annotated pair.
    Manual { slot: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub split: Split,
    #[serde(flatten)]
    pub pair: PairKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub property_id: String,
    pub rows: Vec<ManifestRow>,
}

impl PairManifest {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("manifest serializes");
        out.push('\n');
        out
    }
}

fn random_transform(rng: &mut ChaCha8Rng) -> Transform {
    let w = rng.random_range(0.6..=1.0);
    let h = rng.random_range(0.6..=1.0);
    Transform {
        crop: [rng.random_range(0.0..=1.0 - w), rng.random_range(0.0..=1.0 - h), w, h],
        flip: rng.random_bool(0.5),
        brightness: rng.random_range(-0.2..=0.2),
    }
}

/// Training pair manifest for one property.
///
/// The pretraining split holds `self_supervised_pos` augmented self pairs and
/// `negatives` pairs from different rooms of the same type. The fine-tuning
/// split holds `manual_slots` placeholders plus as many self pairs and
/// negatives, keeping the two self-supervised classes balanced.
pub fn generate_pair_manifest(
    truth: &GroundTruth,
    counts: ManifestCounts,
    seed: u64,
) -> Result<PairManifest, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<&String> = truth.images.keys().collect();

    let partition = truth.partition();
    let sources: Vec<&Vec<Vec<String>>> = partition.values().filter(|rooms| rooms.len() >= 2).collect();
    let need_negatives = counts.negatives + counts.manual_slots > 0;
    if need_negatives && sources.is_empty() {
        return Err(SynthError::InsufficientRooms);
    }
    let need_images = counts.self_supervised_pos + counts.manual_slots > 0;
    if need_images && ids.is_empty() {
        return Err(SynthError::InvalidConfig("no images".into()));
    }

    let positive = |rng: &mut ChaCha8Rng| PairKind::SelfPositive {
        image_id: (*ids.choose(rng).expect("checked")).clone(),
        transform: random_transform(rng),
    };
    let negative = |rng: &mut ChaCha8Rng| {
        let rooms = sources.choose(rng).expect("checked");
        let picked: Vec<&Vec<String>> = rooms.choose_multiple(rng, 2).collect();
        PairKind::Negative {
            image_a: picked[0].choose(rng).expect("rooms are non-empty").clone(),
            image_b: picked[1].choose(rng).expect("rooms are non-empty").clone(),
        }
    };

    let mut rows = Vec::new();
    let mut push = |split, pair| rows.push(ManifestRow { split, pair });
    for _ in 0..counts.self_supervised_pos {
        push(Split::Pretrain, positive(&mut rng));
    }
    for _ in 0..counts.negatives {
        push(Split::Pretrain, negative(&mut rng));
    }
    for slot in 0..counts.manual_slots {
        push(Split::Finetune, PairKind::Manual { slot });
    }
    for _ in 0..counts.manual_slots {
        push(Split::Finetune, positive(&mut rng));
    }
    for _ in 0..counts.manual_slots {
        push(Split::Finetune, negative(&mut rng));
    }
    Ok(PairManifest {
        property_id: truth.property_id.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlap::{build_overlap_matrix, head_score, ImageRef, OverlapMatrix, ScorerBackend};
    use crate::room_typing::{classify_room_type, RuleTable};

    fn bedrooms(n: usize, per_room: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            rooms_per_type: BTreeMap::from([(RoomType::Bedroom, n)]),
            images_per_room: per_room..=per_room,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn four_bedrooms_of_three() {
        let (catalog, truth) = generate_property(&bedrooms(4, 3, 11)).unwrap();
        assert_eq!(catalog.images.len(), 12);
        let parts = &truth.partition()[&RoomType::Bedroom];
        assert_eq!(parts.len(), 4);
        assert!(parts.iter().all(|room| room.len() == 3));
        assert_eq!(catalog.metadata.room_count("bedroom"), Some(4));
        assert_eq!(catalog.metadata.bed_types.len(), 4);
        assert_eq!(truth.bedroom_count(), 4);
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = SynthConfig {
            rooms_per_type: BTreeMap::from([(RoomType::Bedroom, 3), (RoomType::Bathroom, 2), (RoomType::Other, 1)]),
            seed: 5,
            ..SynthConfig::default()
        };
        let a = generate_property(&cfg).unwrap();
        let b = generate_property(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_property(&SynthConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn singleton_vocabulary() {
        let cfg = SynthConfig {
            bed_vocab: vec!["1 King Bed".into()],
            ..bedrooms(2, 2, 1)
        };
        let (catalog, _) = generate_property(&cfg).unwrap();
        assert_eq!(catalog.metadata.bed_types, vec!["1 King Bed", "1 King Bed"]);
    }

    #[test]
    fn tags_classify_as_planted() {
        let cfg = SynthConfig {
            rooms_per_type: BTreeMap::from([
                (RoomType::Bedroom, 3),
                (RoomType::LivingRoom, 2),
                (RoomType::Bathroom, 2),
                (RoomType::Other, 2),
            ]),
            images_per_room: 3..=6,
            seed: 21,
            ..SynthConfig::default()
        };
        let (catalog, truth) = generate_property(&cfg).unwrap();
        let rules = RuleTable::default();
        for img in &catalog.images {
            let (rt, _) = truth.room_of(&img.image_id).unwrap();
            assert_eq!(classify_room_type(&img.tags, &rules), rt, "{img:?}");
        }
        catalog.clone().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = bedrooms(2, 2, 0);
        cfg.images_per_room = 0..=2;
        assert!(cfg.validate().is_err());
        let mut cfg = bedrooms(0, 2, 0);
        assert!(cfg.validate().is_err());
        cfg = bedrooms(1, 2, 0);
        cfg.score_noise_sigma = -1.0;
        assert!(cfg.validate().is_err());
        cfg = bedrooms(1, 2, 0);
        cfg.bed_vocab.clear();
        assert!(cfg.validate().is_err());
    }

    fn pose(room_index: usize, heading: f64) -> CameraPose {
        CameraPose {
            room_type: RoomType::Bedroom,
            room_index,
            position: [0.0, 0.0],
            heading,
        }
    }

    #[test]
    fn surrogate_hand_values() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_overlap_score(&pose(0, 1.0), &pose(0, 1.0), (0, 1), &cfg), 1.0);
        assert_eq!(synth_overlap_score(&pose(0, 1.0), &pose(1, 1.0), (0, 1), &cfg), CROSS_ROOM_SCORE);
        let s = synth_overlap_score(&pose(0, 0.0), &pose(0, FRAC_PI_2), (0, 1), &cfg);
        assert!((s - 0.1).abs() < 1e-12);
        // wrap-around: 0.1 and 2π − 0.1 are 0.2 apart
        let s = base_overlap(&pose(0, 0.1), &pose(0, TAU - 0.1), FRAC_PI_2);
        assert!((s - (1.0 - 0.2 / FRAC_PI_2)).abs() < 1e-12);
    }

    #[test]
    fn noisy_scores_are_symmetric_and_clamped() {
        let cfg = SynthConfig {
            score_noise_sigma: 0.5,
            ..SynthConfig::default()
        };
        for i in 0..20 {
            for j in 0..20 {
                let (p, q) = (pose(i % 3, i as f64), pose(j % 3, j as f64));
                let s = synth_overlap_score(&p, &q, (i, j), &cfg);
                assert_eq!(s.to_bits(), synth_overlap_score(&q, &p, (j, i), &cfg).to_bits());
                assert!((0.0..=1.0).contains(&s));
            }
        }
    }

    #[test]
    fn oracle_matrix_is_valid() {
        for seed in 0..10 {
            let cfg = SynthConfig {
                score_noise_sigma: 0.2,
                ..bedrooms(3, 4, seed)
            };
            let (catalog, truth) = generate_property(&cfg).unwrap();
            let refs: Vec<ImageRef> = catalog.images.iter().map(|i| ImageRef::new(&i.image_id, &i.uri)).collect();
            let backend = ScorerBackend::direct(SyntheticOracle::new(&truth, &cfg));
            let (m, _) = build_overlap_matrix(&refs, &backend, 1).unwrap();
            let ids = m.ids().to_vec();
            OverlapMatrix::from_dense(ids, (0..m.len()).flat_map(|i| m.row(i).to_vec()).collect()).unwrap();
        }
    }

    #[test]
    fn head_tracks_surrogate_ranking() {
        let cfg = SynthConfig {
            rooms_per_type: BTreeMap::from([(RoomType::Bedroom, 3), (RoomType::Bathroom, 2)]),
            images_per_room: 2..=6,
            seed: 3,
            ..SynthConfig::default()
        };
        let (_, truth) = generate_property(&cfg).unwrap();
        let (embs, weights) = synth_embeddings_and_weights(&truth);
        weights.validate().unwrap();
        let poses: Vec<CameraPose> = truth.images.values().map(|t| t.pose).collect();
        let n = embs.len();
        let head = |i: usize, j: usize| head_score(&embs[i], &embs[j], &weights).unwrap();
        let oracle = |i: usize, j: usize| base_overlap(&poses[i], &poses[j], cfg.overlap_heading_max);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(head(i, j).to_bits(), head(j, i).to_bits());
                for k in 0..n {
                    if j == i || k == i || (oracle(i, j) - oracle(i, k)).abs() <= 0.1 {
                        continue;
                    }
                    assert_eq!(oracle(i, j) > oracle(i, k), head(i, j) > head(i, k), "i={i} j={j} k={k}");
                }
            }
        }
        let same_room_max = head(0, 0);
        let cross_max = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| !poses[i].same_room(&poses[j]))
            .map(|(i, j)| head(i, j))
            .fold(0.0, f64::max);
        assert!(same_room_max > cross_max);
    }

    #[test]
    fn manifest_is_balanced() {
        let (_, truth) = generate_property(&bedrooms(3, 3, 2)).unwrap();
        let counts = ManifestCounts {
            self_supervised_pos: 100,
            negatives: 100,
            manual_slots: 0,
        };
        let m = generate_pair_manifest(&truth, counts, 9).unwrap();
        assert_eq!(m.rows.len(), 200);
        let pos = m.rows.iter().filter(|r| matches!(r.pair, PairKind::SelfPositive { .. })).count();
        assert_eq!(pos, 100);
        for row in &m.rows {
            assert_eq!(row.split, Split::Pretrain);
            if let PairKind::Negative { image_a, image_b } = &row.pair {
                let (ta, ra) = truth.room_of(image_a).unwrap();
                let (tb, rb) = truth.room_of(image_b).unwrap();
                assert_eq!(ta, tb);
                assert_ne!(ra, rb);
            }
            if let PairKind::SelfPositive { transform, .. } = &row.pair {
                let [x, y, w, h] = transform.crop;
                assert!(x + w <= 1.0 + 1e-12 && y + h <= 1.0 + 1e-12);
            }
        }
        assert_eq!(m, generate_pair_manifest(&truth, counts, 9).unwrap());
    }

    #[test]
    fn manifest_finetune_split() {
        let (_, truth) = generate_property(&bedrooms(2, 2, 2)).unwrap();
        let counts = ManifestCounts {
            self_supervised_pos: 4,
            negatives: 4,
            manual_slots: 3,
        };
        let m = generate_pair_manifest(&truth, counts, 1).unwrap();
        let fine: Vec<_> = m.rows.iter().filter(|r| r.split == Split::Finetune).collect();
        assert_eq!(fine.len(), 9);
        assert_eq!(fine.iter().filter(|r| matches!(r.pair, PairKind::Manual { .. })).count(), 3);
        let json = m.to_json();
        assert!(json.contains("\"split\": \"finetune\""));
        assert!(json.contains("\"kind\": \"self_positive\""));
        let back: PairManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn single_room_has_no_negatives() {
        let (_, truth) = generate_property(&bedrooms(1, 3, 2)).unwrap();
        let counts = ManifestCounts {
            self_supervised_pos: 2,
            negatives: 2,
            manual_slots: 0,
        };
        assert_eq!(generate_pair_manifest(&truth, counts, 1), Err(SynthError::InsufficientRooms));
        let only_pos = ManifestCounts {
            negatives: 0,
            ..counts
        };
        assert_eq!(generate_pair_manifest(&truth, only_pos, 1).unwrap().rows.len(), 2);
    }

    #[test]
    fn truth_document_round_trip() {
        let (_, truth) = generate_property(&bedrooms(2, 3, 4)).unwrap();
        assert_eq!(GroundTruth::from_json(&truth.to_json()).unwrap(), truth);
    }
}
