use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roomgroup_core::bedmap::{build_frequency_dict, map_spaces, BedroomGroup, OracleFromTruth, PredictRequest, Predictor};
use roomgroup_core::catalog::{read_grouping, write_grouping, GroupRecord, GroupingOutput, TagSet};
use roomgroup_core::clustering::{remove_noise, spectral_cluster, Grouping, SpectralParams};
use roomgroup_core::metrics::{adjusted_rand_index, normalized_ari, v_measure};
use roomgroup_core::overlap::OverlapMatrix;
use roomgroup_core::room_typing::{classify_room_type, RoomType, RuleTable};
use roomgroup_core::BedmapError;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img-{i:02}")).collect()
}

fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> OverlapMatrix {
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        s[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = rng.random_range(0.0..1.0);
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    OverlapMatrix::from_dense(ids(n), s).unwrap()
}

fn as_partition(groups: &[Vec<String>]) -> BTreeSet<BTreeSet<String>> {
    groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| g.iter().cloned().collect())
        .collect()
}

#[test]
fn spectral_cluster_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..50 {
        let w = random_matrix(10, &mut rng);
        let k = 2 + trial % 3;
        let params = SpectralParams::with_k(k, trial as u64);
        let (base, _) = spectral_cluster(&w, &params).unwrap();

        let mut perm: Vec<usize> = (0..10).collect();
        for i in (1..10).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = w.select(&perm);
        let (moved, _) = spectral_cluster(&permuted, &params).unwrap();
        assert_eq!(as_partition(&base.groups), as_partition(&moved.groups), "trial {trial}");
    }
}

#[test]
fn planted_blocks_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut exact = 0;
    for trial in 0..100u64 {
        let k = rng.random_range(2..=5);
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(3..=8)).collect();
        let block: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect();
        let n = block.len();
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            s[i * n + i] = 1.0;
            for j in i + 1..n {
                let v = if block[i] == block[j] {
                    rng.random_range(0.7..=1.0)
                } else {
                    rng.random_range(0.0..=0.3)
                };
                s[i * n + j] = v;
                s[j * n + i] = v;
            }
        }
        let w = OverlapMatrix::from_dense(ids(n), s).unwrap();
        let (g, _) = spectral_cluster(&w, &SpectralParams::with_k(k, trial)).unwrap();
        let labels = g.labels();
        let pred: Vec<usize> = w.ids().iter().map(|id| labels[id.as_str()]).collect();
        if adjusted_rand_index(&block, &pred).unwrap() == 1.0 {
            exact += 1;
        }
    }
    assert!(exact >= 95, "exact recovery in {exact}/100");
}

/// Reference classification written directly from the rule table rows.
fn table_oracle(scenes: &BTreeSet<&str>, concepts: &BTreeSet<&str>, objects: &BTreeSet<&str>) -> RoomType {
    let interior = ["guestroom", "property interior", "undetermined"].iter().any(|s| scenes.contains(s));
    let indoor = concepts.contains("indoor") && !concepts.contains("closeup");
    if scenes.contains("bathroom") {
        RoomType::Bathroom
    } else if interior && indoor && objects.contains("bed") {
        RoomType::Bedroom
    } else if interior && indoor && objects.contains("couch") {
        RoomType::LivingRoom
    } else {
        RoomType::Other
    }
}

fn subsets<'a>(pool: &[&'a str]) -> Vec<BTreeSet<&'a str>> {
    (0..1usize << pool.len())
        .map(|mask| pool.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, s)| *s).collect())
        .collect()
}

fn to_vec<'a>(set: &BTreeSet<&'a str>) -> Vec<&'a str> {
    set.iter().copied().collect()
}

#[test]
fn vocabulary_sweep_matches_rule_rows() {
    let rules = RuleTable::default();
    let scenes = subsets(&["bathroom", "guestroom", "property interior", "undetermined", "pool"]);
    let concepts = subsets(&["indoor", "closeup", "outdoor"]);
    let objects = subsets(&["bed", "couch", "sink"]);
    let mut checked = 0;
    for s in &scenes {
        for c in &concepts {
            for o in &objects {
                let tags = TagSet::new(&to_vec(s), &to_vec(c), &to_vec(o));
                let got = classify_room_type(&tags, &rules);
                assert_eq!(got, table_oracle(s, c, o), "{tags:?}");
                if o.contains("bed") {
                    assert_ne!(got, RoomType::LivingRoom);
                }
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 32 * 8 * 8);
}

/// Pair-counting agreement over all item pairs.
fn pair_counting_ari(x: &[usize], y: &[usize]) -> f64 {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            match (x[i] == x[j], y[i] == y[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    if denom == 0.0 {
        1.0
    } else {
        2.0 * (a * d - b * c) / denom
    }
}

fn labels_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..30).prop_flat_map(|n| (prop::collection::vec(0usize..5, n), prop::collection::vec(0usize..5, n)))
}

proptest! {
    #[test]
    fn ari_symmetric_bounded_and_matches_pair_counting((x, y) in labels_strategy()) {
        let a = adjusted_rand_index(&x, &y).unwrap();
        prop_assert_eq!(a, adjusted_rand_index(&y, &x).unwrap());
        prop_assert!((-1.0..=1.0).contains(&a));
        prop_assert!((a - pair_counting_ari(&x, &y)).abs() < 1e-12);
        let na = normalized_ari(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&na));
    }

    #[test]
    fn scores_ignore_cluster_names((x, y) in labels_strategy(), shift in 1usize..7) {
        let renamed: Vec<usize> = y.iter().map(|l| (l + shift) * 3).collect();
        prop_assert_eq!(adjusted_rand_index(&x, &y).unwrap(), adjusted_rand_index(&x, &renamed).unwrap());
        let (h, c, v) = v_measure(&x, &y).unwrap();
        let (h2, c2, v2) = v_measure(&x, &renamed).unwrap();
        prop_assert!((h - h2).abs() < 1e-12 && (c - c2).abs() < 1e-12 && (v - v2).abs() < 1e-12);
        for m in [h, c, v] {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&m));
        }
    }

    #[test]
    fn noise_removal_preserves_ids(seed in any::<u64>(), n in 2usize..14, k in 1usize..4, tau in 0.05f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_matrix(n, &mut rng);
        let mut groups = vec![Vec::new(); k];
        for id in w.ids() {
            groups[rng.random_range(0..k)].push(id.clone());
        }
        let g = Grouping { groups, unassigned: vec![] };
        let pruned = remove_noise(&g, &w, tau);
        prop_assert_eq!(pruned.groups.len(), k);
        let mut all: Vec<&String> = pruned.all_ids().collect();
        all.sort();
        let mut expected: Vec<&String> = w.ids().iter().collect();
        expected.sort();
        prop_assert_eq!(all, expected);
        for (before, after) in g.groups.iter().zip(&pruned.groups) {
            if before.len() >= 2 {
                prop_assert!(!after.is_empty());
            }
        }
    }

    #[test]
    fn grouping_document_round_trips(
        sizes in prop::collection::vec(0usize..4, 1..5),
        scores in prop::collection::vec(0.0f64..=1.0, 5),
        extra in 0usize..3,
    ) {
        let mut next = 0;
        let mut take = |m: usize| -> Vec<String> {
            let out = (next..next + m).map(|i| format!("img-{i}")).collect();
            next += m;
            out
        };
        let records: Vec<GroupRecord> = sizes
            .iter()
            .enumerate()
            .map(|(i, &m)| GroupRecord {
                bed_type: (i % 2 == 0).then(|| "1 King Bed".to_owned()),
                group_id: format!("bedroom-{}", i + 1),
                image_ids: take(m),
                mean_internal_score: scores[i],
            })
            .collect();
        let g = GroupingOutput {
            property_id: "p".into(),
            room_types: BTreeMap::from([("bedroom".to_owned(), records)]),
            unassigned: take(extra),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        write_grouping(&g, &path).unwrap();
        prop_assert_eq!(read_grouping(&path).unwrap(), g);
    }
}

/// Picks uniformly among the offered options.
struct RandomPick(ChaCha8Rng);

impl Predictor for RandomPick {
    fn predict(&mut self, r: &PredictRequest) -> Result<String, BedmapError> {
        let i = self.0.random_range(0..r.options.len());
        Ok(r.options[i].clone())
    }
}

#[test]
fn bed_mapping_never_exceeds_inventory() {
    let vocab = ["1 King Bed", "1 Queen Bed", "2 Twin Beds", "1 Double Bed", "1 Sofa Bed"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000u64 {
        let beds: Vec<&str> = (0..rng.random_range(1..=6)).map(|_| vocab[rng.random_range(0..vocab.len())]).collect();
        let total = beds.len();
        let n_groups = rng.random_range(1..=total);
        let groups: Vec<BedroomGroup> = (0..n_groups)
            .map(|g| BedroomGroup::new(format!("bedroom-{}", g + 1), vec![format!("i{g}")], vec![]))
            .collect();
        let inventory = build_frequency_dict(&beds).unwrap();
        let out = if trial % 2 == 0 {
            map_spaces(&groups, &inventory, &mut RandomPick(ChaCha8Rng::seed_from_u64(trial))).unwrap()
        } else {
            let truth = groups.iter().enumerate().map(|(i, g)| (g.group_id.clone(), beds[i].to_owned()));
            map_spaces(&groups, &inventory, &mut OracleFromTruth::by_group(truth)).unwrap()
        };
        let mut used: BTreeMap<&str, usize> = BTreeMap::new();
        for b in out.assignments.values() {
            *used.entry(b.as_str()).or_insert(0) += 1;
        }
        for (bed, &count) in inventory.counts() {
            let u = used.get(bed.as_str()).copied().unwrap_or(0);
            assert!(u <= count);
            assert_eq!(u + out.leftover.get(bed).copied().unwrap_or(0), count);
        }
        assert_eq!(out.assignments.len(), n_groups);
        if trial % 2 == 1 {
            for (i, g) in groups.iter().enumerate() {
                assert_eq!(out.assignments[&g.group_id], beds[i]);
            }
        }
    }
}
