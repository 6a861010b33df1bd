use std::collections::{BTreeMap, BTreeSet, HashSet};

use council_core::data::{balanced_sample, group_kfold, parse_dataset, Dataset, Sample, Turn};
use council_core::DmrsLabel;
use proptest::prelude::*;

/// `dialogues[d]` lists the gold level of each sample in dialogue `d`.
fn dataset(dialogues: &[Vec<u8>]) -> Dataset {
    let mut samples = Vec::new();
    for (d, labels) in dialogues.iter().enumerate() {
        for (t, &g) in labels.iter().enumerate() {
            samples.push(Sample {
                dialogue_id: format!("d{d}"),
                turns: vec![
                    Turn {
                        speaker: "helper".into(),
                        text: format!("prompt {d} {t}"),
                    },
                    Turn {
                        speaker: "seeker".into(),
                        text: format!("reply {d} {t} \"quoted\" ü"),
                    },
                ],
                target_index: 1,
                gold: Some(DmrsLabel::of(g)),
            });
        }
    }
    Dataset::new(samples)
}

fn dialogues() -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(0u8..9, 1..8), 2..30)
}

proptest! {
    #[test]
    fn jsonl_round_trip(d in dialogues()) {
        let ds = dataset(&d);
        let back = parse_dataset(ds.to_jsonl().as_bytes()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn group_kfold_partitions_by_dialogue(d in dialogues(), k in 2usize..6, seed in any::<u64>()) {
        let ds = dataset(&d);
        prop_assume!(d.len() >= k);
        let folds = group_kfold(&ds, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0usize; ds.len()];
        for f in &folds {
            for &i in &f.val_indices {
                seen[i] += 1;
            }
            prop_assert_eq!(f.train_indices.len() + f.val_indices.len(), ds.len());
            let val_groups: HashSet<&str> = f.val.iter().map(|s| s.dialogue_id.as_str()).collect();
            prop_assert!(f.train.iter().all(|s| !val_groups.contains(s.dialogue_id.as_str())));
            prop_assert!(!f.val.is_empty());
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(group_kfold(&ds, k, seed).unwrap()[0].val_indices.clone(), folds[0].val_indices.clone());
    }

    #[test]
    fn balanced_sample_caps_and_floors(d in dialogues(), cap in 1usize..12, floor_frac in 0usize..100, seed in any::<u64>()) {
        let ds = dataset(&d);
        let floor = cap * floor_frac / 100;
        let out = balanced_sample(&ds, cap, floor, seed).unwrap();
        let count = |ds: &Dataset| {
            let mut m: BTreeMap<DmrsLabel, usize> = BTreeMap::new();
            for s in ds.iter() {
                *m.entry(s.gold.unwrap()).or_default() += 1;
            }
            m
        };
        let before = count(&ds);
        let after = count(&out);
        for (c, &n) in &before {
            let expected = if n > cap { cap } else { n.max(floor) };
            prop_assert_eq!(after[c], expected);
        }
        let classes_after: BTreeSet<_> = after.keys().collect();
        let classes_before: BTreeSet<_> = before.keys().collect();
        prop_assert_eq!(classes_after, classes_before);
        prop_assert!(out.iter().all(|s| ds.samples.contains(s)));
    }
}
