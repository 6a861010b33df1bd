use council_core::data::{Dataset, Sample, Turn};
use council_core::retrieval::{mmr_greedy, mmr_select, top_k_relevance, TfIdfIndex, TokenizerConfig};
use council_core::DmrsLabel;
use proptest::prelude::*;

const WORDS: [&str; 12] = ["calm", "angry", "laugh", "fine", "worry", "deny", "sorry", "plan", "hope", "blame", "joke", "tired"];

fn corpus(docs: &[(u8, Vec<usize>, u8)]) -> Dataset {
    Dataset::new(
        docs.iter()
            .map(|(d, words, g)| Sample {
                dialogue_id: format!("d{d}"),
                turns: vec![Turn {
                    speaker: "seeker".into(),
                    text: words.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" "),
                }],
                target_index: 0,
                gold: Some(DmrsLabel::of(*g)),
            })
            .collect(),
    )
}

fn docs() -> impl Strategy<Value = Vec<(u8, Vec<usize>, u8)>> {
    prop::collection::vec((0u8..6, prop::collection::vec(0..WORDS.len(), 1..6), 0u8..9), 3..25)
}

proptest! {
    #[test]
    fn mmr_ignores_candidate_order(
        rel in prop::collection::vec(0.0f64..1.0, 1..12),
        seed in any::<u64>(),
        k in 1usize..6,
        lambda in 0.0f64..=1.0,
    ) {
        let n = rel.len();
        let sim = |a: usize, b: usize| if a == b { 1.0 } else { (((a * 7 + b * 7) % 11) as f64) / 11.0 };
        let ids: Vec<usize> = (0..n).collect();
        let forward = mmr_greedy(&ids, &rel, sim, k, lambda);
        let mut perm = ids.clone();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let prel: Vec<f64> = perm.iter().map(|&i| rel[i]).collect();
        let shuffled = mmr_greedy(&perm, &prel, sim, k, lambda);
        prop_assert_eq!(forward, shuffled);
    }

    #[test]
    fn exclusion_never_leaks(d in docs(), k in 1usize..5) {
        let ds = corpus(&d);
        let index = TfIdfIndex::build(&ds, &TokenizerConfig::default()).unwrap();
        for q in ds.iter() {
            for set in [mmr_select(&index, q, k, 0.5, true), top_k_relevance(&index, q, k, true)] {
                if let Ok(set) = set {
                    prop_assert!(set.rows().all(|r| index.meta(r).dialogue_id != q.dialogue_id));
                }
            }
        }
    }

    #[test]
    fn lambda_one_is_top_k(d in docs(), k in 1usize..5) {
        let ds = corpus(&d);
        let index = TfIdfIndex::build(&ds, &TokenizerConfig::default()).unwrap();
        let q = &ds.samples[0];
        if let (Ok(a), Ok(b)) = (mmr_select(&index, q, k, 1.0, true), top_k_relevance(&index, q, k, true)) {
            let sa: Vec<f64> = a.items.iter().map(|e| e.score).collect();
            let sb: Vec<f64> = b.items.iter().map(|e| e.score).collect();
            prop_assert_eq!(sa.len(), sb.len());
            for (x, y) in sa.iter().zip(&sb) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
