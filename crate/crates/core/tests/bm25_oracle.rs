mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::Rng;

use common::{rng, Bm25Oracle};
use rprs_core::corpus::SegmentedDocument;
use rprs_core::lexical::{build_index, Bm25Params};

const WORDS: [&str; 12] = [
    "claim", "patent", "court", "appeal", "filter", "valve", "rotor", "damage", "notice", "layer", "motor", "gear",
];

fn random_corpus(seed: u64) -> (Vec<SegmentedDocument>, Bm25Oracle, Vec<String>) {
    let mut rng = rng(seed);
    let n_docs = rng.random_range(1..=25);
    let mut docs = Vec::new();
    let mut oracle_docs = Vec::new();
    for i in 0..n_docs {
        let id = format!("doc{i:02}");
        let n_sent = rng.random_range(0..=4);
        let sentences: Vec<String> = (0..n_sent)
            .map(|_| {
                let len = rng.random_range(1..=8);
                (0..len).map(|_| *WORDS.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let tokens = sentences
            .iter()
            .flat_map(|s| s.split(' ').map(str::to_string))
            .collect();
        oracle_docs.push((id.clone(), tokens));
        docs.push(SegmentedDocument::from_sentences(id, sentences));
    }
    let q_len = rng.random_range(1..=5);
    let query = (0..q_len).map(|_| WORDS.choose(&mut rng).unwrap().to_string()).collect();
    (docs, Bm25Oracle { docs: oracle_docs }, query)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn search_matches_brute_force(seed in any::<u64>(), k1 in 0.0f64..3.0, b in 0.0f64..=1.0, exclude in any::<bool>()) {
        let (docs, oracle, query) = random_corpus(seed);
        let index = build_index(&docs).unwrap();
        let params = Bm25Params { k1, b };
        let skip = exclude.then_some("doc00");
        let got = index.bm25_search(params, &query, usize::MAX, skip);
        let want = oracle.search(k1, b, &query, skip);

        let got_ids: BTreeSet<&str> = got.iter().map(|h| h.0.as_str()).collect();
        let want_ids: BTreeSet<&str> = want.iter().map(|h| h.0.as_str()).collect();
        prop_assert_eq!(got_ids, want_ids);
        for (id, score) in &got {
            let reference = oracle.score(k1, b, &query, id);
            prop_assert!((score - reference).abs() < 1e-9, "{id}: {score} vs {reference}");
            let direct = index.bm25_score(params, &query, id).unwrap();
            prop_assert!((score - direct).abs() < 1e-12);
        }
        // Scores descend; equal scores are ordered by id.
        for w in got.windows(2) {
            prop_assert!(w[0].1 >= w[1].1);
            if w[0].1 == w[1].1 {
                prop_assert!(w[0].0 < w[1].0);
            }
        }
        // A shallower search is a prefix of the full one.
        let top3 = index.bm25_search(params, &query, 3, skip);
        prop_assert_eq!(&top3[..], &got[..got.len().min(3)]);
    }

    #[test]
    fn rsj_matches_brute_force(seed in any::<u64>()) {
        let (docs, oracle, _) = random_corpus(seed);
        let index = build_index(&docs).unwrap();
        for w in WORDS {
            prop_assert!((index.rsj(w) - oracle.rsj(w)).abs() < 1e-12);
        }
    }
}
