use std::collections::BTreeMap;

use geomatch_core::bench::{generate_benchmark, poi_name, GenSpec};
use geomatch_core::eval::{mrr_at_k, rank_scored, recall_at_k, run_ranking, run_retrieval, RankingResult, RetrievalPool, ScoredPoi};
use geomatch_core::matching::{
    Entity, GcUse, GcVectors, Head, InteractionConfig, InteractionModel, MatchDataset, MatchQuery, Scorer,
};
use geomatch_core::nn::loss::cosine;
use geomatch_core::nn::{ParameterStore, TransformerConfig};
use geomatch_core::rng;
use geomatch_core::spatial::haversine;
use geomatch_core::QueryType;
use proptest::prelude::*;
use rand::Rng;

fn result(rank: Option<usize>) -> RankingResult {
    RankingResult {
        query_id: "q".into(),
        ranked: Vec::new(),
        gold: "g".into(),
        gold_rank: rank,
    }
}

fn brute_recall(ranks: &[Option<usize>], k: usize) -> f64 {
    let mut hits = 0usize;
    for r in ranks {
        if let Some(r) = r {
            if *r <= k {
                hits += 1;
            }
        }
    }
    hits as f64 / ranks.len() as f64
}

fn brute_mrr(ranks: &[Option<usize>], k: usize) -> f64 {
    let mut total = 0.0;
    for r in ranks {
        total += match r {
            Some(r) if *r <= k => 1.0 / *r as f64,
            _ => 0.0,
        };
    }
    total / ranks.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_match_brute_force(
        ranks in prop::collection::vec(prop::option::weighted(0.9, 1usize..60), 1..80),
        k in 1usize..70,
    ) {
        let results: Vec<RankingResult> = ranks.iter().map(|&r| result(r)).collect();
        prop_assert_eq!(recall_at_k(&results, k).unwrap(), brute_recall(&ranks, k));
        prop_assert_eq!(mrr_at_k(&results, k).unwrap(), brute_mrr(&ranks, k));
        prop_assert_eq!(mrr_at_k(&results, 1).unwrap(), recall_at_k(&results, 1).unwrap());
        prop_assert!(mrr_at_k(&results, k).unwrap() <= recall_at_k(&results, k).unwrap());
        prop_assert!(recall_at_k(&results, k).unwrap() <= recall_at_k(&results, k + 1).unwrap());
    }

    #[test]
    fn ranking_is_a_sorted_permutation(
        scores in prop::collection::vec(-3i32..3, 1..30),
        gold in 0usize..30,
    ) {
        let pool: Vec<ScoredPoi> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoredPoi { id: format!("p{i:02}"), score: f64::from(s) })
            .collect();
        let gold = format!("p{:02}", gold % scores.len());
        let r = rank_scored("q", pool.clone(), &gold, None);
        let mut ids: Vec<&str> = r.ranked.iter().map(|p| p.id.as_str()).collect();
        for w in r.ranked.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
        }
        prop_assert_eq!(r.ranked[r.gold_rank.unwrap() - 1].id.as_str(), gold.as_str());
        ids.sort_unstable();
        let mut orig: Vec<&str> = pool.iter().map(|p| p.id.as_str()).collect();
        orig.sort_unstable();
        prop_assert_eq!(ids, orig);
    }
}

const HIDDEN: usize = 8;
const VOCAB: usize = 40;

fn tiny_model() -> (ParameterStore, InteractionModel) {
    let mut store = ParameterStore::new(5);
    let cfg = InteractionConfig {
        trunk: TransformerConfig { layers: 1, hidden: HIDDEN, heads: 2, ffn_mult: 2, max_seq: 16 },
        vocab_size: VOCAB,
        geo_hidden: 4,
        family_sizes: [2; 11],
    };
    let m = InteractionModel::register(&mut store, cfg).unwrap();
    (store, m)
}

fn random_dataset(n_pois: usize, n_queries: usize, cands: usize, seed: u64) -> MatchDataset {
    let mut r = rng::stream(seed, "ds");
    let entity = |id: String, r: &mut rng::StreamRng| {
        let n_gc = r.gen_range(0..3);
        Entity {
            id,
            tokens: (0..r.gen_range(1..5)).map(|_| r.gen_range(5..VOCAB as u32)).collect(),
            gc: Some(GcVectors::new(n_gc, 4, (0..n_gc * 4).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()),
        }
    };
    let pois = (0..n_pois).map(|i| entity(format!("p{i:04}"), &mut r)).collect();
    let queries = (0..n_queries)
        .map(|i| {
            let mut candidates: Vec<usize> = (0..n_pois).collect();
            for j in 0..cands {
                let k = r.gen_range(j..n_pois);
                candidates.swap(j, k);
            }
            candidates.truncate(cands);
            let gold = candidates[r.gen_range(0..cands)];
            MatchQuery {
                entity: entity(format!("q{i:03}"), &mut r),
                query_type: QueryType::Address,
                candidates,
                gold,
            }
        })
        .collect();
    MatchDataset { pois, queries }
}

#[test]
fn retrieval_over_candidates_reproduces_bi_ranking() {
    let (store, model) = tiny_model();
    let ds = random_dataset(60, 25, 12, 1);
    let scorer = Scorer { store: &store, model: &model, head: Head::Bi, gc: GcUse::FULL };
    let ranked = run_ranking(&scorer, &ds).unwrap();
    let retrieved = run_retrieval(&scorer, &ds, RetrievalPool::Candidates, 12).unwrap();
    assert_eq!(ranked, retrieved);
    let top1 = run_retrieval(&scorer, &ds, RetrievalPool::Candidates, 1).unwrap();
    assert!(top1.iter().all(|r| r.ranked.len() == 1));
    let cross = Scorer { head: Head::Cross, ..scorer };
    assert!(run_retrieval(&cross, &ds, RetrievalPool::Full, 5).is_err());
}

#[test]
fn top_k_retrieval_agrees_with_a_full_sort() {
    let (store, model) = tiny_model();
    let ds = random_dataset(1000, 10, 5, 2);
    let scorer = Scorer { store: &store, model: &model, head: Head::Bi, gc: GcUse::FULL };
    let got = run_retrieval(&scorer, &ds, RetrievalPool::Full, 25).unwrap();
    let pv = scorer.poi_vectors(&ds).unwrap();
    for (q, r) in ds.queries.iter().zip(&got) {
        let qv = scorer.query_vector(&q.entity).unwrap();
        let mut all: Vec<(f64, &str)> = ds.pois.iter().zip(&pv).map(|(p, v)| (cosine(&qv, v), p.id.as_str())).collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        let want: Vec<&str> = all[..25].iter().map(|x| x.1).collect();
        let have: Vec<&str> = r.ranked.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(have, want);
    }
}

#[test]
fn scripted_oracles_bound_the_generated_benchmark() {
    let spec = GenSpec { collision_rate: 0.5, near_fraction: 1.0, ..GenSpec::default() };
    let bundle = generate_benchmark(&spec).unwrap();
    let (mut gc_hits, mut text_expect) = (0.0, 0.0);
    for q in bundle.queries() {
        let gold = bundle.poi(&q.gold).unwrap();
        let same: Vec<_> = q
            .candidates
            .iter()
            .map(|id| bundle.poi(id).unwrap())
            .filter(|p| poi_name(&p.text) == poi_name(&gold.text))
            .collect();
        let l = q.location.unwrap();
        let nearest = same
            .iter()
            .min_by(|a, b| haversine(l, a.location).partial_cmp(&haversine(l, b.location)).unwrap())
            .unwrap();
        gc_hits += f64::from(u8::from(nearest.id == gold.id));
        text_expect += 1.0 / same.len() as f64;
    }
    let n = bundle.queries().len() as f64;
    assert_eq!(gc_hits / n, 1.0);
    assert!(text_expect / n <= 0.75, "{}", text_expect / n);

    let mut names: BTreeMap<&str, usize> = BTreeMap::new();
    for p in bundle.pois() {
        *names.entry(poi_name(&p.text)).or_default() += 1;
    }
    let shared = bundle.pois().iter().filter(|p| names[poi_name(&p.text)] > 1).count();
    assert!((shared as f64 / bundle.pois().len() as f64 - 0.5).abs() < 0.02);
}

#[test]
fn default_spec_fills_every_candidate_list() {
    let bundle = generate_benchmark(&GenSpec::default()).unwrap();
    assert_eq!(bundle.counts(), (100, 500, 2000));
    for (split, size) in [("train", 20), ("dev", 40), ("test", 40)] {
        for q in bundle.split(split) {
            assert_eq!(q.candidates.len(), size);
            assert!(q.candidates.contains(&q.gold));
        }
    }
    assert_eq!(generate_benchmark(&GenSpec::default()).unwrap(), bundle);
}
