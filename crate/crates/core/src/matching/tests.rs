use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::*;
use crate::gcfeat::{GcConfig, FAMILIES};
use crate::geoenc::{Codes, GeoEncoder, GeoEncoderConfig};
use crate::geodata::QueryType;
use crate::nn::{grad_check, Graph, ParameterStore, TransformerConfig};
use crate::rng;
use crate::spatial::Rect;

const VOCAB: usize = 12;
const GEO_H: usize = 8;

fn gc_config() -> GcConfig {
    let mut gc = GcConfig::new(Rect::new(120.0, 30.0, 120.2, 30.2).unwrap());
    gc.k = 2;
    gc.n_grid = 5;
    gc.id_buckets = 6;
    gc.n_max = 4;
    gc
}

fn config(layers: usize, hidden: usize) -> InteractionConfig {
    InteractionConfig {
        trunk: TransformerConfig {
            layers,
            hidden,
            heads: 2,
            ffn_mult: 2,
            max_seq: 32,
        },
        vocab_size: VOCAB,
        geo_hidden: GEO_H,
        family_sizes: gc_config().family_sizes(),
    }
}

fn model(seed: u64, layers: usize, hidden: usize) -> (ParameterStore, InteractionModel) {
    let mut store = ParameterStore::new(seed);
    let m = InteractionModel::register(&mut store, config(layers, hidden)).unwrap();
    (store, m)
}

fn geo(seed: u64) -> (ParameterStore, GeoEncoder) {
    let mut store = ParameterStore::new(seed);
    let m = GeoEncoder::register(&mut store, GeoEncoderConfig::new(&gc_config(), 1, GEO_H, 2)).unwrap();
    (store, m)
}

fn gc_vectors(seed: u64, n: usize) -> GcVectors {
    let mut r = rng::stream(seed, "gcv");
    GcVectors::new(n, GEO_H, (0..n * GEO_H).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn codes(seed: u32, n: usize) -> Vec<Codes> {
    let sizes = gc_config().family_sizes();
    (0..n)
        .map(|j| {
            let mut c = [0; FAMILIES];
            for f in 0..FAMILIES {
                c[f] = ((seed as usize * 7 + j * 3 + f) % sizes[f]) as u32;
            }
            c
        })
        .collect()
}

fn example(seed: u32, geo_store: &ParameterStore, geo_model: &GeoEncoder) -> PretrainExample {
    let codes = codes(seed, 3);
    let out = geo_model.encode_codes(geo_store, &codes).unwrap();
    PretrainExample {
        tokens: (0..5).map(|i| NUM_SPECIAL + (seed + i) % (VOCAB as u32 - NUM_SPECIAL)).collect(),
        codes,
        gc: GcVectors::from_encoder_output(&out).unwrap(),
    }
}

fn entity(id: &str, seed: u32, n_gc: usize) -> Entity {
    Entity {
        id: id.into(),
        tokens: (0..3).map(|i| NUM_SPECIAL + (seed * 3 + i) % (VOCAB as u32 - NUM_SPECIAL)).collect(),
        gc: Some(gc_vectors(u64::from(seed), n_gc)),
    }
}

fn dataset(n_pois: usize) -> MatchDataset {
    let pois: Vec<Entity> = (0..n_pois).map(|i| entity(&alloc::format!("p{i}"), i as u32, 2)).collect();
    let queries = (0..2)
        .map(|i| MatchQuery {
            entity: entity(&alloc::format!("q{i}"), 40 + i as u32, 3),
            query_type: QueryType::Address,
            candidates: (0..n_pois).collect(),
            gold: i,
        })
        .collect();
    MatchDataset { pois, queries }
}

#[test]
fn forward_lengths() {
    let (store, m) = model(1, 1, 16);
    let tokens = [5, 6, 7];
    let out = multimodal_forward(&store, &m, &tokens, None).unwrap();
    assert_eq!(out.len(), 5);
    assert!(out.geo.is_empty());
    let out = multimodal_forward(&store, &m, &tokens, Some(&gc_vectors(1, 4))).unwrap();
    assert_eq!((out.text.len(), out.geo.len()), (5, 4));
    let long = vec![5; 40];
    assert!(matches!(
        multimodal_forward(&store, &m, &long, None),
        Err(crate::Error::SequenceTooLong { .. })
    ));
}

/// Frozen CLS of a one-layer, width-16 model (seed 21) on a fixed fixture.
#[test]
fn golden_cls_vector() {
    let (store, m) = model(21, 1, 16);
    let out = multimodal_forward(&store, &m, &[5, 9, 11], Some(&gc_vectors(3, 2))).unwrap();
    for (a, b) in out.cls().iter().zip(GOLDEN_CLS) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

const GOLDEN_CLS: [f64; 16] = [
    0.6606154838730194,
    -0.019334238932121005,
    -0.3866840782330706,
    0.800787361256966,
    -0.7025578051696824,
    1.3758356209895104,
    -0.95947445345677,
    0.8258201334132755,
    -0.6817121096034469,
    1.9536988460077764,
    -0.9787076346916628,
    -1.8383306532921566,
    0.1278605898761267,
    -1.2037331099176665,
    0.8068753123555796,
    0.21904073552432282,
];

#[test]
fn mlm_single_ignores_the_gc_segment() {
    let (store, m) = model(2, 1, 16);
    let (gs, gm) = geo(3);
    let a = example(1, &gs, &gm);
    let mut b = a.clone();
    b.gc = gc_vectors(99, 3);
    let loss = |ex: &PretrainExample| {
        let mut g = Graph::new(&store);
        let mut r = rng::stream(5, "mask");
        let l = pretrain_loss(&mut g, &m, &[ex], PretrainTask::MlmSingle, None, 1.0, &mut r).unwrap();
        g.scalar(l.unwrap())
    };
    assert_eq!(loss(&a), loss(&b));
    let mut g = Graph::new(&store);
    let mut r = rng::stream(5, "mask");
    let l = pretrain_loss(&mut g, &m, &[&a], PretrainTask::MlmMulti, None, 1.0, &mut r).unwrap();
    assert_ne!(g.scalar(l.unwrap()), loss(&a));
}

#[test]
fn zero_mask_probability_gives_no_loss() {
    let (store, m) = model(2, 1, 16);
    let (gs, gm) = geo(3);
    let ex = example(1, &gs, &gm);
    for task in PretrainTask::ALL {
        let mut g = Graph::new(&store);
        let mut r = rng::stream(5, "mask");
        let frozen = FrozenGeo { store: &gs, model: &gm };
        assert!(pretrain_loss(&mut g, &m, &[&ex], task, Some(frozen), 0.0, &mut r)
            .unwrap()
            .is_none());
    }
}

#[test]
fn uniform_mlm_head_gives_log_vocab() {
    let (mut store, m) = model(2, 1, 16);
    let head = m.mlm_head();
    store.value_mut(head.w).data_mut().fill(0.0);
    let (gs, gm) = geo(3);
    let ex = example(4, &gs, &gm);
    let mut g = Graph::new(&store);
    let mut r = rng::stream(5, "mask");
    let l = pretrain_loss(&mut g, &m, &[&ex], PretrainTask::MlmMulti, None, 1.0, &mut r).unwrap();
    assert!((g.scalar(l.unwrap()) - libm::log(VOCAB as f64)).abs() < 1e-12);
}

#[test]
fn pretraining_losses_pass_grad_check() {
    let (gs, gm) = geo(3);
    let batch = [example(1, &gs, &gm), example(2, &gs, &gm)];
    let refs: Vec<&PretrainExample> = batch.iter().collect();
    for task in PretrainTask::ALL {
        let (mut store, m) = model(4, 2, 16);
        let frozen = FrozenGeo { store: &gs, model: &gm };
        let report = grad_check(&mut store, 1e-5, |g| {
            let mut r = rng::stream(8, "mask");
            let l = pretrain_loss(g, &m, &refs, task, Some(frozen), 0.5, &mut r)?;
            // MGM sums eleven families; scale keeps roundoff under the floor.
            Ok(g.scale(l.expect("targets selected"), 0.1))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{}: {report:?}", task.as_str());
    }
}

#[test]
fn round_robin_cycles_tasks_and_is_deterministic() {
    let (gs, gm) = geo(3);
    let corpus: Vec<PretrainExample> = (0..6).map(|i| example(i, &gs, &gm)).collect();
    let cfg = PretrainConfig {
        epochs: 1,
        batch_size: 2,
        lr: 1e-3,
        weight_decay: 0.01,
        mask_prob: 0.5,
        seed: 17,
        tasks: PretrainTask::ALL.to_vec(),
    };
    let run = || {
        let (mut store, m) = model(6, 1, 16);
        let frozen = FrozenGeo { store: &gs, model: &gm };
        let trace = pretrain_round_robin(&mut store, &m, &corpus, Some(frozen), &cfg).unwrap();
        (trace, store.checksum())
    };
    let (t1, c1) = run();
    let (t2, c2) = run();
    assert_eq!(t1, t2);
    assert_eq!(c1, c2);
    let tasks: Vec<PretrainTask> = t1.iter().map(|r| r.task).collect();
    assert_eq!(tasks, PretrainTask::ALL.to_vec());
}

#[test]
fn bi_score_properties() {
    let (mut store, m) = model(7, 2, 16);
    let q = entity("q", 1, 2);
    let p = entity("p", 2, 3);
    let same = bi_score(&store, &m, x(&q, Role::Poi), x(&q, Role::Poi)).unwrap();
    assert!((same - 1.0).abs() < 1e-6);
    let ab = bi_score(&store, &m, x(&q, Role::Query), x(&p, Role::Poi)).unwrap();
    let ba = bi_score(&store, &m, x(&p, Role::Poi), x(&q, Role::Query)).unwrap();
    assert_eq!(ab, ba);
    assert!((-1.0..=1.0).contains(&ab));
    // A collapsed final LayerNorm maps every input to the same vector.
    let gamma = store.id("mm.trunk.layer1.ln2.gamma").unwrap();
    store.value_mut(gamma).data_mut().fill(0.0);
    let beta = store.id("mm.trunk.layer1.ln2.beta").unwrap();
    store.value_mut(beta).data_mut()[0] = 1.0;
    assert!((bi_score(&store, &m, x(&q, Role::Query), x(&p, Role::Poi)).unwrap() - 1.0).abs() < 1e-12);
}

fn x(e: &Entity, role: Role) -> PairExample<'_> {
    PairExample {
        tokens: &e.tokens,
        gc: e.gc.as_ref(),
        role,
    }
}

fn swap_discriminator(store: &mut ParameterStore, m: &InteractionModel) {
    let d = store.value_mut(m.discriminator()).data_mut();
    let h = d.len() / 2;
    let (a, b) = d.split_at_mut(h);
    a.swap_with_slice(b);
}

#[test]
fn discriminator_rows_matter_for_asymmetric_gc() {
    let (mut store, m) = model(9, 2, 16);
    let q = entity("q", 1, 2);
    let p = entity("p", 2, 3);
    let score = |s: &ParameterStore| {
        cross_score(
            s,
            &m,
            PairExample { tokens: &q.tokens, gc: q.gc.as_ref(), role: Role::Query },
            PairExample { tokens: &p.tokens, gc: p.gc.as_ref(), role: Role::Poi },
        )
        .unwrap()
    };
    let before = score(&store);
    swap_discriminator(&mut store, &m);
    assert_ne!(before, score(&store));
}

#[test]
fn discriminator_swap_keeps_argmax_for_identical_gc() {
    let (mut store, m) = model(10, 2, 16);
    let shared = gc_vectors(5, 3);
    let mut ds = dataset(4);
    for p in &mut ds.pois {
        p.gc = Some(shared.clone());
    }
    ds.queries[0].entity.gc = Some(shared);
    let cands: Vec<usize> = (0..4).collect();
    let scores = |s: &ParameterStore| {
        let scorer = Scorer { store: s, model: &m, head: Head::Cross, gc: GcUse::FULL };
        scorer.score(&ds, &ds.queries[0], &cands, None).unwrap()
    };
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    let before = scores(&store);
    swap_discriminator(&mut store, &m);
    let after = scores(&store);
    assert_eq!(argmax(&before), argmax(&after));
    for (a, b) in before.iter().zip(&after) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn absent_query_gc_is_still_scorable() {
    let (store, m) = model(11, 1, 16);
    let q = entity("q", 1, 2);
    let p = entity("p", 2, 3);
    let s = cross_score(
        &store,
        &m,
        PairExample { tokens: &q.tokens, gc: None, role: Role::Query },
        PairExample { tokens: &p.tokens, gc: p.gc.as_ref(), role: Role::Poi },
    )
    .unwrap();
    assert!(s.is_finite());
}

/// Frozen cross-encoder logit of a one-layer, width-16 model (seed 22).
#[test]
fn golden_cross_score() {
    let (store, m) = model(22, 1, 16);
    let q = entity("q", 1, 2);
    let p = entity("p", 2, 3);
    let s = cross_score(
        &store,
        &m,
        PairExample { tokens: &q.tokens, gc: q.gc.as_ref(), role: Role::Query },
        PairExample { tokens: &p.tokens, gc: p.gc.as_ref(), role: Role::Poi },
    )
    .unwrap();
    assert!((s - GOLDEN_CROSS).abs() < 1e-12, "{s}");
}

const GOLDEN_CROSS: f64 = 0.0003331733106780593;

#[test]
fn listwise_loss_examples() {
    let ds = dataset(20);
    let (mut store, m) = model(12, 1, 16);
    let single = [ListExample { query: 0, pois: vec![0], gold: 0 }];
    let all = [ListExample { query: 0, pois: (0..20).collect(), gold: 0 }];
    for head in [Head::Bi, Head::Cross] {
        let scorer = Scorer { store: &store, model: &m, head, gc: GcUse::FULL };
        let mut g = Graph::new(&store);
        let l = listwise_loss(&mut g, &scorer, &ds, &single).unwrap();
        assert!(g.scalar(l).abs() < 1e-12);
    }
    let sim = store.id("mm.sim.out.w").unwrap();
    store.value_mut(sim).data_mut().fill(0.0);
    let scorer = Scorer { store: &store, model: &m, head: Head::Cross, gc: GcUse::FULL };
    let mut g = Graph::new(&store);
    let l = listwise_loss(&mut g, &scorer, &ds, &all).unwrap();
    assert!((g.scalar(l) - libm::log(20.0)).abs() < 1e-12);
}

#[test]
fn finetuning_losses_pass_grad_check() {
    let ds = dataset(3);
    let batch = [
        ListExample { query: 0, pois: vec![0, 1, 2], gold: 0 },
        ListExample { query: 1, pois: vec![2, 1], gold: 1 },
    ];
    for head in [Head::Bi, Head::Cross] {
        let (mut store, m) = model(13, 2, 16);
        // Cosine over a 0.05 temperature is roundoff-noisy at smaller steps.
        let report = grad_check(&mut store, 1e-4, |g| {
            let scorer = Scorer { store: g.store(), model: &m, head, gc: GcUse::FULL };
            listwise_loss(g, &scorer, &ds, &batch)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{}: {report:?}", head.as_str());
    }
}

#[test]
fn finetune_keeps_best_dev_epoch_and_is_deterministic() {
    let train = dataset(4);
    let dev = dataset(4);
    let cfg = FinetuneConfig {
        head: Head::Bi,
        gc: GcUse::FULL,
        epochs: 3,
        batch_size: 2,
        lr: 1e-3,
        weight_decay: 0.01,
        train_candidates: 3,
        select_queries: 0,
        warmup_steps: 0,
        linear_decay: false,
        seed: 17,
    };
    let run = || {
        let (mut store, m) = model(14, 1, 16);
        let report = finetune(&mut store, &m, &train, &dev, &cfg).unwrap();
        (report, store.checksum())
    };
    let (r1, c1) = run();
    let (r2, c2) = run();
    assert_eq!(r1, r2);
    assert_eq!(c1, c2);
    assert_eq!(r1.dev_recall_at_1.len(), 3);
    let best = r1.dev_recall_at_1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r1.dev_recall_at_1[r1.best_epoch], best);
    assert!(r1.dev_recall_at_1[..r1.best_epoch].iter().all(|&x| x < best));
}

#[test]
fn finetune_rejects_gold_outside_candidates() {
    let mut train = dataset(4);
    train.queries[0].candidates = vec![1, 2];
    let (mut store, m) = model(15, 1, 16);
    let cfg = FinetuneConfig {
        head: Head::Cross,
        gc: GcUse::FULL,
        epochs: 1,
        batch_size: 2,
        lr: 1e-3,
        weight_decay: 0.0,
        train_candidates: 0,
        select_queries: 0,
        warmup_steps: 0,
        linear_decay: false,
        seed: 1,
    };
    let dev = dataset(4);
    assert!(matches!(
        finetune(&mut store, &m, &train, &dev, &cfg),
        Err(crate::Error::GoldNotInCandidates { .. })
    ));
}
