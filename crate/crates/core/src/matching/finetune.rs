use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::dataset::{Entity, MatchDataset, MatchQuery};
use super::model::{GcVectors, InteractionModel, Role};
use crate::error::{Error, Result};
use crate::eval::{run_ranking, Metrics};
use crate::nn::loss::cosine;
use crate::nn::{AdamW, Graph, NodeId, ParameterStore};
use crate::rng;

/// Cosine scores are divided by this before the listwise softmax.
pub const BI_TEMPERATURE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Head {
    Bi,
    Cross,
}

impl Head {
    pub const fn as_str(self) -> &'static str {
        match self {
            Head::Bi => "BI",
            Head::Cross => "CROSS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BI" => Some(Head::Bi),
            "CROSS" => Some(Head::Cross),
            _ => None,
        }
    }
}

/// Which sides feed their GC segment to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GcUse {
    pub query: bool,
    pub poi: bool,
}

impl GcUse {
    pub const FULL: GcUse = GcUse { query: true, poi: true };
    pub const NONE: GcUse = GcUse { query: false, poi: false };
    pub const POI_ONLY: GcUse = GcUse { query: false, poi: true };
}

/// A trained interaction model bound to a head and a GC usage policy.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub store: &'a ParameterStore,
    pub model: &'a InteractionModel,
    pub head: Head,
    pub gc: GcUse,
}

impl<'a> Scorer<'a> {
    fn query_gc<'e>(&self, e: &'e Entity) -> Option<&'e GcVectors> {
        e.gc.as_ref().filter(|_| self.gc.query)
    }

    fn poi_gc<'e>(&self, e: &'e Entity) -> Option<&'e GcVectors> {
        e.gc.as_ref().filter(|_| self.gc.poi)
    }

    pub fn query_vector(&self, q: &Entity) -> Result<Vec<f64>> {
        let mut g = Graph::new(self.store);
        let v = self.model.tower(&mut g, &q.tokens, self.query_gc(q), Role::Query)?;
        Ok(g.value(v).to_vec())
    }

    pub fn poi_vector(&self, p: &Entity) -> Result<Vec<f64>> {
        let mut g = Graph::new(self.store);
        let v = self.model.tower(&mut g, &p.tokens, self.poi_gc(p), Role::Poi)?;
        Ok(g.value(v).to_vec())
    }

    /// Bi-encoder vectors of every POI of the dataset.
    pub fn poi_vectors(&self, ds: &MatchDataset) -> Result<Vec<Vec<f64>>> {
        ds.pois.iter().map(|p| self.poi_vector(p)).collect()
    }

    /// Scores of `pois` for one query. `poi_vectors` is used by the
    /// bi-encoder when given.
    pub fn score(
        &self,
        ds: &MatchDataset,
        q: &MatchQuery,
        pois: &[usize],
        poi_vectors: Option<&[Vec<f64>]>,
    ) -> Result<Vec<f64>> {
        match self.head {
            Head::Bi => {
                let qv = self.query_vector(&q.entity)?;
                pois.iter()
                    .map(|&i| match poi_vectors {
                        Some(pv) => Ok(cosine(&qv, &pv[i])),
                        None => Ok(cosine(&qv, &self.poi_vector(&ds.pois[i])?)),
                    })
                    .collect()
            }
            Head::Cross => pois
                .iter()
                .map(|&i| {
                    let p = &ds.pois[i];
                    let mut g = Graph::new(self.store);
                    let s = self.model.cross_logit(
                        &mut g,
                        &q.entity.tokens,
                        &p.tokens,
                        self.query_gc(&q.entity),
                        self.poi_gc(p),
                    )?;
                    Ok(g.scalar(s))
                })
                .collect(),
        }
    }
}

/// One query's training list: candidate POI indices and the gold position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListExample {
    pub query: usize,
    pub pois: Vec<usize>,
    pub gold: usize,
}

/// Mean over the batch of the listwise softmax cross-entropy of each
/// query's candidate scores against its gold.
pub fn listwise_loss(g: &mut Graph, scorer: &Scorer, ds: &MatchDataset, batch: &[ListExample]) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::Empty("fine-tuning batch"));
    }
    let model = scorer.model;
    let mut poi_towers: BTreeMap<usize, NodeId> = BTreeMap::new();
    let mut total = None;
    for ex in batch {
        let q = &ds.queries[ex.query];
        if ex.gold >= ex.pois.len() {
            return Err(Error::GoldNotInCandidates {
                query: q.entity.id.clone(),
            });
        }
        let logits = match scorer.head {
            Head::Bi => {
                let qv = model.tower(g, &q.entity.tokens, scorer.query_gc(&q.entity), Role::Query)?;
                let mut rows = Vec::with_capacity(ex.pois.len());
                for &i in &ex.pois {
                    let node = match poi_towers.get(&i) {
                        Some(&n) => n,
                        None => {
                            let p = &ds.pois[i];
                            let n = model.tower(g, &p.tokens, scorer.poi_gc(p), Role::Poi)?;
                            let n = g.l2_normalize(n);
                            poi_towers.insert(i, n);
                            n
                        }
                    };
                    rows.push(node);
                }
                let c = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows) };
                let qn = g.l2_normalize(qv);
                let sims = g.matmul_t(qn, c);
                g.scale(sims, 1.0 / BI_TEMPERATURE)
            }
            Head::Cross => {
                let mut cols = Vec::with_capacity(ex.pois.len());
                for &i in &ex.pois {
                    let p = &ds.pois[i];
                    cols.push(model.cross_logit(
                        g,
                        &q.entity.tokens,
                        &p.tokens,
                        scorer.query_gc(&q.entity),
                        scorer.poi_gc(p),
                    )?);
                }
                if cols.len() == 1 {
                    cols[0]
                } else {
                    g.concat_cols(&cols)
                }
            }
        };
        let l = g.cross_entropy(logits, &[ex.gold], None)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l),
        });
    }
    let total = total.expect("non-empty batch");
    Ok(g.scale(total, 1.0 / batch.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    pub head: Head,
    pub gc: GcUse,
    pub epochs: usize,
    /// Queries per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Candidates per training query, gold included; 0 keeps the full list.
    pub train_candidates: usize,
    /// Dev queries used for checkpoint selection; 0 uses all.
    pub select_queries: usize,
    /// Steps of linear learning-rate warmup.
    pub warmup_steps: usize,
    /// Decay the rate linearly to zero over the remaining steps.
    pub linear_decay: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    /// Dev Recall@1 after each epoch.
    pub dev_recall_at_1: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Learning rate at zero-based `step` of `total`: linear warmup, then
/// constant or linearly decaying to zero.
pub fn scheduled_lr(lr: f64, warmup_steps: usize, linear_decay: bool, step: usize, total: usize) -> f64 {
    if step < warmup_steps {
        lr * (step + 1) as f64 / warmup_steps as f64
    } else if linear_decay && total > warmup_steps {
        lr * (total - step) as f64 / (total - warmup_steps) as f64
    } else {
        lr
    }
}

fn sample_list<R: rand::Rng + ?Sized>(q: &MatchQuery, qi: usize, size: usize, rng: &mut R) -> ListExample {
    let mut negatives: Vec<usize> = q.candidates.iter().copied().filter(|&c| c != q.gold).collect();
    if size > 0 && negatives.len() + 1 > size {
        negatives.shuffle(rng);
        negatives.truncate(size - 1);
    }
    let mut pois = Vec::with_capacity(negatives.len() + 1);
    pois.push(q.gold);
    pois.extend(negatives);
    ListExample {
        query: qi,
        pois,
        gold: 0,
    }
}

/// Listwise fine-tuning with AdamW. After every epoch the dev Recall@1 is
/// measured; the store ends up holding the best epoch's parameters (the
/// earliest one on ties).
pub fn finetune(
    store: &mut ParameterStore,
    model: &InteractionModel,
    train: &MatchDataset,
    dev: &MatchDataset,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport> {
    if train.is_empty() {
        return Err(Error::Empty("training queries"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("fine-tuning needs epochs and a positive batch size"));
    }
    for q in &train.queries {
        if !q.candidates.contains(&q.gold) {
            return Err(Error::GoldNotInCandidates {
                query: q.entity.id.clone(),
            });
        }
    }
    let select = if cfg.select_queries == 0 || cfg.select_queries >= dev.len() {
        dev.clone()
    } else {
        MatchDataset {
            pois: dev.pois.clone(),
            queries: dev.queries[..cfg.select_queries].to_vec(),
        }
    };
    store.reset_optimizer();
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut order_rng = rng::stream(cfg.seed, "ft.order");
    let mut sample_rng = rng::stream(cfg.seed, "ft.sample");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let total_steps = cfg.epochs * train.len().div_ceil(cfg.batch_size);
    let mut report = FinetuneReport {
        step_losses: Vec::new(),
        epoch_losses: Vec::new(),
        dev_recall_at_1: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, ParameterStore)> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ListExample> = chunk
                .iter()
                .map(|&qi| sample_list(&train.queries[qi], qi, cfg.train_candidates, &mut sample_rng))
                .collect();
            let (loss, grads) = {
                let scorer = Scorer {
                    store: &*store,
                    model,
                    head: cfg.head,
                    gc: cfg.gc,
                };
                let mut g = Graph::new(&*store);
                let l = listwise_loss(&mut g, &scorer, train, &batch)?;
                let v = g.scalar(l);
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("fine-tuning epoch {epoch}"),
                    });
                }
                (v, g.backward(l))
            };
            store.accumulate(&grads);
            opt.lr = scheduled_lr(cfg.lr, cfg.warmup_steps, cfg.linear_decay, report.step_losses.len(), total_steps);
            opt.step(store)?;
            report.step_losses.push(loss);
            sum += loss;
            steps += 1;
        }
        report.epoch_losses.push(sum / steps as f64);
        let scorer = Scorer {
            store: &*store,
            model,
            head: cfg.head,
            gc: cfg.gc,
        };
        let r1 = if select.is_empty() {
            0.0
        } else {
            Metrics::compute(&run_ranking(&scorer, &select)?)?.recall_at(1)
        };
        report.dev_recall_at_1.push(r1);
        if best.as_ref().map_or(true, |(b, _)| r1 > *b) {
            report.best_epoch = epoch;
            best = Some((r1, store.clone()));
        }
    }
    if let Some((_, snapshot)) = best {
        store.load_values(&snapshot)?;
    }
    Ok(report)
}
