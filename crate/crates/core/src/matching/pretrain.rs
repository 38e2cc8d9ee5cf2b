use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::model::{wrap_single, GcVectors, InteractionModel, Role};
use super::tokenizer::{MASK, NUM_SPECIAL};
use crate::error::{Error, Result};
use crate::gcfeat::FAMILIES;
use crate::geoenc::{apply_action, Codes, GeoEncoder};
use crate::masking::{plan_mask, MaskAction};
use crate::nn::{AdamW, Graph, NodeId, ParameterStore};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PretrainTask {
    /// Masked text, GC segment removed.
    MlmSingle,
    /// Masked text, full GC visible.
    MlmMulti,
    /// Masked GC features, full text visible.
    MgmMulti,
}

impl PretrainTask {
    pub const ALL: [PretrainTask; 3] = [PretrainTask::MlmSingle, PretrainTask::MlmMulti, PretrainTask::MgmMulti];

    pub const fn as_str(self) -> &'static str {
        match self {
            PretrainTask::MlmSingle => "MLM_SINGLE",
            PretrainTask::MlmMulti => "MLM_MULTI",
            PretrainTask::MgmMulti => "MGM_MULTI",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// A POI text with its GC codes and the frozen encoder output for them.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainExample {
    pub tokens: Vec<u32>,
    pub codes: Vec<Codes>,
    pub gc: GcVectors,
}

/// The frozen geographic encoder, needed to re-encode masked GC inputs.
#[derive(Debug, Clone, Copy)]
pub struct FrozenGeo<'a> {
    pub store: &'a ParameterStore,
    pub model: &'a GeoEncoder,
}

/// Loss of one task on one batch; `None` when nothing was selected for
/// prediction.
pub fn pretrain_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &InteractionModel,
    batch: &[&PretrainExample],
    task: PretrainTask,
    geo: Option<FrozenGeo>,
    mask_prob: f64,
    rng: &mut R,
) -> Result<Option<NodeId>> {
    match task {
        PretrainTask::MlmSingle | PretrainTask::MlmMulti => {
            mlm_loss(g, model, batch, task == PretrainTask::MlmMulti, mask_prob, rng)
        }
        PretrainTask::MgmMulti => {
            let geo = geo.ok_or(Error::InvalidConfig("MGM_MULTI needs the geographic encoder"))?;
            mgm_loss(g, model, batch, geo, mask_prob, rng)
        }
    }
}

fn mlm_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &InteractionModel,
    batch: &[&PretrainExample],
    with_gc: bool,
    mask_prob: f64,
    rng: &mut R,
) -> Result<Option<NodeId>> {
    let vocab = model.config().vocab_size as u32;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for ex in batch {
        let plan = plan_mask(rng, ex.tokens.len(), mask_prob);
        if !plan.iter().any(|a| a.is_target()) {
            continue;
        }
        let masked: Vec<u32> = ex
            .tokens
            .iter()
            .zip(&plan)
            .map(|(&t, a)| match a {
                MaskAction::Mask => MASK,
                MaskAction::Random => rng.gen_range(NUM_SPECIAL..vocab.max(NUM_SPECIAL + 1)),
                MaskAction::Untouched | MaskAction::Keep => t,
            })
            .collect();
        let seq = wrap_single(&masked);
        let segs = alloc::vec![0; seq.len()];
        let gcs: Vec<(&GcVectors, Role)> = if with_gc { alloc::vec![(&ex.gc, Role::Poi)] } else { Vec::new() };
        let out = model.forward(g, &seq, &segs, &gcs)?;
        for (j, a) in plan.iter().enumerate() {
            if a.is_target() {
                rows.push(g.slice_rows(out, j + 1, 1));
                targets.push(ex.tokens[j] as usize);
            }
        }
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let x = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows) };
    let logits = model.mlm_head().forward(g, x);
    let l = g.cross_entropy(logits, &targets, None)?;
    Ok(Some(g.scale(l, 1.0 / targets.len() as f64)))
}

fn mgm_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &InteractionModel,
    batch: &[&PretrainExample],
    geo: FrozenGeo,
    mask_prob: f64,
    rng: &mut R,
) -> Result<Option<NodeId>> {
    let sizes = model.config().family_sizes;
    let mut rows = Vec::new();
    let mut targets: Vec<Codes> = Vec::new();
    for ex in batch {
        let plan = plan_mask(rng, ex.codes.len(), mask_prob);
        if !plan.iter().any(|a| a.is_target()) {
            continue;
        }
        let masked: Vec<Codes> = ex
            .codes
            .iter()
            .zip(&plan)
            .map(|(c, &a)| apply_action(a, c, &sizes, rng))
            .collect();
        let gc = GcVectors::from_encoder_output(&geo.model.encode_codes(geo.store, &masked)?)?;
        let seq = wrap_single(&ex.tokens);
        let segs = alloc::vec![0; seq.len()];
        let out = model.forward(g, &seq, &segs, &[(&gc, Role::Poi)])?;
        for (j, a) in plan.iter().enumerate() {
            if a.is_target() {
                rows.push(g.slice_rows(out, seq.len() + j, 1));
                targets.push(ex.codes[j]);
            }
        }
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let x = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows) };
    let mut total = None;
    for f in 0..FAMILIES {
        let logits = model.mgm_head(f).forward(g, x);
        let t: Vec<usize> = targets.iter().map(|c| c[f] as usize).collect();
        let l = g.cross_entropy(logits, &t, None)?;
        total = Some(match total {
            None => l,
            Some(s) => g.add(s, l),
        });
    }
    let total = total.expect("at least one family");
    Ok(Some(g.scale(total, 1.0 / targets.len() as f64)))
}

/// One optimizer step of `task`; returns the batch loss (0 when nothing
/// was selected, in which case no update happens).
#[allow(clippy::too_many_arguments)]
pub fn pretrain_step<R: Rng + ?Sized>(
    store: &mut ParameterStore,
    model: &InteractionModel,
    batch: &[&PretrainExample],
    task: PretrainTask,
    geo: Option<FrozenGeo>,
    opt: &AdamW,
    mask_prob: f64,
    rng: &mut R,
) -> Result<f64> {
    let (loss, grads) = {
        let mut g = Graph::new(store);
        match pretrain_loss(&mut g, model, batch, task, geo, mask_prob, rng)? {
            None => (0.0, None),
            Some(l) => {
                let v = g.scalar(l);
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("{} loss", task.as_str()),
                    });
                }
                (v, Some(g.backward(l)))
            }
        }
    };
    if let Some(grads) = grads {
        store.accumulate(&grads);
        opt.step(store)?;
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub mask_prob: f64,
    pub seed: u64,
    /// Cycled per batch in this order.
    pub tasks: Vec<PretrainTask>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainTraceRow {
    pub step: usize,
    pub epoch: usize,
    pub task: PretrainTask,
    pub loss: f64,
}

/// Trains the tasks in turns, one batch each, for `cfg.epochs` passes over
/// the shuffled corpus. Parameters are left at their last-epoch values.
pub fn pretrain_round_robin(
    store: &mut ParameterStore,
    model: &InteractionModel,
    corpus: &[PretrainExample],
    geo: Option<FrozenGeo>,
    cfg: &PretrainConfig,
) -> Result<Vec<PretrainTraceRow>> {
    if corpus.is_empty() {
        return Err(Error::Empty("pre-training corpus"));
    }
    if cfg.tasks.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("pre-training needs tasks and a positive batch size"));
    }
    store.reset_optimizer();
    let opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut order_rng = rng::stream(cfg.seed, "mm.order");
    let mut mask_rng = rng::stream(cfg.seed, "mm.mask");
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let task = cfg.tasks[trace.len() % cfg.tasks.len()];
            let batch: Vec<&PretrainExample> = chunk.iter().map(|&i| &corpus[i]).collect();
            let loss = pretrain_step(store, model, &batch, task, geo, &opt, cfg.mask_prob, &mut mask_rng)?;
            trace.push(PretrainTraceRow {
                step: trace.len(),
                epoch,
                task,
                loss,
            });
        }
    }
    Ok(trace)
}
