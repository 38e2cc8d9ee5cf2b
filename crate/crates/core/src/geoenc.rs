//! Geographic encoder: per-family embedding tables summed per object, a
//! learned GC token prepended to the object sequence, a transformer trunk,
//! and the masked-feature and distance-alignment objectives that train it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gcfeat::{GcConfig, GcRecord, FAMILIES, FAMILY_NAMES};
use crate::geodata::GeoPoint;
use crate::masking::{plan_mask, MaskAction};
use crate::nn::{AdamW, Graph, Linear, NodeId, Norm, ParamId, ParameterStore, Transformer, TransformerConfig};
use crate::rng;
use crate::spatial::haversine;

pub type Codes = [u32; FAMILIES];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeoEncoderConfig {
    pub trunk: TransformerConfig,
    /// Valid codes per family; each table carries one extra MASK row.
    pub family_sizes: [usize; FAMILIES],
}

impl GeoEncoderConfig {
    pub fn new(gc: &GcConfig, layers: usize, hidden: usize, heads: usize) -> Self {
        Self {
            trunk: TransformerConfig {
                layers,
                hidden,
                heads,
                ffn_mult: 4,
                max_seq: gc.n_max + 1,
            },
            family_sizes: gc.family_sizes(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeoEncoder {
    cfg: GeoEncoderConfig,
    tables: [ParamId; FAMILIES],
    gc_token: ParamId,
    input_norm: Norm,
    trunk: Transformer,
    heads: Vec<Linear>,
}

impl GeoEncoder {
    pub fn register(store: &mut ParameterStore, cfg: GeoEncoderConfig) -> Result<Self> {
        let h = cfg.trunk.hidden;
        let mut tables = [ParamId(0); FAMILIES];
        for (f, t) in tables.iter_mut().enumerate() {
            *t = store.add_normal(
                &format!("geo.table.{}", FAMILY_NAMES[f]),
                &[cfg.family_sizes[f] + 1, h],
            )?;
        }
        let gc_token = store.add_normal("geo.gc_token", &[1, h])?;
        let input_norm = Norm::register(store, "geo.input_norm", h)?;
        let trunk = Transformer::register(store, "geo.trunk", cfg.trunk)?;
        let heads = (0..FAMILIES)
            .map(|f| Linear::register(store, &format!("geo.mgm.{}", FAMILY_NAMES[f]), h, cfg.family_sizes[f]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            tables,
            gc_token,
            input_norm,
            trunk,
            heads,
        })
    }

    pub fn config(&self) -> &GeoEncoderConfig {
        &self.cfg
    }

    pub fn hidden(&self) -> usize {
        self.cfg.trunk.hidden
    }

    pub fn table(&self, family: usize) -> ParamId {
        self.tables[family]
    }

    pub fn head(&self, family: usize) -> Linear {
        self.heads[family]
    }

    /// Row index of the MASK embedding of a family.
    pub fn mask_code(&self, family: usize) -> u32 {
        self.cfg.family_sizes[family] as u32
    }

    fn check_codes(&self, codes: &Codes) -> Result<()> {
        for (f, &c) in codes.iter().enumerate() {
            if c as usize > self.cfg.family_sizes[f] {
                return Err(Error::CodeOutOfRange {
                    family: FAMILY_NAMES[f],
                    code: c as usize,
                    size: self.cfg.family_sizes[f],
                });
            }
        }
        Ok(())
    }

    /// Sum of the eleven feature embeddings of one object.
    pub fn embed_object(&self, store: &ParameterStore, codes: &Codes) -> Result<Vec<f64>> {
        self.check_codes(codes)?;
        let mut e = vec![0.0; self.hidden()];
        for (f, &c) in codes.iter().enumerate() {
            let row = store.value(self.tables[f]).row(c as usize);
            e.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        Ok(e)
    }

    /// Encodes each record as `[GC, o_1, ..., o_n]`; returns one
    /// `(n+1) × hidden` node per record. No position signal is added.
    pub fn forward(&self, g: &mut Graph, records: &[Vec<Codes>]) -> Result<Vec<NodeId>> {
        let max_objects = self.cfg.trunk.max_seq - 1;
        for r in records {
            if r.len() > max_objects {
                return Err(Error::SequenceTooLong {
                    len: r.len() + 1,
                    max: self.cfg.trunk.max_seq,
                });
            }
            r.iter().try_for_each(|c| self.check_codes(c))?;
        }
        let total: usize = records.iter().map(Vec::len).sum();
        let objects = if total > 0 {
            let mut sum = None;
            for f in 0..FAMILIES {
                let rows: Vec<usize> = records
                    .iter()
                    .flat_map(|r| r.iter().map(move |c| c[f] as usize))
                    .collect();
                let e = g.gather(self.tables[f], &rows)?;
                sum = Some(match sum {
                    None => e,
                    Some(s) => g.add(s, e),
                });
            }
            sum
        } else {
            None
        };
        let token = g.param(self.gc_token);
        let mut out = Vec::with_capacity(records.len());
        let mut offset = 0;
        for r in records {
            let x = match objects {
                Some(all) if !r.is_empty() => {
                    let own = g.slice_rows(all, offset, r.len());
                    g.concat_rows(&[token, own])
                }
                _ => token,
            };
            offset += r.len();
            let x = self.input_norm.forward(g, x);
            out.push(self.trunk.forward(g, x, None)?);
        }
        Ok(out)
    }

    /// Full encoder output `{h_GC, h_1, ..., h_n}` for one record.
    pub fn encode_gc(&self, store: &ParameterStore, record: &GcRecord) -> Result<Vec<Vec<f64>>> {
        let codes: Vec<Codes> = record.objects.iter().map(|o| o.codes()).collect();
        self.encode_codes(store, &codes)
    }

    pub fn encode_codes(&self, store: &ParameterStore, codes: &[Codes]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(store);
        let out = self.forward(&mut g, &[codes.to_vec()])?[0];
        Ok(g.value(out).chunks(self.hidden()).map(<[f64]>::to_vec).collect())
    }

    /// Masked-feature loss: for every selected object, the summed per-family
    /// cross-entropy against its original codes, averaged over selected
    /// objects. `None` when nothing was selected.
    pub fn mgm_loss(&self, g: &mut Graph, outputs: &[NodeId], batch: &GeoBatch) -> Result<Option<NodeId>> {
        let mut rows = Vec::new();
        let mut targets: Vec<Codes> = Vec::new();
        for (i, acts) in batch.actions.iter().enumerate() {
            for (j, a) in acts.iter().enumerate() {
                if a.is_target() {
                    rows.push(g.slice_rows(outputs[i], j + 1, 1));
                    targets.push(batch.original[i][j]);
                }
            }
        }
        if rows.is_empty() {
            return Ok(None);
        }
        let selected = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows) };
        let mut total = None;
        for f in 0..FAMILIES {
            let logits = self.heads[f].forward(g, selected);
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

    /// Distance-alignment loss over the batch's GC vectors. `None` when all
    /// pairwise distances coincide.
    pub fn gcl_loss(&self, g: &mut Graph, outputs: &[NodeId], anchors: &[GeoPoint]) -> Result<Option<NodeId>> {
        let bs = outputs.len();
        if bs < 2 {
            return Err(Error::BatchTooSmall(bs));
        }
        let Some(target) = gcl_target(anchors)? else {
            return Ok(None);
        };
        let heads: Vec<NodeId> = outputs.iter().map(|&o| g.slice_rows(o, 0, 1)).collect();
        let h = g.concat_rows(&heads);
        Ok(Some(kl_rows(g, h, &target)))
    }
}

/// `Σ_i KL(target_i ‖ softmax(ĥ_i ĥ_jᵀ))` over off-diagonal entries, with
/// `ĥ` the L2-normalized rows of `h`.
pub(crate) fn kl_rows(g: &mut Graph, h: NodeId, target: &[f64]) -> NodeId {
    let bs = g.shape(h).0;
    let z = g.l2_normalize(h);
    let sims = g.matmul_t(z, z);
    let allowed = off_diagonal(bs);
    let xent = g.soft_cross_entropy(sims, target, Some(&allowed));
    let neg_entropy: f64 = target.iter().filter(|&&p| p > 0.0).map(|&p| p * libm::log(p)).sum();
    let c = g.input(1, 1, vec![neg_entropy]);
    g.add(xent, c)
}

fn off_diagonal(n: usize) -> Vec<bool> {
    (0..n * n).map(|k| k / n != k % n).collect()
}

/// Pairwise haversine distances, z-scored over off-diagonal entries, negated
/// and squashed by the logistic sigmoid. Diagonal entries are zero. `None`
/// when the off-diagonal distances have zero spread.
pub fn gcl_similarity(anchors: &[GeoPoint]) -> Result<Option<Vec<f64>>> {
    let n = anchors.len();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i * n + j] = haversine(anchors[i], anchors[j]);
            }
        }
    }
    let m = (n * n - n) as f64;
    let off = |k: usize| k / n != k % n;
    let mean = (0..n * n).filter(|&k| off(k)).map(|k| d[k]).sum::<f64>() / m;
    let var = (0..n * n)
        .filter(|&k| off(k))
        .map(|k| (d[k] - mean) * (d[k] - mean))
        .sum::<f64>()
        / m;
    let std = libm::sqrt(var);
    if !(std > 0.0) || std <= 1e-12 * mean.abs().max(1.0) {
        return Ok(None);
    }
    Ok(Some(
        (0..n * n)
            .map(|k| {
                if off(k) {
                    crate::nn::loss::sigmoid(-(d[k] - mean) / std)
                } else {
                    0.0
                }
            })
            .collect(),
    ))
}

/// Row-wise softmax of [`gcl_similarity`] over off-diagonal entries.
pub fn gcl_target(anchors: &[GeoPoint]) -> Result<Option<Vec<f64>>> {
    let n = anchors.len();
    let Some(h) = gcl_similarity(anchors)? else {
        return Ok(None);
    };
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| h[i * n + j]).collect();
        let p = crate::nn::loss::softmax(&row);
        for (slot, j) in (0..n).filter(|&j| j != i).enumerate() {
            t[i * n + j] = p[slot];
        }
    }
    Ok(Some(t))
}

/// One training batch: original codes, the codes fed to the encoder after
/// masking, and the per-object mask decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoBatch {
    pub anchors: Vec<GeoPoint>,
    pub original: Vec<Vec<Codes>>,
    pub inputs: Vec<Vec<Codes>>,
    pub actions: Vec<Vec<MaskAction>>,
}

impl GeoBatch {
    pub fn unmasked(records: &[&GcRecord]) -> Self {
        let original: Vec<Vec<Codes>> = records
            .iter()
            .map(|r| r.objects.iter().map(|o| o.codes()).collect())
            .collect();
        Self {
            anchors: records.iter().map(|r| r.anchor).collect(),
            inputs: original.clone(),
            actions: original.iter().map(|r| vec![MaskAction::Untouched; r.len()]).collect(),
            original,
        }
    }

    /// Whole-object masking: a selected object has every family replaced
    /// together (MASK rows, random valid codes, or left unchanged).
    pub fn masked<R: Rng + ?Sized>(
        records: &[&GcRecord],
        family_sizes: &[usize; FAMILIES],
        mask_prob: f64,
        rng: &mut R,
    ) -> Self {
        let mut b = Self::unmasked(records);
        for (i, r) in b.original.iter().enumerate() {
            let acts = plan_mask(rng, r.len(), mask_prob);
            for (j, a) in acts.iter().enumerate() {
                b.inputs[i][j] = apply_action(*a, &r[j], family_sizes, rng);
            }
            b.actions[i] = acts;
        }
        b
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

pub(crate) fn apply_action<R: Rng + ?Sized>(
    a: MaskAction,
    codes: &Codes,
    family_sizes: &[usize; FAMILIES],
    rng: &mut R,
) -> Codes {
    match a {
        MaskAction::Untouched | MaskAction::Keep => *codes,
        MaskAction::Mask => {
            let mut c = [0; FAMILIES];
            for f in 0..FAMILIES {
                c[f] = family_sizes[f] as u32;
            }
            c
        }
        MaskAction::Random => {
            let mut c = [0; FAMILIES];
            for f in 0..FAMILIES {
                c[f] = rng.gen_range(0..family_sizes[f]) as u32;
            }
            c
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub mask_prob: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTraceRow {
    pub step: usize,
    pub mgm: f64,
    pub gcl: f64,
}

impl GeoTraceRow {
    pub fn total(&self) -> f64 {
        self.mgm + self.gcl
    }
}

/// Minimizes the masked-feature loss plus the distance-alignment loss with
/// AdamW. Record order is reshuffled every epoch from the seed. Returns the
/// per-step trace; parameters are left at their last-epoch values.
pub fn train_geo_encoder(
    store: &mut ParameterStore,
    model: &GeoEncoder,
    records: &[GcRecord],
    cfg: &GeoTrainConfig,
) -> Result<Vec<GeoTraceRow>> {
    if records.is_empty() {
        return Err(Error::Empty("geographic training records"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive"));
    }
    store.reset_optimizer();
    let opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut order_rng = rng::stream(cfg.seed, "geo.order");
    let mut mask_rng = rng::stream(cfg.seed, "geo.mask");
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut trace = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let recs: Vec<&GcRecord> = chunk.iter().map(|&i| &records[i]).collect();
            let batch = GeoBatch::masked(&recs, &model.cfg.family_sizes, cfg.mask_prob, &mut mask_rng);
            let (row, grads) = {
                let mut g = Graph::new(store);
                let outs = model.forward(&mut g, &batch.inputs)?;
                let mgm = model.mgm_loss(&mut g, &outs, &batch)?;
                let gcl = if batch.len() >= 2 {
                    model.gcl_loss(&mut g, &outs, &batch.anchors)?
                } else {
                    None
                };
                let row = GeoTraceRow {
                    step: trace.len(),
                    mgm: mgm.map_or(0.0, |n| g.scalar(n)),
                    gcl: gcl.map_or(0.0, |n| g.scalar(n)),
                };
                if !row.total().is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("geographic encoder step {}", row.step),
                    });
                }
                let loss = match (mgm, gcl) {
                    (Some(a), Some(b)) => Some(g.add(a, b)),
                    (a, b) => a.or(b),
                };
                (row, loss.map(|l| g.backward(l)))
            };
            trace.push(row);
            if let Some(grads) = grads {
                store.accumulate(&grads);
                opt.step(store)?;
            }
        }
    }
    Ok(trace)
}
