use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tokenizer::{CLS, SEP};
use crate::error::{Error, Result};
use crate::gcfeat::{FAMILIES, FAMILY_NAMES};
use crate::nn::loss::cosine;
use crate::nn::{Graph, Linear, NodeId, Norm, ParamId, ParameterStore, Transformer, TransformerConfig};

/// Which side a GC segment belongs to; selects the discriminator row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Query,
    Poi,
}

impl Role {
    pub const fn index(self) -> usize {
        match self {
            Role::Query => 0,
            Role::Poi => 1,
        }
    }
}

/// Frozen geographic-encoder outputs for the objects of one record
/// (`n × width`, row-major). The GC token output is not included.
#[derive(Debug, Clone, PartialEq)]
pub struct GcVectors {
    n: usize,
    width: usize,
    data: Vec<f64>,
}

impl GcVectors {
    pub fn new(n: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * width {
            return Err(Error::ShapeMismatch {
                expected: "n × width GC vectors",
            });
        }
        Ok(Self { n, width, data })
    }

    /// Drops the leading GC-token row of a full encoder output.
    pub fn from_encoder_output(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().skip(1).flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len().saturating_sub(1), width, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionConfig {
    pub trunk: TransformerConfig,
    pub vocab_size: usize,
    pub geo_hidden: usize,
    pub family_sizes: [usize; FAMILIES],
}

/// Text embeddings, GC projection, discriminator rows, a transformer trunk,
/// MLM and per-family MGM heads, and the two-layer similarity MLP.
#[derive(Debug, Clone)]
pub struct InteractionModel {
    cfg: InteractionConfig,
    word: ParamId,
    position: ParamId,
    segment: ParamId,
    discriminator: ParamId,
    gc_proj: Linear,
    input_norm: Norm,
    trunk: Transformer,
    mlm_head: Linear,
    mgm_heads: Vec<Linear>,
    sim_hidden: Linear,
    sim_out: Linear,
}

/// Text rows `[0, text_len)` followed by GC rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub text: Vec<Vec<f64>>,
    pub geo: Vec<Vec<f64>>,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.text.len() + self.geo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cls(&self) -> &[f64] {
        &self.text[0]
    }
}

impl InteractionModel {
    pub fn register(store: &mut ParameterStore, cfg: InteractionConfig) -> Result<Self> {
        let h = cfg.trunk.hidden;
        if cfg.vocab_size == 0 {
            return Err(Error::InvalidConfig("empty text vocabulary"));
        }
        Ok(Self {
            word: store.add_normal("mm.word", &[cfg.vocab_size, h])?,
            position: store.add_normal("mm.position", &[cfg.trunk.max_seq, h])?,
            segment: store.add_normal("mm.segment", &[2, h])?,
            discriminator: store.add_normal("mm.discriminator", &[2, h])?,
            gc_proj: Linear::register(store, "mm.gc_proj", cfg.geo_hidden, h)?,
            input_norm: Norm::register(store, "mm.input_norm", h)?,
            trunk: Transformer::register(store, "mm.trunk", cfg.trunk)?,
            mlm_head: Linear::register(store, "mm.mlm", h, cfg.vocab_size)?,
            mgm_heads: (0..FAMILIES)
                .map(|f| Linear::register(store, &format!("mm.mgm.{}", FAMILY_NAMES[f]), h, cfg.family_sizes[f]))
                .collect::<Result<Vec<_>>>()?,
            sim_hidden: Linear::register(store, "mm.sim.hidden", h, h)?,
            sim_out: Linear::register(store, "mm.sim.out", h, 1)?,
            cfg,
        })
    }

    pub fn config(&self) -> &InteractionConfig {
        &self.cfg
    }

    pub fn hidden(&self) -> usize {
        self.cfg.trunk.hidden
    }

    pub fn discriminator(&self) -> ParamId {
        self.discriminator
    }

    pub fn mlm_head(&self) -> Linear {
        self.mlm_head
    }

    pub fn mgm_head(&self, family: usize) -> Linear {
        self.mgm_heads[family]
    }

    /// Runs the trunk over `tokens` (with per-token segment ids) followed by
    /// each GC segment. Text tokens get word, position and segment
    /// embeddings; GC rows get the projected encoder output plus the
    /// discriminator row of their role.
    pub fn forward(
        &self,
        g: &mut Graph,
        tokens: &[u32],
        segments: &[usize],
        gcs: &[(&GcVectors, Role)],
    ) -> Result<NodeId> {
        let total = tokens.len() + gcs.iter().map(|(v, _)| v.len()).sum::<usize>();
        if total > self.cfg.trunk.max_seq {
            return Err(Error::SequenceTooLong {
                len: total,
                max: self.cfg.trunk.max_seq,
            });
        }
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let w = g.gather(self.word, &ids)?;
        let p = g.gather(self.position, &positions)?;
        let s = g.gather(self.segment, segments)?;
        let x = g.add(w, p);
        let mut parts = vec![g.add(x, s)];
        for (v, role) in gcs {
            if v.is_empty() {
                continue;
            }
            if v.width() != self.cfg.geo_hidden {
                return Err(Error::ShapeMismatch {
                    expected: "GC vectors of the geographic encoder width",
                });
            }
            let raw = g.input(v.len(), v.width(), v.data().to_vec());
            let proj = self.gc_proj.forward(g, raw);
            let d = g.gather(self.discriminator, &vec![role.index(); v.len()])?;
            parts.push(g.add(proj, d));
        }
        let x = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        let x = self.input_norm.forward(g, x);
        self.trunk.forward(g, x, None)
    }

    /// `[CLS] tokens [SEP]` plus an optional GC segment; returns the CLS row.
    pub fn tower(&self, g: &mut Graph, tokens: &[u32], gc: Option<&GcVectors>, role: Role) -> Result<NodeId> {
        let seq = wrap_single(tokens);
        let segs = vec![0; seq.len()];
        let gcs: Vec<(&GcVectors, Role)> = gc.map(|v| (v, role)).into_iter().collect();
        let out = self.forward(g, &seq, &segs, &gcs)?;
        Ok(g.slice_rows(out, 0, 1))
    }

    /// `[CLS] q [SEP] p [SEP]`, then query GC and POI GC segments; returns
    /// the 1×1 relevance logit from the similarity MLP over CLS.
    pub fn cross_logit(
        &self,
        g: &mut Graph,
        query: &[u32],
        poi: &[u32],
        query_gc: Option<&GcVectors>,
        poi_gc: Option<&GcVectors>,
    ) -> Result<NodeId> {
        let mut seq = Vec::with_capacity(query.len() + poi.len() + 3);
        seq.push(CLS);
        seq.extend_from_slice(query);
        seq.push(SEP);
        let first = seq.len();
        seq.extend_from_slice(poi);
        seq.push(SEP);
        let segs: Vec<usize> = (0..seq.len()).map(|i| usize::from(i >= first)).collect();
        let mut gcs = Vec::with_capacity(2);
        if let Some(v) = query_gc {
            gcs.push((v, Role::Query));
        }
        if let Some(v) = poi_gc {
            gcs.push((v, Role::Poi));
        }
        let out = self.forward(g, &seq, &segs, &gcs)?;
        let cls = g.slice_rows(out, 0, 1);
        let h = self.sim_hidden.forward(g, cls);
        let h = g.gelu(h);
        Ok(self.sim_out.forward(g, h))
    }
}

pub(crate) fn wrap_single(tokens: &[u32]) -> Vec<u32> {
    let mut seq = Vec::with_capacity(tokens.len() + 2);
    seq.push(CLS);
    seq.extend_from_slice(tokens);
    seq.push(SEP);
    seq
}

/// Hidden states for `[CLS] tokens [SEP]` followed by the POI-role GC
/// segment when `gc` is given.
pub fn multimodal_forward(
    store: &ParameterStore,
    model: &InteractionModel,
    tokens: &[u32],
    gc: Option<&GcVectors>,
) -> Result<EncoderOutput> {
    let seq = wrap_single(tokens);
    let segs = vec![0; seq.len()];
    let gcs: Vec<(&GcVectors, Role)> = gc.map(|v| (v, Role::Poi)).into_iter().collect();
    let mut g = Graph::new(store);
    let out = model.forward(&mut g, &seq, &segs, &gcs)?;
    let h = model.hidden();
    let mut rows: Vec<Vec<f64>> = g.value(out).chunks(h).map(<[f64]>::to_vec).collect();
    let geo = rows.split_off(seq.len());
    Ok(EncoderOutput { text: rows, geo })
}

/// A text plus optional GC, scored as a query or a POI.
#[derive(Debug, Clone, Copy)]
pub struct PairExample<'a> {
    pub tokens: &'a [u32],
    pub gc: Option<&'a GcVectors>,
    pub role: Role,
}

/// CLS vector of one tower.
pub fn tower_vector(store: &ParameterStore, model: &InteractionModel, x: PairExample) -> Result<Vec<f64>> {
    let mut g = Graph::new(store);
    let cls = model.tower(&mut g, x.tokens, x.gc, x.role)?;
    Ok(g.value(cls).to_vec())
}

/// Cosine between independently encoded query and POI CLS vectors.
pub fn bi_score(store: &ParameterStore, model: &InteractionModel, query: PairExample, poi: PairExample) -> Result<f64> {
    let q = tower_vector(store, model, query)?;
    let p = tower_vector(store, model, poi)?;
    Ok(cosine(&q, &p))
}

pub fn cross_score(store: &ParameterStore, model: &InteractionModel, query: PairExample, poi: PairExample) -> Result<f64> {
    let mut g = Graph::new(store);
    let s = model.cross_logit(&mut g, query.tokens, poi.tokens, query.gc, poi.gc)?;
    Ok(g.scalar(s))
}
