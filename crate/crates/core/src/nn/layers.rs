use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParameterStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_seq: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::InvalidConfig("hidden must be a positive multiple of heads"));
        }
        if self.ffn_mult == 0 || self.max_seq == 0 {
            return Err(Error::InvalidConfig("ffn_mult and max_seq must be positive"));
        }
        Ok(())
    }
}

/// `x · W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn register(store: &mut ParameterStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            w: store.add_normal(&format!("{name}.w"), &[fan_in, fan_out])?,
            b: store.add_zeros(&format!("{name}.b"), &[1, fan_out])?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn register(store: &mut ParameterStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_ones(&format!("{name}.gamma"), &[1, width])?,
            beta: store.add_zeros(&format!("{name}.beta"), &[1, width])?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    qkv: Linear,
    out: Linear,
    ln1: Norm,
    ffn_in: Linear,
    ffn_out: Linear,
    ln2: Norm,
}

/// Post-norm bidirectional transformer encoder.
#[derive(Debug, Clone)]
pub struct Transformer {
    cfg: TransformerConfig,
    blocks: Vec<Block>,
}

impl Transformer {
    pub fn register(store: &mut ParameterStore, prefix: &str, cfg: TransformerConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let blocks = (0..cfg.layers)
            .map(|i| {
                let p = format!("{prefix}.layer{i}");
                Ok(Block {
                    qkv: Linear::register(store, &format!("{p}.attn.qkv"), h, 3 * h)?,
                    out: Linear::register(store, &format!("{p}.attn.out"), h, h)?,
                    ln1: Norm::register(store, &format!("{p}.ln1"), h)?,
                    ffn_in: Linear::register(store, &format!("{p}.ffn.in"), h, cfg.ffn_mult * h)?,
                    ffn_out: Linear::register(store, &format!("{p}.ffn.out"), cfg.ffn_mult * h, h)?,
                    ln2: Norm::register(store, &format!("{p}.ln2"), h)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg, blocks })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    /// Encodes an `L×hidden` sequence. `attention_mask[i] == false` marks a
    /// position that neither attends nor is attended to; its attention
    /// output is zero.
    pub fn forward(&self, g: &mut Graph, x: NodeId, attention_mask: Option<&[bool]>) -> Result<NodeId> {
        let (len, width) = g.shape(x);
        if len > self.cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len,
                max: self.cfg.max_seq,
            });
        }
        assert_eq!(width, self.cfg.hidden, "input width");
        let allowed = attention_mask.map(|m| {
            assert_eq!(m.len(), len, "mask length");
            let mut a = vec![false; len * len];
            for i in 0..len {
                for j in 0..len {
                    a[i * len + j] = m[i] && m[j];
                }
            }
            a
        });
        let mut h = x;
        for block in &self.blocks {
            h = self.block(g, block, h, allowed.as_deref());
        }
        Ok(h)
    }

    fn block(&self, g: &mut Graph, b: &Block, x: NodeId, allowed: Option<&[bool]>) -> NodeId {
        let h = self.cfg.hidden;
        let d = h / self.cfg.heads;
        let scale = 1.0 / libm::sqrt(d as f64);
        let qkv = b.qkv.forward(g, x);
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for head in 0..self.cfg.heads {
            let q = g.slice_cols(qkv, head * d, d);
            let k = g.slice_cols(qkv, h + head * d, d);
            let v = g.slice_cols(qkv, 2 * h + head * d, d);
            let scores = g.matmul_t(q, k);
            let scores = g.scale(scores, scale);
            let probs = g.softmax(scores, allowed);
            heads.push(g.matmul(probs, v));
        }
        let attn = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)
        };
        let attn = b.out.forward(g, attn);
        let res = g.add(x, attn);
        let h1 = b.ln1.forward(g, res);
        let f = b.ffn_in.forward(g, h1);
        let f = g.gelu(f);
        let f = b.ffn_out.forward(g, f);
        let res = g.add(h1, f);
        b.ln2.forward(g, res)
    }
}

/// Runs a transformer over raw vectors. Convenience wrapper around
/// [`Transformer::forward`] for callers without their own graph.
pub fn transformer_encode(
    store: &ParameterStore,
    trunk: &Transformer,
    inputs: &[Vec<f64>],
    attention_mask: Option<&[bool]>,
) -> Result<Vec<Vec<f64>>> {
    let h = trunk.config().hidden;
    let mut g = Graph::new(store);
    let flat: Vec<f64> = inputs.iter().flat_map(|v| v.iter().copied()).collect();
    let x = g.input(inputs.len(), h, flat);
    let y = trunk.forward(&mut g, x, attention_mask)?;
    Ok(g.value(y).chunks(h).map(|c| c.to_vec()).collect())
}
